"""emgnn: structure inference on partially observed dialog graphs.

Two complementary engines share one formulation:

* ``emgnn.mrf`` — exact, enumeration-verifiable EM / max-product belief
  propagation on small discrete weighted MRFs.
* ``emgnn.gnn`` + ``emgnn.encoder`` + ``emgnn.training`` — a
  differentiable GNN that emulates the same EM loop end-to-end on
  dialog-style retrieval tasks, built on the tape autodiff in
  ``emgnn.autodiff``.
"""

__version__ = "0.1.0"
