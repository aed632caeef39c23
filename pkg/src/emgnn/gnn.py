"""Differentiable EM over dialog graphs.

A dialog at round t is a graph of t+1 nodes: caption, t-1 history QA
pairs, and one unobserved query node.  The M-step estimates soft edge
weights from a learned link function (dot product of fc-transformed
hidden states, softmax-normalized per receiver); the E-step runs S
steps of weighted message passing, updating only the unobserved node
through a GRU.  The whole forward pass stays on the autodiff tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import GruParams, Tensor


@dataclass
class GnnParams:
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    gru: GruParams

    @staticmethod
    def init(dim: int, fc_dim: int, rng: np.random.Generator) -> "GnnParams":
        bound = 1.0 / np.sqrt(dim)
        return GnnParams(
            fc1_w=Tensor.param(rng.uniform(-bound, bound, size=(fc_dim, dim))),
            fc1_b=Tensor.param(rng.uniform(-bound, bound, size=(fc_dim,))),
            fc2_w=Tensor.param(rng.uniform(-bound, bound, size=(fc_dim, fc_dim))),
            fc2_b=Tensor.param(rng.uniform(-bound, bound, size=(fc_dim,))),
            # the node-update cell starts near pass-through (write gate
            # open): the refined query state is then close to linear in the
            # aggregated message, so at the start of training the only way
            # to separate candidate answers is to weight the right senders
            # up — the link function learns before the update cell can
            # compensate by decoding blended messages
            gru=GruParams.init(dim, dim, rng, z_bias=2.0),
        )

    def named_tensors(self) -> dict[str, Tensor]:
        out = {
            "gnn.fc1.w": self.fc1_w, "gnn.fc1.b": self.fc1_b,
            "gnn.fc2.w": self.fc2_w, "gnn.fc2.b": self.fc2_b,
        }
        for name, t in zip(("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"),
                           self.gru.tensors()):
            out[f"gnn.gru.{name}"] = t
        return out


@dataclass
class DialogGraph:
    hidden: list[Tensor]                 # per-node hidden state, each (d,)
    observed: list[bool]                 # exactly one False (the query node)
    labels: list[str] = field(default_factory=list)
    raw: Optional[list[list[Optional[Tensor]]]] = None   # raw link weights, scalar tensors
    norm: Optional[list[Tensor]] = None  # per receiver: softmax over senders (index order, self excluded)

    def __post_init__(self):
        if sum(1 for o in self.observed if not o) != 1:
            raise ValueError("dialog graph must have exactly one unobserved node")
        if not self.labels:
            self.labels = [f"node{i}" for i in range(len(self.hidden))]

    @property
    def n_nodes(self) -> int:
        return len(self.hidden)

    @property
    def query_index(self) -> int:
        return self.observed.index(False)

    def senders(self, i: int) -> list[int]:
        return [j for j in range(self.n_nodes) if j != i]


def link_weights(g: DialogGraph, p: GnnParams) -> None:
    """M-step: raw w_ij = <fc(h_i), fc(h_j)> shared across directions,
    then per-receiver softmax over incoming edges."""
    n = g.n_nodes
    u = [ad.linear(ad.relu(ad.linear(h, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b)
         for h in g.hidden]
    raw: list[list[Optional[Tensor]]] = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            s = ad.dot(u[i], u[j])
            raw[i][j] = s
            raw[j][i] = s  # same tensor: exact symmetry
    g.raw = raw
    g.norm = [ad.softmax(ad.stack([raw[i][j] for j in g.senders(i)])) for i in range(n)]


def constant_weights(g: DialogGraph) -> None:
    """Ablation: every normalized incoming weight fixed at 1/(N-1)."""
    n = g.n_nodes
    g.raw = [[None if i == j else Tensor.const(1.0) for j in range(n)] for i in range(n)]
    g.norm = [Tensor.const(np.full(n - 1, 1.0 / (n - 1))) for _ in range(n)]


def aggregate_messages(g: DialogGraph) -> dict[int, Tensor]:
    """Weighted sum of neighbor states, for unobserved nodes only."""
    if g.norm is None:
        raise ValueError("edge weights not computed yet")
    out = {}
    for i in range(g.n_nodes):
        if not g.observed[i]:
            out[i] = ad.weighted_sum(g.norm[i], [g.hidden[j] for j in g.senders(i)])
    return out


def update_states(g: DialogGraph, p: GnnParams, steps: int) -> None:
    """E-step: S message-passing steps; observed states never change."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    for _ in range(steps):
        msgs = aggregate_messages(g)
        for i, m in msgs.items():
            g.hidden[i] = ad.gru_cell(g.hidden[i], m, p.gru)


def em_infer(g: DialogGraph, p: GnnParams, outer_iters: int, inner_steps: int,
             constant_graph: bool = False) -> DialogGraph:
    """outer_iters rounds of (link weights, then inner_steps of passing)."""
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    for _ in range(outer_iters):
        if constant_graph:
            constant_weights(g)
        else:
            link_weights(g, p)
        update_states(g, p, inner_steps)
    return g


def score_options(h_z: Tensor, options: Union[Tensor, Sequence[Tensor]]) -> tuple[Tensor, Tensor]:
    """Dot-product scores against each option embedding, plus softmax probs.

    ``options`` is either a (K, d) tensor or a list of (d,) tensors.
    Ranking convention: descending score, ties to the lower index.
    """
    if isinstance(options, Tensor):
        if options.values.ndim != 2 or options.values.shape[1] != h_z.values.shape[0]:
            raise ad.ShapeError(
                f"options {options.shape} incompatible with state {h_z.shape}")
        scores = ad.linear(h_z, options)
    else:
        scores = ad.stack([ad.dot(h_z, o) for o in options])
    return scores, ad.softmax(scores)


def rank_of(scores: np.ndarray, gt_index: int) -> int:
    """1-based rank of the ground truth; equal scores at a lower index win."""
    s = scores[gt_index]
    higher = int(np.sum(scores > s))
    tied_before = int(np.sum(scores[:gt_index] == s))
    return 1 + higher + tied_before


# ---------------------------------------------------------------------------
# structure export


def export_structure(g: DialogGraph) -> dict:
    if g.raw is None or g.norm is None:
        raise ValueError("edge weights not computed yet")
    n = g.n_nodes
    raw = [[0.0 if g.raw[i][j] is None else float(g.raw[i][j].values)
            for j in range(n)] for i in range(n)]
    norm = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for k, j in enumerate(g.senders(i)):
            norm[i][j] = float(g.norm[i].values[k])
    return {"nodes": list(g.labels), "raw": raw, "normalized": norm}


def structure_to_dot(doc: dict) -> str:
    """DOT digraph; edge opacity encodes the normalized incoming weight."""
    lines = ["digraph dialog {", "  rankdir=LR;"]
    for i, label in enumerate(doc["nodes"]):
        lines.append(f'  n{i} [label="{label}"];')
    norm = doc["normalized"]
    n = len(doc["nodes"])
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = norm[i][j]
            alpha = max(0, min(255, int(round(255 * w))))
            lines.append(
                f'  n{j} -> n{i} [color="#00aa00{alpha:02x}", '
                f'penwidth={1.0 + 3.0 * w:.4f}, label="{w:.4f}"];'
            )
    lines.append("}")
    return "\n".join(lines) + "\n"


def structure_to_json(doc: dict) -> str:
    return json.dumps(doc, indent=2)
