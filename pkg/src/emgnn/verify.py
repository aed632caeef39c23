"""Self-verification suites: finite-difference gradient checks for every
registered op (plus the whole forward pass), and brute-force equivalence
checks for the discrete MRF machinery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import data as D
from . import mrf as M
from .config import RunConfig
from .training import Model, vocab_from_dataset

PRIMITIVE_TOL = 1e-6
END_TO_END_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _gc(name, f, inputs, tol, exclude=None, min_magnitude=0.0):
    err = ad.grad_check(f, inputs, exclude=exclude, min_magnitude=min_magnitude)
    return CheckResult(name, err < tol, f"max rel err {err:.3e} (tol {tol:.0e})")


def gradcheck_suite(seeds=range(10)) -> list[CheckResult]:
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        n, m = 3, 4

        x = ad.Tensor.param(rng.normal(size=n))
        w = ad.Tensor.param(rng.normal(size=(m, n)))
        b = ad.Tensor.param(rng.normal(size=m))
        results.append(_gc(f"linear[{seed}]",
                           lambda: ad.tsum(ad.linear(x, w, b)), [x, w, b],
                           PRIMITIVE_TOL))

        # keep coordinates away from the relu kink
        xr = ad.Tensor.param(np.where(np.abs(rng.normal(size=6)) < 1e-3, 0.5,
                                      rng.normal(size=6)))
        results.append(_gc(f"relu[{seed}]", lambda: ad.tsum(ad.relu(xr)), [xr],
                           PRIMITIVE_TOL,
                           exclude=lambda ti, ci: abs(xr.values.reshape(-1)[ci]) < 1e-3))

        xs = ad.Tensor.param(rng.normal(size=5))
        results.append(_gc(f"sigmoid[{seed}]", lambda: ad.tsum(ad.sigmoid(xs)),
                           [xs], PRIMITIVE_TOL))
        xt = ad.Tensor.param(rng.normal(size=5))
        results.append(_gc(f"tanh[{seed}]", lambda: ad.tsum(ad.tanh(xt)),
                           [xt], PRIMITIVE_TOL))

        xm = ad.Tensor.param(rng.normal(size=5))
        probe = ad.Tensor.const(rng.normal(size=5))
        results.append(_gc(f"softmax[{seed}]",
                           lambda: ad.dot(ad.softmax(xm), probe), [xm],
                           PRIMITIVE_TOL))

        a = ad.Tensor.param(rng.normal(size=4))
        c = ad.Tensor.param(rng.normal(size=4))
        results.append(_gc(f"dot[{seed}]", lambda: ad.dot(a, c), [a, c],
                           PRIMITIVE_TOL))
        results.append(_gc(f"add_mul[{seed}]",
                           lambda: ad.tsum(ad.mul(ad.add(a, c), c)), [a, c],
                           PRIMITIVE_TOL))

        sc = ad.Tensor.param(rng.normal(size=()))
        results.append(_gc(f"scale[{seed}]",
                           lambda: ad.tsum(ad.scale(sc, a)), [sc, a],
                           PRIMITIVE_TOL))

        parts = [ad.Tensor.param(rng.normal(size=())) for _ in range(3)]
        results.append(_gc(f"stack_get[{seed}]",
                           lambda: ad.get(ad.softmax(ad.stack(parts)), 1), parts,
                           PRIMITIVE_TOL))

        results.append(_gc(f"concat[{seed}]",
                           lambda: ad.tsum(ad.relu(ad.concat(a, c))), [a, c],
                           PRIMITIVE_TOL,
                           exclude=lambda ti, ci: True if abs(
                               [a, c][ti].values.reshape(-1)[ci]) < 1e-3 else False))

        e = ad.Tensor.param(rng.normal(size=(5, 3)))
        results.append(_gc(f"rows[{seed}]",
                           lambda: ad.tsum(ad.rows(e, [1, 2, 1])), [e],
                           PRIMITIVE_TOL))

        wv = ad.Tensor.param(rng.normal(size=3))
        hs = [ad.Tensor.param(rng.normal(size=4)) for _ in range(3)]
        results.append(_gc(f"weighted_sum[{seed}]",
                           lambda: ad.tsum(ad.weighted_sum(wv, hs)), [wv] + hs,
                           PRIMITIVE_TOL))

        h = ad.Tensor.param(rng.normal(size=4))
        mm = ad.Tensor.param(rng.normal(size=4))
        p = ad.GruParams.init(4, 4, rng)
        # the gate composition can cancel to gradients ~1e-6, below the
        # central-difference noise floor; such coordinates are held to
        # absolute agreement instead of the relative tolerance
        results.append(_gc(f"gru_cell[{seed}]",
                           lambda: ad.tsum(ad.gru_cell(h, mm, p)),
                           [h, mm] + p.tensors(), PRIMITIVE_TOL,
                           min_magnitude=1e-5))

        hb = ad.Tensor.param(rng.normal(size=(3, 4)))
        mb = ad.Tensor.param(rng.normal(size=(3, 4)))
        results.append(_gc(f"gru_cell_batch[{seed}]",
                           lambda: ad.tsum(ad.gru_cell(hb, mb, p)),
                           [hb, mb] + p.tensors(), PRIMITIVE_TOL,
                           min_magnitude=1e-5))

        lg = ad.Tensor.param(rng.normal(size=6))
        results.append(_gc(f"cross_entropy[{seed}]",
                           lambda: ad.cross_entropy(lg, 2), [lg],
                           PRIMITIVE_TOL))

        results.append(end_to_end_gradcheck(seed))
    return results


def _tiny_model(seed: int) -> tuple[Model, D.DialogDataset]:
    spec = D.SyntheticSpec(n_dialogs=1, n_rounds=2, k_options=3,
                           n_attributes=6, seed=seed)
    ds = D.gen_synthetic(spec)
    cfg = RunConfig(dim=4, embed_dim=4, fc_dim=4, outer_iters=2, inner_steps=1,
                    k_options=3, epochs=1, batch_size=2, seed=seed)
    rng = np.random.default_rng(seed)
    model = Model.init(cfg, vocab_from_dataset(ds), rng)
    return model, ds


def end_to_end_gradcheck(seed: int = 0) -> CheckResult:
    """Loss through encode -> EM inference -> option scoring, vs central
    differences over every trainable parameter."""
    model, ds = _tiny_model(seed)
    view = D.model_view(ds, 0, 1)
    params = model.params()
    inputs = [params[k] for k in sorted(params)]
    err = ad.grad_check(lambda: model.forward(view).loss, inputs, step=1e-5,
                        min_magnitude=1e-6)
    return CheckResult(f"end_to_end[{seed}]", err < END_TO_END_TOL,
                       f"max rel err {err:.3e} (tol {END_TO_END_TOL:.0e})")


def mrf_suite(n_instances: int = 100) -> list[CheckResult]:
    results = []
    matches = 0
    for seed in range(n_instances):
        rng = np.random.default_rng(1000 + seed)
        inst = M.random_mrf(rng, n_nodes=6, max_card=4, tree=True)
        n_obs = int(rng.integers(1, 4))
        obs_nodes = rng.choice(6, size=n_obs, replace=False)
        observed = M.Assignment.partial(6, {
            int(i): int(rng.integers(inst.cardinalities[int(i)])) for i in obs_nodes})
        bp = M.max_product_bp(inst, observed, max_iters=50)
        bf = M.map_bruteforce(inst, observed)
        if np.array_equal(bp.assignment.states, bf.states):
            matches += 1
    results.append(CheckResult("bp_tree_exactness",
                               matches == n_instances,
                               f"{matches}/{n_instances} tree MAPs match brute force"))

    ok = True
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(2000 + seed)
        inst = M.random_mrf(rng, n_nodes=4, max_card=3)
        total = float(M.joint_prob_bruteforce(inst).sum())
        worst = max(worst, abs(total - 1.0))
        ok = ok and abs(total - 1.0) <= 1e-12
    results.append(CheckResult("joint_normalization", ok,
                               f"max |sum-1| = {worst:.2e} over 50 models"))

    mono = True
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        inst = M.random_mrf(rng, n_nodes=5, max_card=3)
        observed = M.Assignment.partial(5, {0: 0, 1: 0})
        res = M.em_fit(inst, observed, outer_iters=10)
        diffs = np.diff(res.objective_trace)
        mono = mono and bool(np.all(diffs >= -1e-9))
    results.append(CheckResult("em_monotonicity", mono,
                               "surrogate objective non-decreasing over 10 outer iters"
                               " on 20 instances"))
    return results


def run_suite(name: str) -> tuple[list[CheckResult], bool]:
    if name == "gradcheck":
        results = gradcheck_suite()
    elif name == "mrf":
        results = mrf_suite()
    elif name == "all":
        results = gradcheck_suite() + mrf_suite()
    else:
        raise ValueError(f"unknown suite {name!r}")
    return results, all(r.passed for r in results)
