"""Discrete weighted MRFs: exact enumeration, max-product BP, and EM.

Probabilities follow p(v | W) = exp(-sum_i w_i * phi_u(v_i)
- sum_{i<j} w_ij * phi_p(v_i, v_j)) / Z, with edge and node weights in
[0, 1].  BP factors are exp(-w * phi), i.e. potentials live in the
exponent; messages are kept max-normalized.  Everything here is small
enough to verify by full enumeration.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MAX_ENUM_STATES = 1_000_000


class StateSpaceTooLarge(ValueError):
    pass


@dataclass
class DiscreteMrf:
    cardinalities: list[int]
    unary: list[np.ndarray]                       # per node, shape (card_i,)
    edges: list[tuple[int, int]]                  # i < j
    pairwise: dict[tuple[int, int], np.ndarray]   # (i, j) -> (card_i, card_j)
    edge_weights: np.ndarray                      # (n, n) symmetric, zero diag, in [0, 1]
    node_weights: np.ndarray                      # (n,), in [0, 1]

    @property
    def n_nodes(self) -> int:
        return len(self.cardinalities)

    def __post_init__(self):
        n = self.n_nodes
        self.unary = [np.asarray(u, dtype=np.float64) for u in self.unary]
        self.edges = [tuple(sorted(e)) for e in self.edges]
        self.pairwise = {tuple(sorted(k)): np.asarray(t, dtype=np.float64)
                         for k, t in self.pairwise.items()}
        self.edge_weights = np.clip(np.asarray(self.edge_weights, dtype=np.float64), 0.0, 1.0)
        np.fill_diagonal(self.edge_weights, 0.0)
        self.edge_weights = (self.edge_weights + self.edge_weights.T) / 2.0
        self.node_weights = np.clip(np.asarray(self.node_weights, dtype=np.float64), 0.0, 1.0)
        for i, u in enumerate(self.unary):
            if u.shape != (self.cardinalities[i],):
                raise ValueError(f"unary table of node {i} has shape {u.shape}, "
                                 f"expected ({self.cardinalities[i]},)")
            if not np.all(np.isfinite(u)):
                raise ValueError(f"unary table of node {i} is not finite")
        for (i, j) in self.edges:
            t = self.pairwise[(i, j)]
            want = (self.cardinalities[i], self.cardinalities[j])
            if t.shape != want:
                raise ValueError(f"pairwise table of edge ({i},{j}) has shape {t.shape}, "
                                 f"expected {want}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"pairwise table of edge ({i},{j}) is not finite")
        if self.edge_weights.shape != (n, n):
            raise ValueError(f"edge weight matrix has shape {self.edge_weights.shape}, "
                             f"expected ({n},{n})")

    def neighbors(self, i: int) -> list[int]:
        return sorted({j for (a, b) in self.edges for j in (a, b) if i in (a, b) and j != i})

    def copy(self) -> "DiscreteMrf":
        return DiscreteMrf(
            cardinalities=list(self.cardinalities),
            unary=[u.copy() for u in self.unary],
            edges=list(self.edges),
            pairwise={k: t.copy() for k, t in self.pairwise.items()},
            edge_weights=self.edge_weights.copy(),
            node_weights=self.node_weights.copy(),
        )


@dataclass
class Assignment:
    states: np.ndarray            # int, -1 allowed for unobserved slots
    observed: np.ndarray          # bool mask; True = observed (x), False = unobserved (z)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.observed = np.asarray(self.observed, dtype=bool)

    @staticmethod
    def full(states) -> "Assignment":
        states = np.asarray(states, dtype=np.int64)
        return Assignment(states, np.ones(len(states), dtype=bool))

    @staticmethod
    def partial(n: int, observed: dict[int, int]) -> "Assignment":
        states = -np.ones(n, dtype=np.int64)
        mask = np.zeros(n, dtype=bool)
        for i, s in observed.items():
            states[i] = s
            mask[i] = True
        return Assignment(states, mask)

    @property
    def is_full(self) -> bool:
        return bool(self.observed.all())


def energy(mrf: DiscreteMrf, a: Assignment) -> float:
    """Weighted energy of a full assignment; p(v|W) is prop. to exp(-energy)."""
    s = a.states
    e = 0.0
    for i in range(mrf.n_nodes):
        e += mrf.node_weights[i] * mrf.unary[i][s[i]]
    for (i, j) in mrf.edges:
        e += mrf.edge_weights[i, j] * mrf.pairwise[(i, j)][s[i], s[j]]
    return float(e)


def _check_enum_size(cards) -> None:
    total = 1
    for c in cards:
        total *= c
        if total > MAX_ENUM_STATES:
            raise StateSpaceTooLarge(f"state space exceeds {MAX_ENUM_STATES} assignments")


def energy_table(mrf: DiscreteMrf) -> np.ndarray:
    """Energy of every assignment, shape = cardinalities (vectorized)."""
    _check_enum_size(mrf.cardinalities)
    n = mrf.n_nodes
    e = np.zeros(tuple(mrf.cardinalities))
    for i in range(n):
        shape = [1] * n
        shape[i] = mrf.cardinalities[i]
        e = e + mrf.node_weights[i] * mrf.unary[i].reshape(shape)
    for (i, j) in mrf.edges:
        shape = [1] * n
        shape[i] = mrf.cardinalities[i]
        shape[j] = mrf.cardinalities[j]
        e = e + mrf.edge_weights[i, j] * mrf.pairwise[(i, j)].reshape(shape)
    return e


def joint_prob_bruteforce(mrf: DiscreteMrf) -> np.ndarray:
    """Full joint table by enumeration, shape = cardinalities, sums to 1."""
    e = energy_table(mrf)
    p = np.exp(-(e - e.min()))
    return p / p.sum()


def log_likelihood(mrf: DiscreteMrf, a: Assignment) -> float:
    """log p(v | W) for a full assignment, normalizer by enumeration."""
    e = energy_table(mrf)
    shift = e.min()
    log_z = math.log(np.sum(np.exp(-(e - shift)))) - shift
    return -energy(mrf, a) - log_z


def map_bruteforce(mrf: DiscreteMrf, observed: Assignment) -> Assignment:
    """Exact MAP completion; ties go to the lexicographically smallest states."""
    free = [i for i in range(mrf.n_nodes) if not observed.observed[i]]
    _check_enum_size([mrf.cardinalities[i] for i in free])
    e = energy_table(mrf)
    index = tuple(
        int(observed.states[i]) if observed.observed[i] else slice(None)
        for i in range(mrf.n_nodes)
    )
    sub = e[index]
    if free:
        # np.argmin returns the first minimum in C order = lexicographic
        flat = int(np.argmin(sub))
        coords = np.unravel_index(flat, sub.shape)
    else:
        coords = ()
    states = observed.states.copy()
    for k, i in enumerate(free):
        states[i] = coords[k]
    return Assignment.full(states)


@dataclass
class BpResult:
    beliefs: dict[int, np.ndarray]
    assignment: Assignment
    converged: bool
    iterations: int


def max_product_bp(mrf: DiscreteMrf, observed: Assignment,
                   max_iters: int = 50, tol: float = 1e-9) -> BpResult:
    """Max-product BP with observed nodes clamped.

    Messages are computed only into unobserved nodes (from any sender),
    updated synchronously and max-normalized.  The decoded assignment is
    the per-node belief argmax with first-index tie-break.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    n = mrf.n_nodes
    obs = observed.observed
    unobserved = [i for i in range(n) if not obs[i]]
    neigh = {i: mrf.neighbors(i) for i in range(n)}

    def pair_factor(i, j):
        # factor table oriented (states_i, states_j)
        a, b = min(i, j), max(i, j)
        t = mrf.pairwise[(a, b)]
        w = mrf.edge_weights[a, b]
        f = np.exp(-w * t)
        return f if (i, j) == (a, b) else f.T

    unary_factor = [np.exp(-mrf.node_weights[i] * mrf.unary[i]) for i in range(n)]

    # directed messages (j -> i), receiver i unobserved
    msgs: dict[tuple[int, int], np.ndarray] = {}
    for i in unobserved:
        for j in neigh[i]:
            msgs[(j, i)] = np.ones(mrf.cardinalities[i])

    converged = False
    iters = 0
    for it in range(max_iters):
        iters = it + 1
        new_msgs = {}
        max_delta = 0.0
        for (j, i) in msgs:
            f = pair_factor(i, j)  # (card_i, card_j)
            if obs[j]:
                m = f[:, observed.states[j]].copy()
            else:
                prod = unary_factor[j].copy()
                for k in neigh[j]:
                    if k != i:
                        prod = prod * msgs[(k, j)]
                m = np.max(f * prod[None, :], axis=1)
            peak = m.max()
            if peak > 0:
                m = m / peak
            new_msgs[(j, i)] = m
            max_delta = max(max_delta, float(np.abs(m - msgs[(j, i)]).max()))
        msgs = new_msgs
        if max_delta < tol:
            converged = True
            break

    beliefs: dict[int, np.ndarray] = {}
    states = observed.states.copy()
    for i in unobserved:
        b = unary_factor[i].copy()
        for j in neigh[i]:
            b = b * msgs[(j, i)]
        total = b.sum()
        if total > 0:
            b = b / total
        beliefs[i] = b
        states[i] = int(np.argmax(b))
    return BpResult(beliefs, Assignment.full(states), converged, iters)


def mstep_weights(mrf: DiscreteMrf, completed: Assignment, steps: int = 10,
                  lr: float = 0.5, fit_unary: bool = True) -> DiscreteMrf:
    """Projected gradient ascent on log p(x, z* | W) over the weights.

    The exact gradient uses the enumerated model expectation; each step
    backtracks (halving lr) until the log-likelihood does not decrease.
    """
    if not completed.is_full:
        raise ValueError("mstep_weights requires a full assignment")
    cur = mrf.copy()
    s = completed.states
    for _ in range(steps):
        p = joint_prob_bruteforce(cur)
        ll_cur = log_likelihood(cur, completed)
        n = cur.n_nodes
        grad_edge = {}
        for (i, j) in cur.edges:
            axes = tuple(k for k in range(n) if k not in (i, j))
            marg = p.sum(axis=axes)  # (card_i, card_j), axes keep order i<j
            t = cur.pairwise[(i, j)]
            grad_edge[(i, j)] = -t[s[i], s[j]] + float(np.sum(marg * t))
        grad_node = np.zeros(n)
        if fit_unary:
            for i in range(n):
                axes = tuple(k for k in range(n) if k != i)
                marg = p.sum(axis=axes)
                grad_node[i] = -cur.unary[i][s[i]] + float(np.dot(marg, cur.unary[i]))

        step_lr = lr
        improved = False
        while step_lr > 1e-12:
            trial = cur.copy()
            for (i, j), g in grad_edge.items():
                w = float(np.clip(trial.edge_weights[i, j] + step_lr * g, 0.0, 1.0))
                trial.edge_weights[i, j] = w
                trial.edge_weights[j, i] = w
            if fit_unary:
                trial.node_weights = np.clip(cur.node_weights + step_lr * grad_node, 0.0, 1.0)
            if log_likelihood(trial, completed) >= ll_cur - 1e-12:
                cur = trial
                improved = True
                break
            step_lr /= 2.0
        if not improved:
            break
    return cur


@dataclass
class EmResult:
    mrf: DiscreteMrf
    completion: Assignment
    objective_trace: list[float] = field(default_factory=list)


def em_fit(mrf: DiscreteMrf, observed: Assignment, outer_iters: int,
           mstep_steps: int = 10, mstep_lr: float = 0.5,
           bp_iters: int = 50, fit_unary: bool = True) -> EmResult:
    """Alternate max-product BP (E-step) and weight ascent (M-step).

    The surrogate objective log p(x, z* | W) is guaranteed non-decreasing:
    a BP completion is only accepted if it does not raise the energy of
    the current one, and the M-step backtracks.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    cur = mrf.copy()
    completion: Optional[Assignment] = None
    trace: list[float] = []
    for _ in range(outer_iters):
        candidate = max_product_bp(cur, observed, max_iters=bp_iters).assignment
        if completion is None or energy(cur, candidate) <= energy(cur, completion):
            completion = candidate
        cur = mstep_weights(cur, completion, steps=mstep_steps, lr=mstep_lr,
                            fit_unary=fit_unary)
        trace.append(log_likelihood(cur, completion))
    return EmResult(cur, completion, trace)


# ---------------------------------------------------------------------------
# JSON round trip


def to_json(mrf: DiscreteMrf) -> str:
    doc = {
        "cardinalities": list(mrf.cardinalities),
        "unary": [u.tolist() for u in mrf.unary],
        "pairwise": [
            {"i": i, "j": j, "table": mrf.pairwise[(i, j)].tolist()}
            for (i, j) in mrf.edges
        ],
        "weights": {
            "node": mrf.node_weights.tolist(),
            "edge": mrf.edge_weights.tolist(),
        },
    }
    return json.dumps(doc, indent=2)


def from_json(text: str) -> DiscreteMrf:
    doc = json.loads(text)
    edges = [(e["i"], e["j"]) for e in doc["pairwise"]]
    pairwise = {(e["i"], e["j"]): np.array(e["table"]) for e in doc["pairwise"]}
    return DiscreteMrf(
        cardinalities=list(doc["cardinalities"]),
        unary=[np.array(u) for u in doc["unary"]],
        edges=edges,
        pairwise=pairwise,
        edge_weights=np.array(doc["weights"]["edge"]),
        node_weights=np.array(doc["weights"]["node"]),
    )


def random_mrf(rng: np.random.Generator, n_nodes: int, max_card: int = 4,
               tree: bool = False, edge_prob: float = 0.6) -> DiscreteMrf:
    """Random instance with continuous potentials (ties measure-zero)."""
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n_nodes)]
    unary = [rng.normal(size=c) for c in cards]
    edges = []
    if tree:
        for i in range(1, n_nodes):
            j = int(rng.integers(0, i))
            edges.append((j, i))
    else:
        for i in range(n_nodes):
            for j in range(i + 1, n_nodes):
                if rng.random() < edge_prob:
                    edges.append((i, j))
    edges = [tuple(sorted(e)) for e in edges]
    pairwise = {(i, j): rng.normal(size=(cards[i], cards[j])) for (i, j) in edges}
    w = np.zeros((n_nodes, n_nodes))
    for (i, j) in edges:
        w[i, j] = w[j, i] = rng.uniform(0.2, 1.0)
    return DiscreteMrf(cards, unary, edges, pairwise, w, rng.uniform(0.2, 1.0, size=n_nodes))


def sample_bruteforce(mrf: DiscreteMrf, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw exact samples from the enumerated joint; shape (n, n_nodes)."""
    p = joint_prob_bruteforce(mrf)
    flat = p.reshape(-1)
    idx = rng.choice(flat.shape[0], size=n, p=flat)
    return np.stack(np.unravel_index(idx, p.shape), axis=1)
