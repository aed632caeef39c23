"""Tests for the discrete MRF engine against enumeration oracles."""

import numpy as np
import pytest

from emgnn import mrf as M


def two_binary_nodes(w12=1.0):
    """phi_u = 0, phi_p = disagreement indicator."""
    return M.DiscreteMrf(
        cardinalities=[2, 2],
        unary=[np.zeros(2), np.zeros(2)],
        edges=[(0, 1)],
        pairwise={(0, 1): np.array([[0.0, 1.0], [1.0, 0.0]])},
        edge_weights=np.array([[0.0, w12], [w12, 0.0]]),
        node_weights=np.ones(2),
    )


def test_energy_closed_forms():
    m = two_binary_nodes()
    assert M.energy(m, M.Assignment.full([0, 0])) == 0.0
    assert M.energy(m, M.Assignment.full([0, 1])) == 1.0


def test_zero_weight_decouples_pair_term():
    rng = np.random.default_rng(0)
    m = M.random_mrf(rng, 3)
    m0 = m.copy()
    m0.edge_weights[:] = 0.0
    for _ in range(10):
        s = [int(rng.integers(c)) for c in m.cardinalities]
        a = M.Assignment.full(s)
        unary_only = sum(m.node_weights[i] * m.unary[i][s[i]] for i in range(3))
        assert abs(M.energy(m0, a) - unary_only) < 1e-12


def test_joint_prob_closed_form():
    # states (0,0),(1,1) have energy 0; (0,1),(1,0) have energy 1
    p = M.joint_prob_bruteforce(two_binary_nodes())
    expected = 1.0 / (2.0 + 2.0 * np.exp(-1.0))
    assert abs(p[0, 0] - expected) < 1e-12
    assert abs(expected - 0.36552928931500245) < 1e-15


def test_joint_prob_uniform_when_potentials_zero():
    m = two_binary_nodes()
    m.pairwise[(0, 1)] = np.zeros((2, 2))
    p = M.joint_prob_bruteforce(m)
    assert np.allclose(p, 0.25)


def test_joint_prob_normalizes_on_random_models():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        m = M.random_mrf(rng, 4, max_card=3)
        assert abs(M.joint_prob_bruteforce(m).sum() - 1.0) <= 1e-12


def test_state_space_guard():
    m = M.DiscreteMrf(
        cardinalities=[8] * 8, unary=[np.zeros(8)] * 8, edges=[],
        pairwise={}, edge_weights=np.zeros((8, 8)), node_weights=np.ones(8))
    with pytest.raises(M.StateSpaceTooLarge):
        M.joint_prob_bruteforce(m)


def test_map_smoothness_forces_agreement():
    m = two_binary_nodes()
    obs = M.Assignment.partial(2, {0: 0})
    assert np.array_equal(M.map_bruteforce(m, obs).states, [0, 0])
    obs = M.Assignment.partial(2, {0: 1})
    assert np.array_equal(M.map_bruteforce(m, obs).states, [1, 1])


def test_map_single_node_argmin_unary():
    m = M.DiscreteMrf([3], [np.array([2.0, -1.0, 0.5])], [], {},
                      np.zeros((1, 1)), np.ones(1))
    res = M.map_bruteforce(m, M.Assignment.partial(1, {}))
    assert res.states[0] == 1


def test_map_lexicographic_tiebreak():
    # all-zero potentials: every completion ties; smallest state vector wins
    m = M.DiscreteMrf([2, 3], [np.zeros(2), np.zeros(3)], [], {},
                      np.zeros((2, 2)), np.ones(2))
    res = M.map_bruteforce(m, M.Assignment.partial(2, {}))
    assert np.array_equal(res.states, [0, 0])


def test_bp_fully_observed_returns_observation():
    m = two_binary_nodes()
    obs = M.Assignment.full([1, 0])
    res = M.max_product_bp(m, obs)
    assert np.array_equal(res.assignment.states, [1, 0])


def test_bp_single_unobserved_isolated_node():
    rng = np.random.default_rng(1)
    unary = rng.normal(size=4)
    m = M.DiscreteMrf([4], [unary], [], {}, np.zeros((1, 1)),
                      np.array([0.7]))
    res = M.max_product_bp(m, M.Assignment.partial(1, {}))
    expected = np.exp(-0.7 * unary)
    expected /= expected.sum()
    assert np.allclose(res.beliefs[0], expected, atol=1e-12)
    assert res.assignment.states[0] == int(np.argmax(expected))
    bf = M.map_bruteforce(m, M.Assignment.partial(1, {}))
    assert np.array_equal(res.assignment.states, bf.states)


def test_bp_tree_exactness_sample():
    """Spot check here; the full 100-instance sweep runs in acceptance."""
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        m = M.random_mrf(rng, 6, max_card=4, tree=True)
        n_obs = int(rng.integers(1, 4))
        picked = rng.choice(6, size=n_obs, replace=False)
        obs = M.Assignment.partial(6, {int(i): int(rng.integers(m.cardinalities[int(i)]))
                                       for i in picked})
        bp = M.max_product_bp(m, obs, max_iters=50)
        bf = M.map_bruteforce(m, obs)
        assert np.array_equal(bp.assignment.states, bf.states), f"seed {seed}"


def test_message_normalization_does_not_change_argmax():
    """Compare the normalized run against a re-derivation from beliefs:
    the decoded argmax is invariant to per-message scaling."""
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        m = M.random_mrf(rng, 5, max_card=3, tree=True)
        obs = M.Assignment.partial(5, {0: 0})
        res = M.max_product_bp(m, obs)
        bf = M.map_bruteforce(m, obs)
        assert np.array_equal(res.assignment.states, bf.states)


def test_mstep_stationary_point():
    # uniform model: phi_p(v*) equals the expectation for the all-equal
    # table, so the gradient vanishes and W is unchanged
    m = two_binary_nodes(w12=0.5)
    m.pairwise[(0, 1)] = np.full((2, 2), 0.3)
    m.unary = [np.full(2, 0.1), np.full(2, 0.1)]
    fitted = M.mstep_weights(m, M.Assignment.full([0, 1]), steps=5)
    assert np.allclose(fitted.edge_weights, m.edge_weights, atol=1e-12)
    assert np.allclose(fitted.node_weights, m.node_weights, atol=1e-12)


def test_mstep_monotone_loglikelihood():
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        m = M.random_mrf(rng, 4, max_card=3)
        s = [int(rng.integers(c)) for c in m.cardinalities]
        a = M.Assignment.full(s)
        cur = m
        ll = M.log_likelihood(cur, a)
        for _ in range(5):
            cur = M.mstep_weights(cur, a, steps=10)
            ll_new = M.log_likelihood(cur, a)
            assert ll_new >= ll - 1e-9
            ll = ll_new


def test_mstep_recovers_absent_edge():
    """Data sampled with true w12 = 0: fitting drives the weight down."""
    rng = np.random.default_rng(7)
    truth = M.DiscreteMrf(
        cardinalities=[2, 2, 2],
        unary=[rng.normal(size=2) for _ in range(3)],
        edges=[(0, 1), (1, 2)],
        pairwise={(0, 1): rng.normal(size=(2, 2)) * 2,
                  (1, 2): rng.normal(size=(2, 2)) * 2},
        edge_weights=np.array([[0, 0.0, 0], [0.0, 0, 0.9], [0, 0.9, 0]]),
        node_weights=np.ones(3),
    )
    samples = M.sample_bruteforce(truth, rng, 500)
    start = truth.copy()
    start.edge_weights[0, 1] = start.edge_weights[1, 0] = 0.5
    fitted = start
    for s in samples[:200]:
        fitted = M.mstep_weights(fitted, M.Assignment.full(s), steps=1, lr=0.02)
    assert fitted.edge_weights[0, 1] < 0.1


def test_em_monotone_objective():
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        m = M.random_mrf(rng, 5, max_card=3)
        obs = M.Assignment.partial(5, {0: 0, 1: 0})
        res = M.em_fit(m, obs, outer_iters=10)
        diffs = np.diff(res.objective_trace)
        assert np.all(diffs >= -1e-9), f"seed {seed}: {res.objective_trace}"


def test_em_one_iteration_equals_manual_composition():
    rng = np.random.default_rng(8)
    m = M.random_mrf(rng, 4, max_card=3)
    obs = M.Assignment.partial(4, {0: 1})
    res = M.em_fit(m, obs, outer_iters=1)
    completion = M.max_product_bp(m, obs).assignment
    manual = M.mstep_weights(m, completion)
    assert np.allclose(res.mrf.edge_weights, manual.edge_weights)
    assert np.array_equal(res.completion.states, completion.states)


def test_em_fully_observed_reduces_to_msteps():
    rng = np.random.default_rng(9)
    m = M.random_mrf(rng, 3, max_card=3)
    full = M.Assignment.full([0, 1, 0])
    res = M.em_fit(m, full, outer_iters=3)
    manual = m.copy()
    for _ in range(3):
        manual = M.mstep_weights(manual, full)
    assert np.allclose(res.mrf.edge_weights, manual.edge_weights)
    assert np.array_equal(res.completion.states, full.states)


def test_json_round_trip_value_exact():
    rng = np.random.default_rng(10)
    m = M.random_mrf(rng, 4, max_card=3)
    back = M.from_json(M.to_json(m))
    assert back.cardinalities == m.cardinalities
    assert back.edges == m.edges
    for u1, u2 in zip(m.unary, back.unary):
        assert np.array_equal(u1, u2)
    for e in m.edges:
        assert np.array_equal(m.pairwise[e], back.pairwise[e])
    assert np.array_equal(m.edge_weights, back.edge_weights)
    assert np.array_equal(m.node_weights, back.node_weights)


def test_weights_clamped_and_symmetric_on_construction():
    m = M.DiscreteMrf(
        cardinalities=[2, 2],
        unary=[np.zeros(2), np.zeros(2)],
        edges=[(0, 1)],
        pairwise={(0, 1): np.zeros((2, 2))},
        edge_weights=np.array([[0.5, 2.0], [-1.0, 0.5]]),
        node_weights=np.array([1.5, -0.2]),
    )
    assert np.array_equal(m.edge_weights, m.edge_weights.T)
    assert np.all(np.diag(m.edge_weights) == 0)
    assert np.all((m.edge_weights >= 0) & (m.edge_weights <= 1))
    assert np.all((m.node_weights >= 0) & (m.node_weights <= 1))
