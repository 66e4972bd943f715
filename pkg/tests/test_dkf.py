import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkfnet import _kernels
from dkfnet.analysis import error_transition, noise_terms, sample_M
from dkfnet.dkf import (ConsensusParams, DkfNetwork, DkfNodeState, consensus_round, default_delta, error_vector,
                        frozen_gains, local_correct, local_gain_update, run_batch)
from dkfnet.graph import LinkFailureModel, build_graph, default_topology
from dkfnet.model import Plant, centralized_kf, paper5_plant, simulate, simulate_batch, solve_riccati
from dkfnet.pushsum import GainEstimate

from conftest import scalar_plant


def test_default_delta(topo):
    assert default_delta(topo) == 4.5


def test_params_validation(topo):
    with pytest.raises(ValueError):
        ConsensusParams(0.0, 1)
    with pytest.raises(ValueError):
        ConsensusParams(1.0, -1)
    with pytest.raises(ValueError):
        ConsensusParams.for_graph(topo, 1)  # 4.5 < rho(L) = 6.67
    with pytest.warns(UserWarning):
        assert ConsensusParams.for_graph(topo, 1, allow_small_delta=True).delta == 4.5
    assert ConsensusParams.for_graph(topo, 2, delta=7.0).gamma == 2


def test_scalar_local_gain_update():
    p = scalar_plant(a=0.0)
    s = DkfNodeState(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros(1), GainEstimate(np.eye(1), 1.0))
    P, K = local_gain_update(s, p, 0)
    assert P[0, 0] == pytest.approx(0.5) and K[0, 0] == pytest.approx(0.5)


def test_local_gain_converges_to_asymptotic(plant5, sol5):
    gains = frozen_gains(plant5, sol5)
    for i in (0, 4, 9):
        s = DkfNodeState(np.eye(4), None, np.zeros(4), np.zeros(4), GainEstimate(plant5.G, 10.0))
        for _ in range(300):
            P, K = local_gain_update(s, plant5, i)
            s = DkfNodeState(P, K, s.x_hat, s.z, s.gains)
        assert np.allclose(P, sol5.P_inf, atol=1e-10)
        assert np.allclose(K, gains[i], atol=1e-8)
        if i == 0:
            assert K.shape == (4, 0)


def test_local_correct_worked_case():
    p = scalar_plant(a=1.0)
    s = DkfNodeState(np.eye(1), np.array([[0.5]]), np.zeros(1), np.zeros(1))
    assert local_correct(s, np.array([2.0]), p, 0)[0] == pytest.approx(1.0)
    s0 = DkfNodeState(np.eye(1), np.zeros((1, 1)), np.array([3.0]), np.zeros(1))
    assert local_correct(s0, np.array([7.0]), scalar_plant(a=2.0), 0)[0] == 6.0


def test_consensus_round_cases(k2, topo):
    assert np.allclose(consensus_round(np.array([[0.0], [2.0]]), k2, 2.0), [[1.0], [1.0]])
    z = np.tile([1.0, -2.0], (10, 1))
    assert np.allclose(consensus_round(z, topo, 4.5), z)
    zr = np.random.default_rng(0).standard_normal((10, 4))
    assert np.array_equal(consensus_round(zr, topo.subgraph([False] * 17), 4.5), zr)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 1.0), st.floats(0.5, 10.0))
def test_consensus_linear_and_sum_preserving(seed, p, delta):
    g = default_topology()
    rng = np.random.default_rng(seed)
    z, w = rng.standard_normal((2, 10, 4))
    sub = g.subgraph(LinkFailureModel(g, p, seed).edge_mask(0, 0))
    a = consensus_round(z, sub, delta)
    assert np.allclose(a.sum(axis=0), z.sum(axis=0), atol=1e-12)
    assert np.allclose(consensus_round(z + w, sub, delta), a + consensus_round(w, sub, delta), atol=1e-12)


def test_error_vector_stacking():
    est = np.array([[1.0, 2.0], [0.0, 0.0]])
    e = error_vector(est, np.array([1.0, 2.0]))
    assert np.allclose(e.E, [0, 0, 1, 2]) and e.squared_norm == 5.0
    assert np.allclose(error_vector(np.array([[0.5, 1.0]]), np.array([1.0, 1.0])).E, [0.5, 0.0])


def test_gamma_zero_is_independent_local_filters(plant5, sol5, topo):
    tr = simulate(plant5, 20, np.random.default_rng(1))
    net = DkfNetwork(plant5, LinkFailureModel(topo, 1.0), ConsensusParams(4.5, 0), sol=sol5)
    est = net.run(tr.outputs)
    gains = frozen_gains(plant5, sol5)
    x = np.zeros(4)
    for t in range(20):
        pred = plant5.A @ x
        x = pred + gains[4] @ (tr.outputs[4][t + 1] - plant5.C[4] @ pred)
    assert np.allclose(est[-1, 4], x)
    assert np.allclose(est[-1, 0], np.linalg.matrix_power(plant5.A, 20) @ np.zeros(4))


def test_single_node_equals_centralized():
    p = Plant(paper5_plant().A, paper5_plant().Q, [np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])],
              [0.01 * np.eye(2)], np.zeros(4), np.eye(4))
    sol = solve_riccati(p)
    tr = simulate(p, 30, np.random.default_rng(2))
    g = build_graph(1, [])
    est = DkfNetwork(p, LinkFailureModel(g, 1.0), ConsensusParams(1.0, 3), sol=sol).run(tr.outputs)
    assert np.allclose(est[:, 0], centralized_kf(p, sol, tr.outputs, np.zeros(4)), atol=1e-12)


@pytest.mark.parametrize("p_beta,gamma", [(1.0, 2), (0.6, 3), (0.8, 1)])
def test_batch_matches_node_level(plant5, sol5, topo, p_beta, gamma):
    states, outs = simulate_batch(plant5, 40, 3, seed=4)
    fm = LinkFailureModel(topo, p_beta, seed=6)
    params = ConsensusParams(4.5, gamma)
    gains = frozen_gains(plant5, sol5)
    for compiled in ([False, True] if _kernels.consensus_rounds else [False]):
        r = run_batch(plant5, fm, params, gains, states, outs, np.arange(3), keep_estimates=True,
                      compiled=compiled)
        for k in range(3):
            net = DkfNetwork(plant5, fm, params, sol=sol5, trial=k)
            ref = net.run([o[k] for o in outs])
            assert np.allclose(r.estimates[k], ref, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(_kernels.consensus_rounds is None, reason="numba not installed")
def test_compiled_kernel_reproduces_draws(topo):
    fm = LinkFailureModel(topo, 0.55, seed=2 ** 63 + 5)
    z = np.random.default_rng(0).standard_normal((6, 10, 4))
    trials = np.arange(100, 106)
    out = _kernels.consensus_rounds(z.copy(), topo.edges, fm.seed, 2, trials, 17, 5, fm.p_beta, 4.5)
    M = sample_M(fm, 4.5, 5, 17, trials)
    assert np.allclose(out, M @ z, atol=1e-13)


def test_divergence_detector(plant5, sol5, topo):
    states, outs = simulate_batch(plant5, 200, 4, seed=0)
    r = run_batch(plant5, LinkFailureModel(topo, 0.5, 1), ConsensusParams(4.5, 1),
                  frozen_gains(plant5, sol5), states, outs, np.arange(4))
    assert r.diverged.all()
    assert np.isnan(r.sq_err[:, -1]).all()


def test_error_recursion_matches_filter(plant5, sol5, topo):
    fm = LinkFailureModel(topo, 0.7, seed=3)
    gamma = 3
    gains = frozen_gains(plant5, sol5)
    tr = simulate(plant5, 100, np.random.default_rng(5))
    net = DkfNetwork(plant5, fm, ConsensusParams(4.5, gamma), sol=sol5)
    est = net.run(tr.outputs)
    E = error_vector(est[0], tr.states[0]).E
    for t in range(100):
        M = sample_M(fm, 4.5, gamma, t)
        f = tr.states[t + 1] - plant5.A @ tr.states[t]
        g = [y[t + 1] - c @ tr.states[t + 1] for y, c in zip(tr.outputs, plant5.C)]
        E = error_transition(plant5, gains, M) @ E + np.kron(M, np.eye(4)) @ noise_terms(plant5, gains, f, g)
        assert np.allclose(E, error_vector(est[t + 1], tr.states[t + 1]).E, atol=1e-9)


def test_live_mode_reaches_frozen_gains(plant5, sol5, topo):
    tr = simulate(plant5, 400, np.random.default_rng(3))
    net = DkfNetwork(plant5, LinkFailureModel(topo, 0.8, 2), ConsensusParams(4.5, 4), mode="live")
    est = net.run(tr.outputs)
    assert net.pushsum.all_stopped
    gains = frozen_gains(plant5, sol5)
    for i, s in enumerate(net.nodes):
        assert np.allclose(s.K_i, gains[i], rtol=1e-5, atol=1e-8)
    assert np.all(np.isfinite(est))


def test_identical_sensors_gamma1_stay_bounded(topo):
    base = paper5_plant()
    C = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    p = Plant(base.A, base.Q, [C] * 10, [0.01 * np.eye(2)] * 10, base.x0_mean, base.x0_cov)
    sol = solve_riccati(p)
    states, outs = simulate_batch(p, 450, 300, seed=0)
    r = run_batch(p, LinkFailureModel(topo, 0.7, 0), ConsensusParams(4.5, 1), frozen_gains(p, sol),
                  states, outs, np.arange(300))
    assert not r.diverged.any()
