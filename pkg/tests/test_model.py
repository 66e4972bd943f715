import numpy as np
import pytest

from dkfnet.model import (Plant, PlantError, RiccatiError, centralized_kf, error_covariance, riccati_map, simulate, simulate_batch, solve_riccati)

from conftest import scalar_plant


def test_paper5_structure(plant5):
    assert plant5.n == 4 and plant5.n_nodes == 10
    assert [i for i, q in enumerate(plant5.q) if q] == [4, 9]
    G = np.zeros((4, 4))
    G[0, 0] = G[1, 1] = 100.0
    assert np.allclose(plant5.G, G)
    assert plant5.observable() and plant5.controllable()


def test_rejects_non_pd_noise():
    with pytest.raises(PlantError):
        Plant(np.eye(1), np.eye(1), [np.eye(1)], [np.zeros((1, 1))], np.zeros(1), np.eye(1))
    with pytest.raises(PlantError):
        Plant(np.eye(1), -np.eye(1), [np.eye(1)], [np.eye(1)], np.zeros(1), np.eye(1))
    with pytest.raises(PlantError):
        Plant(np.ones((2, 3)), np.eye(2), [np.eye(2)], [np.eye(2)], np.zeros(2), np.eye(2))


def test_trajectory_is_finite_and_drifts(plant5):
    tr = simulate(plant5, 450, np.random.default_rng(0))
    assert tr.states.shape == (451, 4) and np.all(np.isfinite(tr.states))
    assert [y.shape for y in tr.outputs][4] == (451, 1)
    # with zero noise the double integrator moves linearly
    free = simulate(plant5, 100, noiseless=True)
    assert np.allclose(free.states[100, :2], plant5.x0_mean[:2] + 100 * 0.25 * plant5.x0_mean[2:])


def test_trial_streams_are_reproducible(plant5):
    s1, o1 = simulate_batch(plant5, 20, 3, seed=9)
    s2, _ = simulate_batch(plant5, 20, 1, seed=9, first_trial=2)
    assert np.array_equal(s1[2], s2[0])
    assert not np.array_equal(s1[0], s1[1])


@pytest.mark.parametrize("a,expected", [(0.0, 0.5), (1.0, (np.sqrt(5) - 1) / 2)])
def test_scalar_riccati(a, expected):
    sol = solve_riccati(scalar_plant(a=a))
    assert sol.P_inf[0, 0] == pytest.approx(expected, abs=1e-12)
    # oracle: 100 plain iterations of the map from P = 1
    P = np.eye(1)
    for _ in range(100):
        P = riccati_map(scalar_plant(a=a), P)
    assert P[0, 0] == pytest.approx(expected, abs=1e-10)


def test_riccati_nonconvergence_reports_residual():
    with pytest.raises(RiccatiError) as exc:
        solve_riccati(scalar_plant(a=1.0), max_iter=3)
    assert exc.value.residual > 0


def test_unobservable_rejected():
    p = Plant(np.eye(2), np.eye(2), [np.array([[1.0, 0.0]])], [np.eye(1)], np.zeros(2), np.eye(2))
    with pytest.raises(PlantError):
        solve_riccati(p)


def test_paper5_centralized_solution(plant5, sol5):
    assert np.max(np.abs(np.linalg.eigvals(sol5.A_C))) < 1
    assert np.allclose(sol5.P_inf, sol5.P_inf.T)
    assert np.trace(sol5.P_inf) == pytest.approx(0.027561, rel=1e-3)
    assert np.allclose(sol5.P_inf, riccati_map(plant5, sol5.P_inf), atol=1e-12)


def test_zero_noise_perfect_prior_has_no_error(plant5, sol5):
    tr = simulate(plant5, 50, noiseless=True)
    est = centralized_kf(plant5, sol5, tr.outputs, x_hat0=tr.states[0])
    assert np.allclose(est, tr.states, atol=1e-12)


def test_centralized_error_covariance_matches_riccati(plant5, sol5):
    states, outs = simulate_batch(plant5, 450, 300, seed=0)
    est = centralized_kf(plant5, sol5, outs, x_hat0=np.zeros(4))
    cov = error_covariance(states, est, burn_in=90)
    assert np.linalg.norm(cov - sol5.P_inf) < 0.10 * np.linalg.norm(sol5.P_inf)
