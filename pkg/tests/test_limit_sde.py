import numpy as np
import pytest
from scipy.integrate import solve_ivp

from wfmfg.limit_sde import gaussian_increments, mfg_cost, simulate_P, simulate_Q, surface_feedback
from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario


def test_frozen_without_noise_or_drift():
    spec = preset_scenario("constant-cost", epsilon=0.0, kappa=0.0)
    U = solve_master(spec, 1 / 10)
    path = simulate_P(spec, U, [0.3, 0.7], 0.01, seed=3, n_paths=4)
    assert np.all(path.P == np.array([0.3, 0.7]))


def test_sum_preserved_before_projection(voter):
    U = solve_master(voter, 1 / 50)
    path = simulate_P(voter.with_(epsilon=0.9), U, [0.2, 0.8], 0.01, seed=1, n_paths=200)
    assert path.stats["max_sum_error_before_projection"] <= 1e-9
    assert np.allclose(path.P.sum(axis=2), 1.0, atol=1e-12)


def test_three_state_sum_preserved():
    spec = preset_scenario("sellers", epsilon=0.5)
    path = simulate_P(spec, None, [0.2, 0.3, 0.5], 0.01, seed=2, n_paths=50)
    assert path.stats["max_sum_error_before_projection"] <= 1e-9


def test_wright_fisher_variance_matches_moment_ode():
    spec = preset_scenario("zero-cost", epsilon=0.5, kappa=0.0)   # sigma^2 = 0.25
    path = simulate_P(spec, None, [0.5, 0.5], 1e-3, seed=7, n_paths=10_000)
    s2 = spec.sigma2
    # m' = 0, s' = s2 (m - s) for m = E[P], s = E[P^2]
    sol = solve_ivp(lambda t, z: [0.0, s2 * (z[0] - z[1])], (0, 1), [0.5, 0.25], rtol=1e-10, atol=1e-12)
    m, s = sol.y[:, -1]
    oracle = s - m**2
    x = path.P[:, -1, 0]
    dev = (x - x.mean()) ** 2
    assert abs(dev.mean() - oracle) <= 3 * dev.std(ddof=1) / np.sqrt(len(x))


def test_increments_are_reproducible():
    a = gaussian_increments(5, 3, 10, 1, 0.01)
    b = gaussian_increments(5, 3, 10, 1, 0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a[0], a[1])
    # path m does not depend on how many paths are drawn
    assert np.array_equal(gaussian_increments(5, 1, 10, 1, 0.01, first_path=2)[0], a[2])


def test_representative_cost_without_noise_is_the_constant():
    spec = preset_scenario("constant-cost", c=1.5, epsilon=0.0, kappa=0.0)
    U = solve_master(spec, 1 / 10)
    path = simulate_P(spec, U, [0.4, 0.6], 0.01, seed=0, n_paths=5)
    path, cost = simulate_Q(spec, surface_feedback(U), path)
    assert np.allclose(path.Q[:, 0], [0.4, 0.6])
    assert np.allclose(path.Q.sum(axis=2), 1.0)
    assert np.allclose(cost, 1.5)


def test_optimal_feedback_beats_perturbations(voter):
    U = solve_master(voter, 1 / 100)
    path = simulate_P(voter, U, [0.6, 0.4], 0.005, seed=4, n_paths=2000)
    star = surface_feedback(U)
    _, base = simulate_Q(voter, star, path)
    rng = np.random.default_rng(11)
    for _ in range(3):
        shift = rng.uniform(-0.5, 0.5, size=(2, 2))
        beta = lambda t, P, shift=shift: np.maximum(star(t, P) + shift, 0.0)
        _, cost = simulate_Q(voter, beta, path)
        diff = cost - base
        assert diff.mean() >= -3 * diff.std(ddof=1) / np.sqrt(len(diff))
    mean, se = mfg_cost(voter, star, path)
    assert np.isfinite(mean) and se > 0


def test_sidecar_and_csv(tmp_path, voter):
    path = simulate_P(voter, None, [0.5, 0.5], 0.1, seed=9, n_paths=2)
    path.write(tmp_path / "p", voter)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "path,t,P1,P2"
    assert '"noise_convention": "eps2"' in (tmp_path / "p.json").read_text()
