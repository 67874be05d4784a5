import numpy as np
import pytest
from scipy.integrate import solve_ivp

from wfmfg.errors import CFLError
from wfmfg.model import GameSpec, preset_scenario
from wfmfg.nash import (ConfigSpace, equilibrium_policy, multinomial_pmf, nash_dt_limit,
                        nash_residual, picard_sweep, shuffle_ratios, solve_nash, theta_weight,
                        value_gap)
from wfmfg.simplex import compositions


def oracle_spec():
    """d=2 spec whose single-agent values are not constant."""
    return GameSpec(d=2, T=1.0, epsilon=0.3, kappa=5.0, delta=0.1,
                    running=lambda p: np.stack([0.5 * np.asarray(p)[..., 1],
                                                np.full(np.shape(p)[:-1], 0.2)], axis=-1),
                    terminal=lambda p: np.broadcast_to([0.0, 1.0], np.shape(p)))


def single_agent_hjb(spec, times):
    """Backward ODE of one player alone: mu is the point mass at its state."""
    d = spec.d
    E = np.eye(d)
    rate = np.array([[spec.phi(E[i])[j] if j != i else 0.0 for j in range(d)] for i in range(d)])
    f = np.array([spec.f(i, E[i]) for i in range(d)])
    g = np.array([spec.g(i, E[i]) for i in range(d)])

    def rhs(t, w):
        out = np.empty(d)
        for i in range(d):
            h = -0.5 * np.sum(np.maximum(w[i] - w, 0.0) ** 2)
            out[i] = -(rate[i] @ (w - w[i]) + h + f[i])
        return out
    sol = solve_ivp(rhs, (spec.T, 0.0), g, t_eval=times[::-1], rtol=1e-12, atol=1e-13, method="DOP853")
    return sol.y[:, ::-1]


def test_multinomial_pmf_sums_to_one():
    ks = compositions(5, 3)
    assert multinomial_pmf(ks, np.array([0.2, 0.3, 0.5]), 5).sum() == pytest.approx(1.0)
    r = shuffle_ratios(ks, np.array([0.2, 0.3, 0.5]), 5)
    assert np.allclose(multinomial_pmf(ks, np.array([0.2, 0.3, 0.5]), 5) @ r, 1.0)


def test_config_space():
    cs = ConfigSpace(3, 2)
    assert cs.size == 8
    for c in range(cs.size):
        assert cs.index(cs.X[c]) == c
        for m in range(3):
            for j in range(2):
                x = cs.X[c].copy()
                x[m] = j
                assert cs.nb[c, m, j] == cs.index(x)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_constant_cost_is_exact(N):
    spec = preset_scenario("constant-cost", c=1.3)
    sol = solve_nash(spec, N)
    assert np.max(np.abs(sol.W - 1.3)) <= 1e-9
    pol = equilibrium_policy(sol)
    assert np.all(pol.all_rates(0.3, sol.configs.X[1], np.ones(N)) == 0)


def test_single_agent_oracle():
    spec = oracle_spec()
    sol = solve_nash(spec, 1, dt=1e-3)
    ref = single_agent_hjb(spec, sol.times)
    err = np.max(np.abs(sol.W[:, 0, :, 0] - ref.T))
    assert np.ptp(ref) > 0.1            # the oracle is not trivial
    assert err <= 1e-6


def test_exchangeability(voter):
    sol = solve_nash(voter, 2, dy=0.5)
    cs, grid = sol.configs, sol.grid
    swap_c = np.array([cs.index(cs.X[c][::-1]) for c in range(cs.size)])
    swap_g = grid.index(grid.m[:, ::-1])
    err = np.max(np.abs(sol.W[:, 0] - sol.W[:, 1][:, swap_c][:, :, swap_g]))
    assert err <= 1e-9


def test_policy_bound_and_zero_weight_nodes(voter):
    sol = solve_nash(voter, 2, dy=0.5)
    pol = equilibrium_policy(sol)
    worst = 0.0
    for t in (0.0, 0.5, 1.0):
        for x in sol.configs.X:
            for y in sol.grid.points:
                r = pol.all_rates(t, x, y)
                assert np.all(np.isfinite(r))
                worst = max(worst, r.max())
    assert worst <= voter.feedback_bound + 1e-9
    assert np.all(np.isfinite(pol.all_rates(0.2, np.array([0, 1]), np.array([2.0, 0.0]))))


def test_residual_examples():
    const = preset_scenario("constant-cost", c=0.7)
    sol = solve_nash(const, 2)
    assert np.all(nash_residual(sol, 0.5, np.array([0, 1]), np.ones(2)) == 0)
    one = GameSpec(d=2, T=1, epsilon=0.3, kappa=5, delta=0.1, running=lambda p: np.ones_like(np.asarray(p)))
    sol = solve_nash(one, 2)
    sol.W = np.zeros_like(sol.W)
    assert np.allclose(nash_residual(sol, 0.5, np.array([0, 1]), np.array([1.5, 0.5])), 1.0)


def test_residual_on_the_solution_is_small(voter):
    sol = solve_nash(voter, 2, dy=0.5)
    change = np.max(np.abs(np.diff(sol.W, axis=0)))
    for t in (0.1, 0.5, 0.9):
        for x in sol.configs.X:
            for y in sol.grid.points:
                assert np.max(np.abs(nash_residual(sol, t, x, y))) <= 10 * change


def test_cfl_and_limits(voter):
    with pytest.raises(CFLError):
        solve_nash(voter, 2, dt=2 * nash_dt_limit(voter, 2))
    with pytest.raises(ValueError):
        solve_nash(voter, 5)
    with pytest.raises(ValueError):
        solve_nash(voter, 2, dy=0.3)


def test_fixed_point_sweep_converges_with_dt(voter):
    # the frozen feedback is read at step starts, so one sweep moves the solution by O(dt)
    limit = nash_dt_limit(voter, 2)
    d1 = picard_sweep(solve_nash(voter, 2, dy=1.0, dt=limit / 2))[1]
    d2 = picard_sweep(solve_nash(voter, 2, dy=1.0, dt=limit / 4))[1]
    assert d1 < 0.01 and 1.8 <= d1 / d2 <= 2.2


def test_value_gap_constant_and_weight_bound(voter_surface):
    const = preset_scenario("constant-cost", c=2.0, noise_convention="eps")
    from wfmfg.master_eq import solve_master
    U = solve_master(const, 1 / 20)
    g = value_gap(solve_nash(const, 2), U)
    assert g["all"]["raw_sup"] <= 1e-9 and g["all"]["weighted_sup"] <= 1e-18
    v = value_gap(solve_nash(voter_surface.spec, 3, dy=0.5), voter_surface)
    cap = 3 ** (-1 / 8) + 1 / 2          # AM-GM bound on the theta weight
    for region in ("all", "unit", "relaxed"):
        assert v[region]["weighted_sup"] <= cap * v[region]["raw_sup"] ** 2 + 1e-15
    assert v["strict"]["nodes"] == 0


def test_theta_weight_bound():
    # prod (N^-eps + mu_i)^(1/d) <= N^-eps + 1/d by AM-GM, and mean(y^ell) >= 1
    rng = np.random.default_rng(0)
    mu = rng.dirichlet(np.ones(3), size=200)
    y = rng.dirichlet(np.ones(4), size=200) * 4
    th = theta_weight(mu, y, 4)
    assert np.all(th <= 4 ** (-1 / 8) + 1 / 3 + 1e-12)
    assert theta_weight(np.full(3, 1 / 3), np.ones(4), 4) == pytest.approx(4 ** (-1 / 8) + 1 / 3)


def test_artifacts(tmp_path, voter):
    sol = solve_nash(voter, 2, dy=1.0)
    sol.save(tmp_path / "n.npz")
    sol.to_csv(tmp_path / "n.csv")
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,l,w"
    assert len(lines) == 1 + sol.configs.size * sol.grid.size * 2
