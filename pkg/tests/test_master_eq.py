import numpy as np
import pytest

from wfmfg.errors import BoundaryError, CFLError
from wfmfg.master_eq import (ValueSurface, policy_from_surface, residual_master, solve_master,
                             stable_dt)
from wfmfg.model import GameSpec, preset_scenario
from wfmfg.simplex import SimplexGrid


def flat_surface(spec, n, value):
    grid = SimplexGrid(spec.d, n)
    times = np.linspace(0, spec.T, 3)
    vals = np.broadcast_to(np.asarray(value, dtype=float), (3, grid.size, spec.d)).copy()
    return ValueSurface(times=times, grid=grid, values=vals, dt=times[1], sigma2=spec.sigma2,
                        noise_convention=spec.noise_convention, spec=spec)


@pytest.mark.parametrize("name,kw", [("constant-cost", {"c": 1.7}), ("zero-cost", {})])
def test_constant_costs_give_constant_surface(name, kw):
    spec = preset_scenario(name, **kw)
    U = solve_master(spec, 1 / 40)
    assert np.max(np.abs(U.values - kw.get("c", 0.0))) <= 1e-10


def test_constant_cost_three_states():
    spec = preset_scenario("constant-cost", d=3, c=-0.4)
    U = solve_master(spec, 1 / 12)
    assert np.max(np.abs(U.values + 0.4)) <= 1e-10


def test_relabelling_symmetry(voter):
    U = solve_master(voter, 1 / 50)
    swapped = U.grid.index(U.grid.m[:, ::-1])
    for k in (0, len(U.times) // 2, -1):
        assert np.max(np.abs(U.values[k, :, 0] - U.values[k, swapped, 1])) <= 1e-8


def test_maximum_principle(voter):
    U = solve_master(voter, 1 / 50)
    assert np.max(np.abs(U.values)) <= voter.value_bound + 1e-12


def test_self_convergence_is_first_order():
    spec = preset_scenario("voter", T=0.5)
    U1, U2, U4 = (solve_master(spec, 1 / n) for n in (100, 200, 400))
    nodes = U1.grid.points
    e1 = np.max(np.abs(U1.value(0.0, nodes) - U2.value(0.0, nodes)))
    e2 = np.max(np.abs(U2.value(0.0, nodes) - U4.value(0.0, nodes)))
    assert 1.5 <= e1 / e2 <= 2.5


def test_cfl_is_enforced(voter):
    limit = stable_dt(voter, 1 / 20)
    with pytest.raises(CFLError):
        solve_master(voter, 1 / 20, dt=1.5 * limit)
    with pytest.raises(ValueError):
        solve_master(voter, 0.3)


def test_residual_examples():
    spec = preset_scenario("constant-cost", c=2.0)
    U = flat_surface(spec, 20, 2.0)
    assert np.array_equal(residual_master(U, 0.5, [0.5, 0.5]), [0.0, 0.0])
    one = GameSpec(d=3, T=1, epsilon=0.3, kappa=5, delta=0.1, running=lambda p: np.ones_like(np.asarray(p)))
    U0 = flat_surface(one, 12, 0.0)
    assert np.allclose(residual_master(U0, 0.5, [0.25, 0.25, 0.5]), 1.0)
    with pytest.raises(BoundaryError):
        residual_master(U0, 0.5, [0.0, 0.5, 0.5])


def test_residual_shrinks_with_the_grid():
    spec = preset_scenario("voter", T=0.5)
    res = []
    for n in (50, 100, 200):
        U = solve_master(spec, 1 / n, save_every=1)
        res.append(max(np.max(np.abs(residual_master(U, t, p, spec)))
                       for t in (0.1, 0.25) for p in ([0.3, 0.7], [0.5, 0.5], [0.8, 0.2])))
    assert res[0] > res[1] > res[2]


def test_policy_from_surface():
    spec = preset_scenario("constant-cost")
    pol = policy_from_surface(flat_surface(spec, 10, 1.0))
    assert np.all(pol.all_rates(0.2, np.array([0, 1, 1]), np.ones(3)) == 0)
    U = flat_surface(spec, 10, [3.0, 1.0])
    pol = policy_from_surface(U)
    assert np.allclose(pol(0.2, np.array([0, 1]), np.ones(2), 0), [0, 2])
    assert np.allclose(pol(0.2, np.array([0, 1]), np.ones(2), 1), [0, 0])


def test_policy_rates_respect_the_a_priori_bound(voter):
    U = solve_master(voter, 1 / 50)
    pol = policy_from_surface(U, bound=voter.feedback_bound)
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.integers(0, 2, size=6)
        r = pol.all_rates(rng.uniform(0, 1), x, np.ones(6))
        assert r.max() <= voter.feedback_bound + 1e-12


def test_save_load_round_trip(tmp_path, voter):
    U = solve_master(voter, 1 / 20)
    U.save(tmp_path / "u.npz")
    V = ValueSurface.load(tmp_path / "u.npz", voter)
    assert np.array_equal(U.values, V.values) and np.array_equal(U.times, V.times)
    assert V.header()["noise_convention"] == voter.noise_convention
    U.to_csv(tmp_path / "u.csv", every=10)
    head = (tmp_path / "u.csv").read_text().splitlines()[0]
    assert head == "t,p1,p2,U1,U2"
