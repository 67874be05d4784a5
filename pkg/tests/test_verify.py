import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario
from wfmfg.nash import solve_nash
from wfmfg.nplayer import simulate
from wfmfg.policy import ConstantPolicy, ZeroPolicy
from wfmfg.verify import (VerificationConfig, best_response_check, common_noise_expansion,
                          common_noise_expansion_check, exp_bound_check, hoeffding_tail_check,
                          initial_states, multinomial_moment_oracle, nash_remainder,
                          nash_remainder_check, random_perturbations, weak_convergence_study,
                          weight_moment_check, write_verdict)
from wfmfg.nash import equilibrium_policy


@given(st.integers(1, 8), st.lists(st.floats(0.05, 1), min_size=2, max_size=3))
def test_first_moment_identity(N, w):
    mu = np.array(w) / sum(w)
    assert multinomial_moment_oracle(N, mu, 1, 0)["centered"] == pytest.approx(0, abs=1e-12)


def test_moment_examples():
    o = multinomial_moment_oracle(2, [0.5, 0.5], 2, 0)
    assert o["centered"] == pytest.approx(0.5) and o["bound_ell2"] == 1.0
    c = multinomial_moment_oracle(2, [0.5, 0.5], 1, 0, 1)
    assert c["cross"] == pytest.approx(-0.5)
    assert c["cross_bound_tight"] == pytest.approx(0.5)
    assert c["cross_bound_stated"] == pytest.approx(1.0)
    assert c["abs_moments"][2] == pytest.approx(0.5)


def test_hoeffding_examples():
    assert hoeffding_tail_check([4], [0.5, 0.5], 1, 1.5)["statistics"]["tails"][0]["tail"] == 0
    assert hoeffding_tail_check([4, 6], [1.0, 0.0], 1, 0.1)["statistics"]["tails"][0]["tail"] == 0
    v = hoeffding_tail_check([4, 6, 8], [0.5, 0.5], 1, 0.5)
    tails = [r["tail"] for r in v["statistics"]["tails"]]
    assert tails == pytest.approx([0.625, 0.21875, 0.2890625])   # not monotone: lattice effect
    wide = hoeffding_tail_check(range(2, 9), [0.5, 0.5], 1, 0.5)
    assert wide["pass"] and wide["statistics"]["log_tail_slope"] < 0


def test_weight_moments_trivial_cases():
    frozen = preset_scenario("voter", epsilon=0.0)
    x0 = np.array([0, 0, 1, 1])
    v = weight_moment_check(frozen, 4, ConstantPolicy(2, 1.0), x0, M=20, tau_mode="none")
    assert v["statistics"]["sup_moment"] == 1.0 and v["statistics"]["sup_inverse_moment"] == 1.0
    noisy = preset_scenario("voter", epsilon=0.9)
    v = weight_moment_check(noisy, 4, ZeroPolicy(2), x0, ell=1, M=20, tau_mode="none")
    assert v["statistics"]["sup_moment"] == pytest.approx(1.0, abs=1e-12)


def test_exp_bound_trivial_cases():
    spec = preset_scenario("voter")
    x0 = np.array([0] * 8 + [1] * 8)
    v = exp_bound_check(spec, 16, ZeroPolicy(2), x0, M=10, tau_mode="localised")
    assert v["statistics"]["estimate"] == [1.0, 1.0]            # tau = 0 at the start
    frozen = preset_scenario("voter", epsilon=0.0)
    v = exp_bound_check(frozen, 16, ZeroPolicy(2), x0, M=50, tau_mode="support")
    assert v["pass"] and max(v["statistics"]["estimate"]) < np.exp(2 * 1.0 / (1 / 16))


def test_expansion_constant_and_affine_fields():
    spec = preset_scenario("voter", noise_convention="eps")
    probes = [(0.5, np.array([0.75, 0.25]))]
    for U in (lambda i, p: 3.0, lambda i, p: (1.0 + i) * p[0] - 0.5 * p[1]):
        rows = common_noise_expansion_check(U, spec, [4, 8], probes)["statistics"]["rows"]
        assert max(r["max_remainder"] for r in rows) <= 1e-7


def test_expansion_quadratic_field_decays_like_one_over_n():
    # third central moment of S/N gives N * remainder = 6 * 0.75 * 0.25 * 0.5 / (2 * 0.25) = 1.125
    spec = preset_scenario("voter", noise_convention="eps")
    quad = lambda i, p: (1 + i) * p[0] ** 2 - p[0] * p[1]
    rows = common_noise_expansion_check(quad, spec, [4, 8, 16], [(0.5, np.array([0.75, 0.25]))])
    for r in rows["statistics"]["rows"]:
        assert r["N"] * r["max_remainder"] == pytest.approx(1.125, abs=1e-5)


def test_expansion_voter_surface_decreases(voter_surface):
    v = common_noise_expansion_check(voter_surface, voter_surface.spec, [2, 4, 8], [(0.5, np.array([0.5, 0.5]))])
    assert v["pass"]
    with pytest.raises(ValueError):
        common_noise_expansion_check(voter_surface, voter_surface.spec, [3], [(0.5, np.array([0.5, 0.5]))])


def test_remainder_vanishes_for_constant_costs():
    spec = preset_scenario("constant-cost", c=1.0, noise_convention="eps")
    U = solve_master(spec, 1 / 20)
    r = nash_remainder_check(U, spec, [2, 3])
    assert max(row["max_remainder"] for row in r["statistics"]["rows"]) <= 1e-9


def test_single_player_remainder_is_the_master_vs_hjb_mismatch(voter_surface):
    spec = voter_surface.spec
    t = 0.4
    E = np.eye(2)
    z = np.array([voter_surface.value(t, E[i])[i] for i in range(2)])
    h = 2 * max(voter_surface.times[1] - voter_surface.times[0], 1e-3)
    dz = np.array([(voter_surface.value(t + h, E[i])[i] - voter_surface.value(t - h, E[i])[i]) / (2 * h)
                   for i in range(2)])
    for x in (0, 1):
        other = 1 - x
        expect = (dz[x] + spec.phi(E[x])[other] * (z[other] - z[x])
                  - 0.5 * max(z[x] - z[other], 0.0) ** 2 + spec.f(x, E[x]))
        got = nash_remainder(voter_surface, spec, 1, t, np.array([x]), np.ones(1))
        assert got[0] == pytest.approx(expect, abs=1e-12)


def test_remainder_trend(voter_surface):
    assert nash_remainder_check(voter_surface, voter_surface.spec, [2, 3, 4])["pass"]


def test_weak_convergence_trivial_and_martingale():
    still = preset_scenario("constant-cost", epsilon=0.0, kappa=0.0)
    U = solve_master(still, 1 / 8)
    v = weak_convergence_study(still, U, [8], 20, p0=(0.625, 0.375))
    assert v["statistics"]["rows"][0]["ks_max"] == 0.0
    free = preset_scenario("zero-cost", kappa=0.0, noise_convention="eps")
    v = weak_convergence_study(free, None, [8, 32], 300, p0=(0.625, 0.375), seed=2)
    for r in v["statistics"]["rows"]:
        assert abs(r["mean_N"] - 0.625) <= 3 * r["se_N"]
        assert abs(r["mean_P"] - 0.625) <= 3 * r["se_P"]


def test_initial_states():
    assert np.array_equal(initial_states(8, [0.625, 0.375]), [0] * 5 + [1] * 3)
    assert np.bincount(initial_states(7, [0.5, 0.5])).tolist() in ([4, 3], [3, 4])


def test_best_response_trivial_cases(voter):
    sol = solve_nash(voter, 2, dy=1.0)
    pol = equilibrium_policy(sol)
    same = best_response_check(pol, voter, 2, 0, [pol], np.array([0, 1]), M=20, seed=1)
    assert same["statistics"]["rows"][0]["difference"] == 0.0
    zero = preset_scenario("zero-cost")
    zp = equilibrium_policy(solve_nash(zero, 2, dy=1.0))
    pert = random_perturbations(zp, 2, 2, 0, 2, 0.5, seed=3)
    v = best_response_check(zp, zero, 2, 0, pert, np.array([0, 1]), M=20, seed=1)
    assert v["pass"] and all(r["J_equilibrium"] == 0.0 for r in v["statistics"]["rows"])


def test_perturbations_stay_within_bounds(voter):
    pol = equilibrium_policy(solve_nash(voter, 2, dy=1.0))
    for beta in random_perturbations(pol, 2, 2, 0, 3, 0.5, seed=0):
        tr = simulate(voter, 2, beta, np.array([0, 1]), seed=4)
        assert tr.n_events >= 0
        r = beta(0.3, np.array([1, 0]), np.ones(2), 0)
        assert r[1] == 0 and np.all((r >= 0) & (r <= beta.bound))


def test_verdict_files(tmp_path):
    v = hoeffding_tail_check([2, 4], [0.5, 0.5], 1, 0.5)
    write_verdict(v, str(tmp_path / "h"))
    data = json.loads((tmp_path / "h.json").read_text())
    assert set(data) == {"name", "inputs", "statistics", "thresholds", "pass"}
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "N,x,tail"


def test_verification_config_ranges():
    with pytest.raises(ValueError):
        VerificationConfig(eps_exp=0.3)
    with pytest.raises(ValueError):
        VerificationConfig(lam=0.5)
