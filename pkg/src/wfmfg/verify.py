"""Oracles and statistical checks for the auxiliary estimates and the
convergence statements.

Every check returns a verdict dict ``{name, inputs, statistics, thresholds,
pass}``; :func:`write_verdict` stores it as JSON next to a CSV of raw samples.
"""
import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import EnumerationError
from .limit_sde import simulate_P
from .master_eq import policy_from_surface
from .nash import (equilibrium_policy, multinomial_pmf, nash_operator_at,
                   shuffle_ratios, solve_nash)
from .nplayer import (integral_inverse_mu, simulate, tau_thresholds)
from .policy import MixedPolicy, Policy
from .simplex import (compositions, intrinsic_gradient, intrinsic_hessian,
                      kimura_contraction)

MAX_OUTCOMES = 2_000_000
EXP_CAP = 700.0


@dataclass(frozen=True)
class VerificationConfig:
    eps_exp: float = 1 / 8
    ell: int = 3
    lam: float = 1.0
    M: int = 1000
    N_list: tuple = (2, 3, 4)
    probe_times: tuple = (0.5,)

    def __post_init__(self):
        if not 0 < self.eps_exp < 0.25:
            raise ValueError("eps_exp must lie in (0, 1/4)")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError("ell must be a positive integer")
        if self.lam < 1:
            raise ValueError("lambda must be >= 1")


def verdict(name, inputs, statistics, thresholds, passed, samples=None):
    out = {"name": name, "inputs": inputs, "statistics": statistics,
           "thresholds": thresholds, "pass": bool(passed)}
    if samples is not None:
        out["_samples"] = samples
    return out


def write_verdict(v, stem):
    """Write ``stem.json`` and, when raw samples are attached, ``stem.csv``."""
    v = dict(v)
    samples = v.pop("_samples", None)
    with open(f"{stem}.json", "w") as fh:
        json.dump(v, fh, indent=2, sort_keys=True, default=_jsonable)
    if samples:
        cols = list(samples[0].keys())
        with open(f"{stem}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in samples:
                w.writerow({k: (repr(float(x)) if isinstance(x, (float, np.floating)) else x)
                            for k, x in row.items()})


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0


# ---------------------------------------------------------------- multinomial


def _outcomes(N, d):
    n = math.comb(N + d - 1, d - 1)
    if n > MAX_OUTCOMES:
        raise EnumerationError(f"{n} multinomial outcomes exceed the enumeration limit")
    return compositions(N, d)


def multinomial_moment_oracle(N, mu, ell, i, j=None, powers=(2, 4)):
    """Exact moments of ``R_i = S[i] / (N mu[i])`` for ``S ~ Mult(N, mu)``."""
    mu = np.asarray(mu, dtype=float)
    if mu[i] <= 0 or (j is not None and mu[j] <= 0):
        raise ValueError("the oracle needs positive mass on the probed states")
    ks = _outcomes(N, mu.size)
    pmf = multinomial_pmf(ks, mu, N)
    R = ks / (N * np.where(mu > 0, mu, 1.0))
    dev = R[:, i] ** ell - 1.0
    out = {"N": N, "mu": mu.tolist(), "ell": ell, "i": i, "j": j,
           "centered": float(pmf @ dev),
           "abs_moments": {int(p): float(pmf @ np.abs(dev) ** p) for p in powers},
           "total_probability": float(pmf.sum())}
    minmu = float(mu[mu > 0].min())
    if ell == 2:
        out["bound_ell2"] = float(1.0 / (N * mu[i]))
    if j is not None:
        out["cross"] = float(pmf @ (R[:, j] * dev))
        out["cross_bound_stated"] = ell * (ell + 1) / (2.0 * N * minmu)
        out["cross_bound_tight"] = 1.0 / (2.0 * N * minmu)
    return out


def hoeffding_tail_check(N_list, mu, ell, eta, i=0):
    """Exact tails ``P(|R_i^ell - 1| >= eta)`` and the slope of the log-tail
    against ``N mu[i]^2``."""
    mu = np.asarray(mu, dtype=float)
    rows = []
    for N in N_list:
        ks = _outcomes(N, mu.size)
        pmf = multinomial_pmf(ks, mu, N)
        if mu[i] > 0:
            dev = np.abs((ks[:, i] / (N * mu[i])) ** ell - 1.0)
        else:
            dev = np.zeros(len(ks))
        tail = float(pmf[dev >= eta - 1e-12].sum())
        rows.append({"N": N, "x": float(N * mu[i] ** 2), "tail": tail})
    xs = np.array([r["x"] for r in rows])
    logs = np.array([np.log(r["tail"]) if r["tail"] > 0 else -np.inf for r in rows])
    finite = np.isfinite(logs)
    slope = float(np.polyfit(xs[finite], logs[finite], 1)[0]) if finite.sum() >= 2 else None
    passed = slope is None or slope < 0
    return verdict("hoeffding_tail", {"N_list": list(N_list), "mu": mu.tolist(), "ell": ell,
                                      "eta": eta, "i": i},
                   {"tails": rows, "log_tail_slope": slope}, {"slope": "< 0"}, passed, rows)


# ---------------------------------------------------------- simulation checks


def _tau_levels(N, eps_exp, tau_mode):
    """Localisation thresholds ``(min mu, max y)`` for the requested mode.

    ``localised`` uses ``N^-eps`` and ``N^(1-eps)/2``; ``support`` stops only when
    a state empties; ``none`` never stops."""
    if tau_mode == "localised":
        return tau_thresholds(N, eps_exp)
    if tau_mode == "support":
        return 1e-300, np.inf
    if tau_mode == "none":
        return -np.inf, np.inf
    raise ValueError("tau_mode must be 'localised', 'support' or 'none'")


def _tau(traj, lo, hi):
    bad = (traj.MU.min(axis=1) < lo) | (traj.Y.max(axis=1) > hi)
    if bad[0]:
        return traj.t0
    hits = np.nonzero(bad[1:])[0]
    return float(traj.times[hits[0]]) if hits.size else traj.T


def weight_moment_check(spec, N, policy, x0, y0=None, ell=3, eps_exp=1 / 8, M=500, seed=0,
                        probe_times=None, tau_mode="localised", refresh=0.05):
    """Monte-Carlo moments of the weights stopped at tau.

    Reports ``sup_t E[m_t]`` and ``sup_t E[1 / m_t]`` with
    ``m_t = N^-1 sum_l (Y^l_{t ^ tau})^ell`` over a time grid, next to the
    constant-free reference ``(N^-1 sum y0^(2 ell))^(1/2) prod_i (N^-eps + mu0[i])^(-1/(2d))``.
    """
    d = spec.d
    y0 = np.ones(N) if y0 is None else np.asarray(y0, dtype=float)
    probe_times = np.linspace(0, spec.T, 11) if probe_times is None else np.asarray(probe_times)
    lo, hi = _tau_levels(N, eps_exp, tau_mode)
    mom = np.empty((M, len(probe_times)))
    inv = np.empty_like(mom)
    for m in range(M):
        tr = simulate(spec, N, policy, x0, y0, seed=seed, path=m, refresh=refresh)
        tau = _tau(tr, lo, hi)
        for a, t in enumerate(probe_times):
            _, y, _ = tr.state_at(min(t, tau))
            v = float(np.mean(y**ell))
            mom[m, a] = v
            inv[m, a] = 1.0 / v
    mu0 = np.bincount(np.asarray(x0), weights=y0, minlength=d)[:d] / N
    ref = (np.mean(y0 ** (2 * ell))) ** 0.5 * np.prod((N ** (-eps_exp) + mu0) ** (-1.0 / (2 * d)))
    em, ei = mom.mean(axis=0), inv.mean(axis=0)
    se_m = mom.std(axis=0, ddof=1) / np.sqrt(M)
    se_i = inv.std(axis=0, ddof=1) / np.sqrt(M)
    a, b = int(np.argmax(em)), int(np.argmax(ei))
    statistics = {"sup_moment": float(em[a]), "sup_moment_se": float(se_m[a]),
                  "sup_inverse_moment": float(ei[b]), "sup_inverse_moment_se": float(se_i[b]),
                  "reference_shape": float(ref), "mu0": mu0.tolist(),
                  "moment_by_time": em.tolist(), "tau_mode": tau_mode}
    passed = bool(np.all(np.isfinite(em)) and np.all(np.isfinite(ei)))
    samples = [{"path": m, "sup_moment": float(mom[m].max()), "sup_inverse": float(inv[m].max())}
               for m in range(M)]
    return verdict("weight_moments", {"N": N, "ell": ell, "eps_exp": eps_exp, "M": M, "seed": seed,
                                      "policy": policy.name},
                   statistics, {"finite": True}, passed, samples)


def exp_bound_check(spec, N, policy, x0, y0=None, lam=1.0, eps_exp=1 / 8, M=500, seed=0,
                    tau_mode="localised", refresh=0.05, return_logs=False):
    """Estimate ``E[exp(int_0^tau lam / mu_t[i] dt)]`` per state, in log space
    with exponents capped at ``EXP_CAP``."""
    d = spec.d
    y0 = np.ones(N) if y0 is None else np.asarray(y0, dtype=float)
    lo, hi = _tau_levels(N, eps_exp, tau_mode)
    logs = np.empty((M, d))
    taus = np.empty(M)
    for m in range(M):
        tr = simulate(spec, N, policy, x0, y0, seed=seed, path=m, refresh=refresh)
        tau = _tau(tr, lo, hi)
        taus[m] = tau
        logs[m] = lam * integral_inverse_mu(tr, tau) if tau > tr.t0 else 0.0
    capped = logs >= EXP_CAP
    logs = np.minimum(logs, EXP_CAP)
    est, se = _log_mean_exp(logs)
    statistics = {"estimate": est.tolist(), "se": se.tolist(),
                  "cap_fraction": capped.mean(axis=0).tolist(),
                  "mean_tau": float(taus.mean()), "tau_mode": tau_mode}
    passed = bool(np.all(np.isfinite(est)))
    warn = bool(np.any(capped.mean(axis=0) > 0.01))
    statistics["cap_warning"] = warn
    out = verdict("exp_bound", {"N": N, "lam": lam, "eps_exp": eps_exp, "M": M, "seed": seed,
                                "kappa": spec.kappa, "policy": policy.name},
                  statistics, {"finite": True, "cap": EXP_CAP}, passed,
                  [{"path": m, **{f"log_{i}": float(logs[m, i]) for i in range(d)}} for m in range(M)])
    return (out, logs) if return_logs else out


def _log_mean_exp(logs):
    top = logs.max(axis=0)
    scaled = np.exp(logs - top)
    mean = scaled.mean(axis=0)
    sd = scaled.std(axis=0, ddof=1) if len(logs) > 1 else np.zeros_like(mean)
    est = np.exp(top) * mean
    se = np.exp(top) * sd / np.sqrt(len(logs))
    return est, se


def paired_exp_comparison(spec, N, policy, x0, kappas, lam=1.0, M=500, seed=0,
                          tau_mode="support", eps_exp=1 / 8):
    """Does raising kappa not raise the exponential functional?  Paired seeds;
    the difference of per-path functionals is tested against 3 SE."""
    lo_k, hi_k = kappas
    _, la = exp_bound_check(spec.with_(kappa=lo_k), N, policy, x0, lam=lam, M=M, seed=seed,
                            tau_mode=tau_mode, eps_exp=eps_exp, return_logs=True)
    _, lb = exp_bound_check(spec.with_(kappa=hi_k), N, policy, x0, lam=lam, M=M, seed=seed,
                            tau_mode=tau_mode, eps_exp=eps_exp, return_logs=True)
    ea, eb = np.exp(la), np.exp(lb)
    diff = eb - ea
    dm, dse = _mean_se(diff)
    statistics = {"estimate_low": ea.mean(axis=0).tolist(), "estimate_high": eb.mean(axis=0).tolist(),
                  "mean_difference": dm.tolist() if np.ndim(dm) else dm,
                  "difference_se": dse}
    mean_diff = diff.mean(axis=0)
    se_diff = diff.std(axis=0, ddof=1) / np.sqrt(M)
    passed = bool(np.all(mean_diff <= 3 * se_diff + 1e-12))
    statistics.update({"mean_difference": mean_diff.tolist(), "difference_se": se_diff.tolist()})
    return verdict("exp_bound_kappa", {"N": N, "kappas": list(kappas), "lam": lam, "M": M,
                                       "seed": seed, "tau_mode": tau_mode},
                   statistics, {"difference": "<= 3 SE"}, passed)


# ---------------------------------------------------------------- expansions


def _field(U, t):
    """Per-state scalar fields of a value surface or of a callable ``u(i, p)``."""
    if callable(U) and not hasattr(U, "value"):
        return lambda i: (lambda p: float(U(i, p)))
    return lambda i: U.component(t, i)


def common_noise_expansion(U, spec, N, t, x, y, step=None):
    """Remainder of the second-order expansion of the tilted shuffle term.

    Left side ``N E[R_i U^i(t, S/N) - U^i(t, mu)]`` with ``i = x^l`` (exact
    enumeration); right side the first-order noise term plus half the Kimura
    contraction of the intrinsic Hessian.  Returns per-player remainders.
    """
    d = spec.d
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    mu = np.bincount(x, weights=y, minlength=d)[:d] / N
    ks = _outcomes(N, d)
    pmf = multinomial_pmf(ks, mu, N)
    ratio = shuffle_ratios(ks, mu, N)
    comp = _field(U, t)
    step = step if step is not None else (U.dx if hasattr(U, "dx") else 1e-4)
    out = np.empty(N)
    cache = {}
    for l in range(N):
        i = int(x[l])
        if i not in cache:
            h = comp(i)
            base = h(mu)
            lhs = N * sum(p * r[i] * h(k / N) for k, p, r in zip(ks, pmf, ratio) if p > 0) - N * base
            g = intrinsic_gradient(h, mu, step=step)
            hess = intrinsic_hessian(h, mu, step=step)
            rhs = sum(mu[j] * (g[i] - g[j]) for j in range(d) if j != i) + 0.5 * kimura_contraction(hess, mu)
            cache[i] = lhs - rhs
        out[l] = cache[i]
    return out


def common_noise_expansion_check(U, spec, N_list, probes, step=None, slack=0.0):
    """Max remainder per N over probes ``(t, mu)``; each probe ``mu`` is
    realised with unit weights, so ``mu * N`` must be integral."""
    rows = []
    for N in N_list:
        worst = 0.0
        for t, mu in probes:
            counts = np.rint(np.asarray(mu) * N).astype(int)
            if counts.sum() != N or np.any(np.abs(counts / N - np.asarray(mu)) > 1e-12):
                raise ValueError(f"probe {mu} is not reachable with N={N} unit weights")
            x = np.repeat(np.arange(len(mu)), counts)
            r = common_noise_expansion(U, spec, N, t, x, np.ones(N), step=step)
            worst = max(worst, float(np.max(np.abs(r))))
        rows.append({"N": N, "max_remainder": worst})
    vals = [r["max_remainder"] for r in rows]
    passed = all(b <= a * (1 + slack) + 1e-12 for a, b in zip(vals, vals[1:]))
    return verdict("common_noise_expansion", {"N_list": list(N_list), "probes": [(t, list(m)) for t, m in probes]},
                   {"rows": rows}, {"trend": "non-increasing", "slack": slack}, passed, rows)


def surface_candidate(U, t):
    """``(l, x, y) -> U^{x^l}(t, mu_{x,y})``, the mean-field candidate for ``w``."""
    d = U.d

    def z(l, x, y):
        N = len(x)
        mu = np.bincount(np.asarray(x), weights=np.asarray(y, dtype=float), minlength=d)[:d] / N
        return float(U.value(t, mu)[x[l]])
    return z


def nash_remainder(U, spec, N, t, x, y, h=None):
    """``d/dt z + (Nash operator)(z)`` at one point, per player."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    d = spec.d
    mu = np.bincount(x, weights=y, minlength=d)[:d] / N
    h = h if h is not None else max(U.times[1] - U.times[0], 1e-3) * 2
    lo, hi = max(t - h, 0.0), min(t + h, U.T)
    ut = (U.value(hi, mu) - U.value(lo, mu)) / (hi - lo)
    dz = ut[x]
    return dz + nash_operator_at(spec, N, surface_candidate(U, t), x, y)


def interior_probes(N, d, times, min_mu=0.25):
    """Unit-weight configurations whose empirical measure has ``min mu >= min_mu``."""
    probes = []
    for x in itertools.product(range(d), repeat=N):
        mu = np.bincount(x, minlength=d) / N
        if mu.min() >= min_mu - 1e-12:
            probes.extend((t, np.array(x), np.ones(N)) for t in times)
    return probes


def nash_remainder_check(U, spec, N_list, probes=None, times=(0.25, 0.5, 0.75), min_mu=0.25, slack=0.10):
    rows = []
    for N in N_list:
        pr = probes[N] if probes is not None else interior_probes(N, spec.d, times, min_mu)
        worst = max(float(np.max(np.abs(nash_remainder(U, spec, N, t, x, y)))) for t, x, y in pr)
        rows.append({"N": N, "max_remainder": worst, "n_probes": len(pr)})
    vals = [r["max_remainder"] for r in rows]
    passed = all(b <= a * (1 + slack) for a, b in zip(vals, vals[1:]))
    return verdict("nash_remainder", {"N_list": list(N_list), "times": list(times), "min_mu": min_mu,
                                      "noise_convention": spec.noise_convention},
                   {"rows": rows}, {"trend": "non-increasing", "slack": slack}, passed, rows)


# ------------------------------------------------------------ weak convergence


def initial_states(N, p0):
    """Unit-weight configuration whose empirical measure is closest to ``p0``."""
    p0 = np.asarray(p0, dtype=float)
    counts = np.floor(p0 * N).astype(int)
    rest = N - counts.sum()
    order = np.argsort(-(p0 * N - counts), kind="stable")
    counts[order[:rest]] += 1
    return np.repeat(np.arange(p0.size), counts)


def _ensemble(job):
    """Terminal-probe samples of ``mu^N`` for one N (top level so it pickles)."""
    spec, U, N, M, p0, probe_times, seed, nash_dy, refresh, policy_for = job
    x0 = initial_states(N, p0)
    if policy_for is not None:
        policy, label = policy_for(N), "custom"
    elif N <= 4 and U is not None:
        policy, label = equilibrium_policy(solve_nash(spec, N, dy=nash_dy)), "nash"
    elif U is not None:
        policy, label = policy_from_surface(U), "master-feedback"
    else:
        from .policy import ZeroPolicy
        policy, label = ZeroPolicy(spec.d), "zero"
    finals = np.empty((M, len(probe_times), spec.d))
    for m in range(M):
        tr = simulate(spec, N, policy, x0, seed=seed + 1, path=m, refresh=refresh)
        for a, t in enumerate(probe_times):
            finals[m, a] = tr.state_at(t)[2]
    return x0, label, finals


def weak_convergence_study(spec, U, N_list, M, probe_times=None, p0=(0.625, 0.375), seed=0,
                           M_sde=None, sde_dt=1e-3, nash_dy=0.5, refresh=0.02, policy_for=None,
                           workers=1):
    """KS distances between the laws of ``mu^N_t[i]`` and ``P_t[i]``.

    The equilibrium policy is the exact Nash feedback for N <= 4 and the
    master-equation feedback otherwise; each row records which was used.
    ``workers > 1`` runs the N values in separate processes (same results).
    """
    probe_times = (spec.T,) if probe_times is None else tuple(probe_times)
    M_sde = M if M_sde is None else M_sde
    p0 = np.asarray(p0, dtype=float)
    sde = simulate_P(spec, U, p0, sde_dt, seed, n_paths=M_sde)
    jobs = [(spec, U, N, M, p0, probe_times, seed, nash_dy, refresh, policy_for) for N in N_list]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_ensemble, jobs))
    else:
        results = [_ensemble(j) for j in jobs]
    rows, samples = [], []
    for N, (x0, label, finals) in zip(N_list, results):
        for a, t in enumerate(probe_times):
            k = int(round(t / sde.dt))
            Pt = sde.P[:, k]
            ks_vals = [float(stats.ks_2samp(finals[:, a, i], Pt[:, i]).statistic) for i in range(spec.d)]
            mean_n, se_n = _mean_se(finals[:, a, 0])
            mean_p, se_p = _mean_se(Pt[:, 0])
            rows.append({"N": N, "t": t, "policy": label, "ks": ks_vals, "ks_max": max(ks_vals),
                         "mean_N": mean_n, "se_N": se_n, "mean_P": mean_p, "se_P": se_p,
                         "mu0": (np.bincount(x0, minlength=spec.d) / N).tolist()})
        samples.extend({"N": N, "path": m, **{f"mu_T{i + 1}": float(finals[m, -1, i]) for i in range(spec.d)}}
                       for m in range(M))
    # averaging over probe times damps the sampling noise of single KS values
    ks_avg = [float(np.mean([r["ks_max"] for r in rows if r["N"] == N])) for N in N_list]
    passed = all(b < a for a, b in zip(ks_avg, ks_avg[1:]))
    return verdict("weak_convergence", {"N_list": list(N_list), "M": M, "M_sde": M_sde,
                                        "p0": p0.tolist(), "seed": seed,
                                        "probe_times": list(probe_times),
                                        "noise_convention": spec.noise_convention},
                   {"rows": rows, "ks_time_average": ks_avg},
                   {"trend": "strictly decreasing time-averaged KS"}, passed, samples)


# --------------------------------------------------------------- best response


class PerturbedPolicy(Policy):
    """Player ``l`` adds a fixed random table to the base feedback, clipped to
    ``[0, bound]``.  The table depends on the configuration only."""

    def __init__(self, base, l, table, bound, label="perturbed"):
        self.base = base
        self.l = l
        self.table = table
        super().__init__(self._one, bound, name=label)
        self.stationary = base.stationary

    def _one(self, t, x, y, l):
        r = self.base(t, x, y, l)
        c = int(np.dot(np.asarray(x), self.table["place"]))
        r = np.clip(r + self.table["shift"][c], 0.0, self.bound)
        r[x[l]] = 0.0
        return r


def random_perturbations(base, N, d, l, count, size, seed):
    rng = np.random.default_rng(seed)
    place = d ** np.arange(N - 1, -1, -1)
    bound = base.bound + size
    return [PerturbedPolicy(base, l, {"place": place,
                                      "shift": rng.uniform(-size, size, size=(d**N, d))},
                            bound, label=f"perturbed#{a}")
            for a in range(count)]


def best_response_check(policy, spec, N, l, perturbations, x0, y0=None, M=1000, seed=0, refresh=0.02):
    """Paired Monte-Carlo test of ``J^l(deviation) >= J^l(equilibrium) - 3 SE``."""
    base = np.empty(M)
    for m in range(M):
        base[m] = simulate(spec, N, policy, x0, y0, seed=seed, path=m, refresh=refresh).cost[l]
    rows, ok = [], True
    for beta in perturbations:
        mixed = MixedPolicy(policy, beta, l)
        dev = np.empty(M)
        for m in range(M):
            dev[m] = simulate(spec, N, mixed, x0, y0, seed=seed, path=m, refresh=refresh).cost[l]
        diff = dev - base
        dm, dse = _mean_se(diff)
        bm, bse = _mean_se(base)
        passed = dm >= -3 * dse
        ok &= passed
        rows.append({"deviation": beta.name, "J_equilibrium": bm, "J_deviation": float(dev.mean()),
                     "difference": dm, "difference_se": dse, "se_equilibrium": bse, "pass": bool(passed)})
    return verdict("best_response", {"N": N, "l": l, "M": M, "seed": seed, "x0": list(map(int, x0))},
                   {"rows": rows}, {"difference": ">= -3 SE (paired)"}, ok, rows)
