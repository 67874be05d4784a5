"""Euler-Maruyama simulation of the mean-field environment P and of the
representative player's density Q."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InstabilityError
from .model import a_star_all
from .rng import GAUSSIAN, stream

MODULE = "limit_sde"


def _pairs(d):
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


@dataclass
class SdePath:
    """An ensemble of paths; ``P[m, k]`` is path ``m`` at ``times[k]``.

    ``dW[m, k, a]`` is the Brownian increment of the pair ``pairs[a] = (i, j)``,
    i < j, over step k; the pair (j, i) receives its negative.
    """

    times: np.ndarray
    P: np.ndarray
    dW: np.ndarray
    pairs: list
    seed: int
    sigma2: float
    noise_convention: str
    Q: np.ndarray = None
    stats: dict = field(default_factory=dict)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_paths(self):
        return self.P.shape[0]

    def to_csv(self, path, every=1):
        d = self.P.shape[2]
        cols = ["path", "t"] + [f"P{i + 1}" for i in range(d)]
        if self.Q is not None:
            cols += [f"Q{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for m in range(self.n_paths):
                for k in range(0, len(self.times), every):
                    row = [m, repr(float(self.times[k]))] + [repr(float(v)) for v in self.P[m, k]]
                    if self.Q is not None:
                        row += [repr(float(v)) for v in self.Q[m, k]]
                    w.writerow(row)

    def sidecar(self, spec=None):
        return {"seed": self.seed, "sigma2": self.sigma2,
                "noise_convention": self.noise_convention, "dt": self.dt,
                "n_paths": self.n_paths, "n_steps": len(self.times) - 1,
                "spec": spec.to_dict() if spec is not None else None,
                "stats": self.stats}

    def write(self, stem, spec=None, every=1):
        self.to_csv(f"{stem}.csv", every=every)
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.sidecar(spec), fh, indent=2, sort_keys=True)


def gaussian_increments(seed, n_paths, n_steps, n_pairs, dt, first_path=0):
    """Brownian increments, one independent stream per path."""
    out = np.empty((n_paths, n_steps, n_pairs))
    for m in range(n_paths):
        out[m] = stream(seed, MODULE, first_path + m, GAUSSIAN).standard_normal((n_steps, n_pairs))
    return out * np.sqrt(dt)


def _feedback(U, t, P):
    """``[m, i, j] = (U^i - U^j)_+`` at the current environments."""
    if U is None:
        return np.zeros(P.shape + (P.shape[1],))
    return a_star_all(U.value(min(t, U.T), P))


def simulate_P(spec, U, p0, dt, seed, n_paths=1, T=None):
    """Euler-Maruyama ensemble for the environment driven by the feedback of ``U``.

    ``U=None`` stands for a constant surface (no control).  Negative coordinates
    are clipped after each step and the point renormalised; the fraction of
    clipped steps and the largest pre-projection sum error are in ``stats``.
    """
    p0 = np.asarray(p0, dtype=float)
    d = spec.d
    if p0.shape != (d,) or np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-9:
        raise ValueError("p0 must be a point of the simplex")
    T = spec.T if T is None else T
    K = max(1, int(round(T / dt)))
    dt = T / K
    times = np.linspace(0.0, T, K + 1)
    pairs = _pairs(d)
    pi = np.array([a for a, _ in pairs], dtype=int)
    pj = np.array([b for _, b in pairs], dtype=int)
    sigma = np.sqrt(spec.sigma2)
    dW = gaussian_increments(seed, n_paths, K, len(pairs), dt)
    P = np.empty((n_paths, K + 1, d))
    P[:, 0] = p0
    cur = np.tile(p0, (n_paths, 1))
    clipped = 0
    sum_err = 0.0
    for k in range(K):
        phiP = spec.phi(cur)
        a = _feedback(U, times[k], cur)
        # outflow[m, i, j]: rate of mass i -> j
        flow = cur[:, :, None] * (phiP[:, None, :] + a)
        idx = np.arange(d)
        flow[:, idx, idx] = 0.0
        drift = flow.sum(axis=1) - flow.sum(axis=2)
        amp = sigma * np.sqrt(cur[:, pi] * cur[:, pj]) * dW[:, k]
        noise = np.zeros_like(cur)
        np.add.at(noise.T, pi, amp.T)
        np.add.at(noise.T, pj, -amp.T)
        nxt = cur + drift * dt + noise
        sum_err = max(sum_err, float(np.max(np.abs(nxt.sum(axis=1) - 1.0))))
        neg = np.any(nxt < 0, axis=1)
        clipped += int(neg.sum())
        if not np.all(np.isfinite(nxt)):
            raise InstabilityError(f"non-finite environment at t={times[k + 1]:.4g}")
        nxt = np.maximum(nxt, 0.0)
        nxt /= nxt.sum(axis=1, keepdims=True)
        cur = nxt
        P[:, k + 1] = cur
    stats = {"max_sum_error_before_projection": sum_err,
             "clip_fraction": clipped / (K * n_paths)}
    return SdePath(times=times, P=P, dW=dW, pairs=pairs, seed=int(seed),
                   sigma2=spec.sigma2, noise_convention=spec.noise_convention, stats=stats)


def surface_feedback(U):
    """Representative-player feedback ``beta(t, P)[m, i, j] = (U^i - U^j)_+``."""
    return lambda t, P: _feedback(U, t, P)


def simulate_Q(spec, beta, path, q0=None):
    """Linear dynamics of the representative player's density along ``path``.

    ``beta(t, P)`` returns rates of shape (M, d, d), ``[m, i, j]`` being the rate
    i -> j.  The same Brownian increments as ``path`` are reused.  Also returns
    the per-path cost ``sum_i Q_T^i g(i, P_T) + int Q^i (f + |beta|^2 / 2) dt``.
    """
    if path.dW is None:
        raise ValueError("the path carries no Brownian increments")
    M, K1, d = path.P.shape
    K = K1 - 1
    dt = path.dt
    q0 = path.P[0, 0] if q0 is None else np.asarray(q0, dtype=float)
    sigma = np.sqrt(spec.sigma2)
    pi = np.array([a for a, _ in path.pairs], dtype=int)
    pj = np.array([b for _, b in path.pairs], dtype=int)
    Q = np.empty_like(path.P)
    Q[:, 0] = q0
    cur = np.tile(q0, (M, 1))
    running = np.zeros(M)
    idx = np.arange(d)
    for k in range(K):
        P = path.P[:, k]
        b = np.array(beta(path.times[k], P), dtype=float)
        b[:, idx, idx] = 0.0
        f = np.asarray(spec.running(P), dtype=float)
        running += np.sum(cur * (f + 0.5 * np.sum(b**2, axis=2)), axis=1) * dt
        rate = spec.phi(P)[:, None, :] + b
        rate[:, idx, idx] = 0.0
        flow = cur[:, :, None] * rate
        drift = flow.sum(axis=1) - flow.sum(axis=2)
        # Q^i sqrt(P^j / P^i) dW^{ij}, with dW^{ji} = -dW^{ij}
        with np.errstate(divide="ignore", invalid="ignore"):
            r_ij = np.where(P[:, pi] > 0, np.sqrt(P[:, pj] / P[:, pi]), 0.0)
            r_ji = np.where(P[:, pj] > 0, np.sqrt(P[:, pi] / P[:, pj]), 0.0)
        dw = sigma * path.dW[:, k]
        noise = np.zeros_like(cur)
        np.add.at(noise.T, pi, (cur[:, pi] * r_ij * dw).T)
        np.add.at(noise.T, pj, (-cur[:, pj] * r_ji * dw).T)
        cur = np.maximum(cur + drift * dt + noise, 0.0)
        Q[:, k + 1] = cur
    g = np.asarray(spec.terminal(path.P[:, -1]), dtype=float)
    cost = running + np.sum(cur * g, axis=1)
    path.Q = Q
    return path, cost


def mfg_cost(spec, beta, path, q0=None):
    """Monte-Carlo estimate of the representative cost: (mean, standard error)."""
    _, cost = simulate_Q(spec, beta, path, q0)
    return float(cost.mean()), float(cost.std(ddof=1) / np.sqrt(len(cost))) if len(cost) > 1 else 0.0
