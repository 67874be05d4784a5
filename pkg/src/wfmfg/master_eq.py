"""Backward solver for the master equation on the simplex.

The spatial grid is the lattice ``{m / n : sum m = n}``.  Every first-order
term is a sum of transports along edge directions ``e_j - e_k`` with
nonnegative rates, so it is discretised by a forward difference along that
edge (the upwind side for a backward-in-time equation).  The Kimura diffusion
is written as ``sum_{j<k} p_j p_k (d/dv_jk)^2`` with ``v_jk = e_j - e_k`` and
discretised by a centred second difference along the edge.  Each coefficient
vanishes exactly where its stencil would leave the simplex, so no boundary
condition is needed and the scheme never reads outside the grid.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryError, CFLError, InstabilityError
from .model import a_star_all, hamiltonian_all
from .policy import Policy
from .simplex import (SimplexGrid, empirical_measure, intrinsic_gradient,
                      intrinsic_hessian, kimura_contraction)

MAX_D = 4
FORMAT_VERSION = 1


@dataclass
class ValueSurface:
    """``U^i(t, p)`` tabulated on a time grid and a simplex lattice.

    ``values[k, s, i]`` is ``U^i(times[k], grid.points[s])``.  Space is
    interpolated piecewise linearly on the lattice, time linearly.
    """

    times: np.ndarray
    grid: SimplexGrid
    values: np.ndarray
    dt: float
    sigma2: float
    noise_convention: str
    spec: object = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.grid.parts

    @property
    def dx(self):
        return 1.0 / self.grid.n

    @property
    def T(self):
        return float(self.times[-1])

    def _time_weights(self, t):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, float(np.clip(lam, 0.0, 1.0))

    def slice_at(self, t):
        """Node values at time ``t`` (linear in time), shape (size, d)."""
        if len(self.times) == 1:
            return self.values[0]
        k, lam = self._time_weights(t)
        if lam == 0.0:
            return self.values[k]
        return (1 - lam) * self.values[k] + lam * self.values[k + 1]

    def value(self, t, p):
        """``U(t, p)`` for one point (returns shape (d,)) or many (shape (M, d))."""
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        P = np.atleast_2d(p)
        if np.any(P < -1e-9) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-8):
            raise ValueError("interpolation point outside the simplex")
        out = self.grid.interpolate(self.slice_at(t), P)
        return out[0] if single else out

    def component(self, t, i):
        """Scalar field ``p -> U^i(t, p)``."""
        return lambda p: float(self.value(t, p)[i])

    def header(self):
        return {"format": "wfmfg.ValueSurface", "version": FORMAT_VERSION,
                "d": self.d, "n": self.grid.n, "dx": self.dx, "dt": self.dt,
                "T": self.T, "n_times": len(self.times),
                "sigma2": self.sigma2, "noise_convention": self.noise_convention,
                "layout": "values[time, node, state], nodes = integer compositions of n",
                "spec": self.spec.to_dict() if self.spec is not None else self.meta.get("spec"),
                **{k: v for k, v in self.meta.items() if k != "spec"}}

    def save(self, path):
        np.savez(path, header=np.array(json.dumps(self.header(), sort_keys=True)),
                 times=self.times, nodes=self.grid.m, values=self.values)

    def to_csv(self, path, every=1):
        """Rows ``t, p1..pd, U1..Ud`` for every ``every``-th stored time slice."""
        d = self.d
        pts = self.grid.points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"p{i + 1}" for i in range(d)] + [f"U{i + 1}" for i in range(d)])
            for k in range(0, len(self.times), every):
                t = repr(float(self.times[k]))
                for s in range(self.grid.size):
                    w.writerow([t] + [repr(float(v)) for v in pts[s]]
                               + [repr(float(v)) for v in self.values[k, s]])

    @classmethod
    def load(cls, path, spec=None):
        with np.load(path) as z:
            head = json.loads(str(z["header"]))
            grid = SimplexGrid(head["d"], head["n"])
            if not np.array_equal(grid.m, z["nodes"]):
                raise ValueError("node layout does not match this version")
            return cls(times=z["times"].copy(), grid=grid, values=z["values"].copy(),
                       dt=head["dt"], sigma2=head["sigma2"],
                       noise_convention=head["noise_convention"], spec=spec,
                       meta={k: head[k] for k in ("spec",) if k in head})


def _rate_budget(spec):
    """A priori bound on the feedback ``(U^k - U^j)_+`` and on the drift."""
    return spec.feedback_bound, spec.kappa


def stable_dt(spec, dx):
    """Largest explicit time step for which the scheme stays monotone."""
    d = spec.d
    R, kap = _rate_budget(spec)
    s2 = spec.sigma2
    outflow = (((d - 1) * (kap + R) + s2) / dx
               + s2 * (1.0 - 1.0 / d) / (2.0 * dx**2)
               + (d - 1) * (kap + R))
    return 1.0 / outflow


class _Operator:
    """Spatial operator ``F`` with ``dU/dt + F(U) = 0``, vectorised over nodes."""

    def __init__(self, spec, grid):
        self.spec = spec
        self.grid = grid
        self.d = d = spec.d
        self.h = 1.0 / grid.n
        P = grid.points
        self.P = P
        self.phiP = spec.phi(P)
        self.f = np.asarray(spec.running(P), dtype=float)
        self.s2 = spec.sigma2
        self.pairs = [(k, j) for k in range(d) for j in range(d) if k != j]
        self_idx = np.arange(grid.size)
        # index of p + h (e_j - e_k); self where the move leaves the simplex
        self.nb = {}
        for k, j in self.pairs:
            sh = grid.shift(k, j)
            self.nb[k, j] = np.where(sh >= 0, sh, self_idx)
        self.diff_coef = {(j, k): 0.5 * self.s2 * P[:, j] * P[:, k] / self.h**2
                          for j in range(d) for k in range(j + 1, d)}

    def __call__(self, U):
        P, phiP, h, s2 = self.P, self.phiP, self.h, self.s2
        gap = a_star_all(U)  # gap[s, k, j] = (U^k - U^j)_+
        out = hamiltonian_all(U) + self.f
        # own jumps at the drift rate: sum_j phi(p_j) (U^j - U^i)
        out += np.einsum("sj,sj->s", phiP, U)[:, None] - phiP.sum(axis=1)[:, None] * U
        for k, j in self.pairs:
            D = (U[self.nb[k, j]] - U) / h
            rate = P[:, k] * (phiP[:, j] + gap[:, k, j])
            out += rate[:, None] * D
            # first-order part of the common noise: flow k -> j in equation j
            out[:, j] += s2 * P[:, k] * D[:, j]
        for (j, k), c in self.diff_coef.items():
            out += c[:, None] * (U[self.nb[k, j]] - 2 * U + U[self.nb[j, k]])
        return out


def solve_master(spec, dx, dt=None, save_every=None, check_every=1):
    """Solve the master equation backward from ``U(T) = g``.

    ``dx`` must be ``1/n`` for an integer ``n``.  ``dt`` defaults to 90% of
    :func:`stable_dt`, shrunk so that it divides ``T``.
    """
    if spec.d > MAX_D:
        raise ValueError(f"the lattice solver supports d <= {MAX_D}")
    n = int(round(1.0 / dx))
    if n < 1 or abs(n * dx - 1.0) > 1e-9:
        raise ValueError("dx must be the reciprocal of a positive integer")
    dx = 1.0 / n
    limit = stable_dt(spec, dx)
    if dt is None:
        dt = 0.9 * limit
    steps = max(1, int(np.ceil(spec.T / dt - 1e-9)))
    dt_eff = spec.T / steps
    if dt > limit * (1 + 1e-12):
        raise CFLError(dt, limit)
    grid = SimplexGrid(spec.d, n)
    op = _Operator(spec, grid)
    if save_every is None:
        save_every = max(1, int(np.ceil(steps / 2000)))
    U = np.asarray(spec.terminal(grid.points), dtype=float).copy()
    kept_t = [spec.T]
    kept = [U.copy()]
    for s in range(steps, 0, -1):
        U = U + dt_eff * op(U)
        if check_every and (s % check_every == 0) and not np.all(np.isfinite(U)):
            raise InstabilityError(f"non-finite values at t={(s - 1) * dt_eff:.4g}")
        if (s - 1) % save_every == 0:
            kept_t.append((s - 1) * dt_eff)
            kept.append(U.copy())
    times = np.array(kept_t[::-1])
    values = np.stack(kept[::-1])
    return ValueSurface(times=times, grid=grid, values=values, dt=dt_eff,
                        sigma2=spec.sigma2, noise_convention=spec.noise_convention,
                        spec=spec, meta={"steps": steps, "save_every": save_every})


def residual_master(U, t, p, spec=None):
    """Left-hand side of the master equation evaluated on ``U`` at ``(t, p)``.

    Space derivatives are centred differences with step ``U.dx`` (nodes of the
    lattice when ``p`` is a node); the time derivative is a forward difference
    with the stored time step.
    """
    spec = spec if spec is not None else U.spec
    if spec is None:
        raise ValueError("a GameSpec is needed to evaluate the residual")
    p = np.asarray(p, dtype=float)
    d = U.d
    h = U.dx
    if np.any(p < 2 * h - 1e-12):
        raise BoundaryError("residual stencil needs every coordinate >= 2 dx")
    dt = U.times[1] - U.times[0] if len(U.times) > 1 else U.dt
    t1 = min(t + dt, U.T)
    if t1 <= t:
        t, t1 = t - dt, t
    u = U.value(t, p)
    du = (U.value(t1, p) - u) / (t1 - t)
    phip = spec.phi(p)
    s2 = spec.sigma2
    fp = np.asarray(spec.running(p), dtype=float)
    res = np.empty(d)
    for i in range(d):
        field_i = U.component(t, i)
        g = intrinsic_gradient(field_i, p, step=h)
        hess = intrinsic_hessian(field_i, p, step=h)
        rate = p[None, :] * (phip[:, None] + np.maximum(u[None, :] - u[:, None], 0.0))
        # rate[j, k] = p_k (phi(p_j) + (U^k - U^j)_+), transport along e_j - e_k
        transport = np.sum(rate * (g[:, None] - g[None, :]))
        noise1 = s2 * sum(p[j] * (g[i] - g[j]) for j in range(d) if j != i)
        res[i] = (du[i] + hamiltonian_all(u)[i] + fp[i]
                  + np.sum(phip * (u - u[i])) + transport + noise1
                  + 0.5 * s2 * kimura_contraction(hess, p))
    return res


class SurfacePolicy(Policy):
    """Mean-field feedback ``a*(x^l, U(t, mu_{x,y}))``."""

    def __init__(self, U, bound):
        self.U = U
        super().__init__(self._one, bound, name="master-feedback")

    def _u(self, t, x, y):
        mu = empirical_measure(x, y, self.U.d, tol=1e-7)
        return self.U.value(min(max(t, 0.0), self.U.T), mu)

    def _one(self, t, x, y, l):
        u = self._u(t, x, y)
        r = np.maximum(u[x[l]] - u, 0.0)
        r[x[l]] = 0.0
        return r

    def all_rates(self, t, x, y):
        u = self._u(t, x, y)
        x = np.asarray(x)
        r = np.maximum(u[x][:, None] - u[None, :], 0.0)
        r[np.arange(len(x)), x] = 0.0
        return r


def policy_from_surface(U, bound=None):
    """Feedback policy read off a value surface.  The declared bound defaults
    to the observed oscillation of the tabulated values."""
    if bound is None:
        vals = U.values
        bound = float(np.max(vals.max(axis=2) - vals.min(axis=2))) + 1e-9
    return SurfacePolicy(U, bound)
