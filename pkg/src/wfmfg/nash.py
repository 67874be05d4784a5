"""Normalised Nash system for small N.

Unknowns are ``w^l(t, x, y) = v^l / y^l`` for every player ``l``, every
configuration ``x`` in ``[d]^N`` and every node ``y`` of a lattice of the
weight set ``{y >= 0, sum y = N}``.  The common-noise term is an exact
expectation over all multinomial outcomes, with the shuffled weights
interpolated on the lattice; for each player it is a precomputed sparse,
row-stochastic matrix.
"""
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import CFLError, EnumerationError, InstabilityError
from .model import hamiltonian_all
from .policy import Policy
from .simplex import SimplexGrid, compositions

MAX_NNZ = 30_000_000
MAX_VALUES = 60_000_000


def multinomial_pmf(ks, mu, N):
    """``P(S = k)`` for ``S ~ Mult(N, mu)``; ``ks`` (K, d), ``mu`` (..., d)."""
    mu = np.asarray(mu, dtype=float)
    logc = np.array([math.lgamma(N + 1) - sum(math.lgamma(v + 1) for v in k) for k in ks])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ks == 0, 0.0, ks * np.log(mu[..., None, :]))
    return np.exp(logc + terms.sum(axis=-1))


def shuffle_ratios(ks, mu, N):
    """``k[i] / (N mu[i])`` with the convention 1 where ``mu[i] = 0``."""
    mu = np.asarray(mu, dtype=float)[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mu > 0, ks / (N * mu), 1.0)


class ConfigSpace:
    """All configurations ``x`` in ``[d]^N``, in lexicographic order."""

    def __init__(self, N, d):
        self.N, self.d = N, d
        self.X = np.array(list(itertools.product(range(d), repeat=N)), dtype=np.int64).reshape(-1, N)
        self.size = len(self.X)
        self.place = d ** np.arange(N - 1, -1, -1)
        # nb[c, m, j]: configuration with player m moved to state j
        self.nb = (np.arange(self.size)[:, None, None]
                   + (np.arange(d)[None, None, :] - self.X[:, :, None]) * self.place[None, :, None])

    def index(self, x):
        return int(np.dot(np.asarray(x, dtype=np.int64), self.place))


def _measures(configs, grid, d):
    """``mu[c, g]`` for every configuration and weight node, shape (C, G, d)."""
    N = configs.N
    onehot = np.eye(d)[configs.X]  # (C, N, d)
    return np.einsum("gn,cnd->cgd", grid.points, onehot) / N


def _shuffle_matrices(configs, grid, mu, N, d, eps):
    """Per-player sparse matrices of the tilted shuffle expectation."""
    ks = compositions(N, d)
    C, G = configs.size, grid.size
    nnz = N * C * G * len(ks) * N
    if nnz > MAX_NNZ:
        raise EnumerationError(f"shuffle operator would hold {nnz} entries (limit {MAX_NNZ})")
    rows = [[] for _ in range(N)]
    cols = [[] for _ in range(N)]
    vals = [[] for _ in range(N)]
    if eps == 0:
        return [sparse.identity(C * G, format="csr") for _ in range(N)]
    g_idx = np.arange(G)
    for c in range(C):
        x = configs.X[c]
        m = mu[c]                                   # (G, d)
        pmf = multinomial_pmf(ks, m, N)             # (G, K)
        ratio = shuffle_ratios(ks, m, N)            # (G, K, d)
        ynew = grid.points[:, None, :] * ratio[:, :, x]   # (G, K, N)
        live = pmf > 0
        ynew = np.where(live[..., None], ynew, grid.points[:, None, :])
        s = ynew.sum(axis=2, keepdims=True)
        ynew = ynew * (N / s)
        idx, w = grid.locate(ynew.reshape(-1, N))
        idx = idx.reshape(G, len(ks), -1)
        w = w.reshape(G, len(ks), -1)
        for l in range(N):
            coef = pmf * ratio[:, :, x[l]]          # tilt by player l's own ratio
            ww = coef[..., None] * w
            rows[l].append(np.broadcast_to((c * G + g_idx)[:, None, None], ww.shape).ravel())
            cols[l].append((c * G + idx).ravel())
            vals[l].append(ww.ravel())
    mats = []
    for l in range(N):
        A = sparse.coo_matrix((np.concatenate(vals[l]), (np.concatenate(rows[l]), np.concatenate(cols[l]))),
                              shape=(C * G, C * G)).tocsr()
        A.sum_duplicates()
        A.eliminate_zeros()
        mats.append(A)
    return mats


class _NashOperator:
    """Right-hand side ``F`` of ``dw/dt + F(w) = 0`` on (player, config, node) arrays."""

    def __init__(self, spec, N, grid, configs):
        d = spec.d
        self.spec, self.N, self.d = spec, N, d
        self.grid, self.configs = grid, configs
        self.mu = _measures(configs, grid, d)                     # (C, G, d)
        self.phi = np.moveaxis(spec.phi(self.mu), 2, 1)           # (C, d, G)
        fvals = np.asarray(spec.running(self.mu), dtype=float)    # (C, G, d)
        X = configs.X
        self.f = np.stack([np.take_along_axis(fvals, X[:, l][:, None, None].repeat(grid.size, 1), 2)[..., 0]
                           for l in range(N)])                    # (N, C, G)
        gvals = np.asarray(spec.terminal(self.mu), dtype=float)
        self.g = np.stack([np.take_along_axis(gvals, X[:, l][:, None, None].repeat(grid.size, 1), 2)[..., 0]
                           for l in range(N)])
        self.shuffle = _shuffle_matrices(configs, grid, self.mu, N, d, spec.epsilon)
        self.rate = spec.epsilon * N

    def diffs(self, W, m):
        """``Delta^m W[l]`` for every l: shape (N, C, d, G)."""
        return W[:, self.configs.nb[:, m, :], :] - W[:, :, None, :]

    def __call__(self, W, frozen=None):
        N = self.N
        opp = W if frozen is None else frozen
        out = self.f.copy()
        C, G = W.shape[1], W.shape[2]
        for m in range(N):
            D = self.diffs(W, m)                                   # (N, C, d, G)
            out += np.einsum("cjg,lcjg->lcg", self.phi, D)
            Dm = D[m] if frozen is None else (opp[m][self.configs.nb[:, m, :], :] - opp[m][:, None, :])
            a = np.maximum(-Dm, 0.0)                               # (C, d, G) opponent m's feedback
            others = np.arange(N) != m
            out[others] += np.einsum("cjg,lcjg->lcg", a, D[others])
            # own Hamiltonian: -1/2 sum_j (-Delta^m w^m)_+^2
            out[m] += -0.5 * np.sum(np.maximum(-D[m], 0.0) ** 2, axis=1)
        if self.rate:
            flat = W.reshape(N, C * G)
            for l in range(N):
                out[l] += self.rate * (self.shuffle[l] @ flat[l] - flat[l]).reshape(C, G)
        return out


@dataclass
class NashSolution:
    """``W[k, l, c, g] = w^l(times[k], configs.X[c], grid.points[g])``."""

    spec: object
    N: int
    times: np.ndarray
    grid: SimplexGrid
    configs: ConfigSpace
    W: np.ndarray
    dt: float
    scheme: str
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.spec.d

    @property
    def dy(self):
        return self.grid.step

    def _time(self, t):
        T = self.times[-1]
        if t < self.times[0] - 1e-12 or t > T + 1e-12:
            raise ValueError(f"t={t} outside the solved horizon")
        if len(self.times) == 1:
            return 0, 0.0
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        lam = float(np.clip((t - self.times[k]) / (self.times[k + 1] - self.times[k]), 0.0, 1.0))
        return k, lam

    def slice_at(self, t):
        k, lam = self._time(t)
        if lam == 0.0:
            return self.W[k]
        return (1 - lam) * self.W[k] + lam * self.W[k + 1]

    def value(self, t, x, y, l=None):
        """``w^l(t, x, y)`` for one configuration; all players when ``l`` is None."""
        c = self.configs.index(x)
        idx, w = self.grid.locate(np.asarray(y, dtype=float)[None, :])
        k, lam = self._time(t)
        vals = self.W[k][:, c, idx[0]] @ w[0]
        if lam:
            vals = (1 - lam) * vals + lam * (self.W[k + 1][:, c, idx[0]] @ w[0])
        return vals if l is None else float(vals[l])

    def value_fn(self, t):
        """``(l, x, y) -> w^l(t, x, y)`` at a fixed time."""
        return lambda l, x, y: self.value(t, x, y, l)

    def mu_nodes(self):
        return _measures(self.configs, self.grid, self.d)

    def header(self):
        return {"format": "wfmfg.NashSolution", "N": self.N, "d": self.d,
                "dy": self.dy, "n": self.grid.n, "dt": self.dt, "scheme": self.scheme,
                "n_times": len(self.times), "T": float(self.times[-1]),
                "layout": "W[time, player, config, node]; configs lexicographic in [d]^N",
                "spec": self.spec.to_dict(), **self.meta}

    def save(self, path):
        np.savez(path, header=np.array(json.dumps(self.header(), sort_keys=True)),
                 times=self.times, nodes=self.grid.m, configs=self.configs.X, W=self.W)

    def to_csv(self, path, U=None, k=0):
        """Rows ``t, x, y, l, w`` (plus ``z`` and ``gap`` when a value surface is given)."""
        import csv
        mu = self.mu_nodes()
        t = float(self.times[k])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "l", "w"] + (["z", "gap"] if U is not None else []))
            Uv = U.value(t, mu.reshape(-1, self.d)).reshape(mu.shape) if U is not None else None
            for c in range(self.configs.size):
                xs = " ".join(map(str, self.configs.X[c]))
                for g in range(self.grid.size):
                    ys = " ".join(repr(float(v)) for v in self.grid.points[g])
                    for l in range(self.N):
                        row = [repr(t), xs, ys, l, repr(float(self.W[k, l, c, g]))]
                        if Uv is not None:
                            z = float(Uv[c, g, self.configs.X[c, l]])
                            row += [repr(z), repr(abs(z - float(self.W[k, l, c, g])))]
                        w.writerow(row)


def nash_dt_limit(spec, N):
    """Largest step allowed by ``dt (N d M + eps N) <= 1``."""
    M = spec.rate_bound().M
    return 1.0 / (N * spec.d * M + spec.epsilon * N)


def _step(op, W, dt, scheme, frozen=None):
    if scheme == "euler":
        return W + dt * op(W, frozen)
    # three-stage strong-stability-preserving Runge-Kutta: convex combinations of Euler steps
    W1 = W + dt * op(W, frozen)
    W2 = 0.75 * W + 0.25 * (W1 + dt * op(W1, frozen))
    return W / 3.0 + 2.0 / 3.0 * (W2 + dt * op(W2, frozen))


def _weight_grid(N, dy):
    n = int(round(N / dy))
    if n < 1 or abs(n * dy - N) > 1e-9:
        raise ValueError("dy must divide N")
    return SimplexGrid(N, n, scale=N)


def solve_nash(spec, N, dt=None, dy=None, scheme="ssprk3", save_every=1, frozen=None, _op=None):
    """Solve the normalised Nash system backward from the terminal costs.

    ``dy`` is the weight-lattice step (``N / dy`` must be an integer; default
    0.5, or 1 for N = 1).  ``dt`` defaults to half of :func:`nash_dt_limit`.
    ``frozen`` (a NashSolution on the same grids) freezes the opponents'
    feedback, which gives one sweep of the fixed-point map.
    """
    if N < 1 or N > 4:
        raise ValueError("the Nash solver supports 1 <= N <= 4")
    if spec.d > 3:
        raise ValueError("the Nash solver supports d <= 3")
    if scheme not in ("euler", "ssprk3"):
        raise ValueError("scheme must be 'euler' or 'ssprk3'")
    dy = (1.0 if N == 1 else 0.5) if dy is None else dy
    grid = _weight_grid(N, dy)
    configs = ConfigSpace(N, spec.d)
    limit = nash_dt_limit(spec, N)
    dt = 0.5 * limit if dt is None else dt
    if dt > limit * (1 + 1e-12):
        raise CFLError(dt, limit)
    steps = max(1, int(np.ceil(spec.T / dt - 1e-9)))
    dt = spec.T / steps
    n_values = (steps // save_every + 2) * N * configs.size * grid.size
    if n_values > MAX_VALUES:
        raise EnumerationError(f"storing the solution needs {n_values} values; raise save_every")
    op = _op if _op is not None else _NashOperator(spec, N, grid, configs)
    W = op.g.copy()
    kept_t, kept = [spec.T], [W.copy()]
    for s in range(steps, 0, -1):
        fz = None if frozen is None else frozen.slice_at(s * dt)
        W = _step(op, W, dt, scheme, fz)
        if not np.all(np.isfinite(W)):
            raise InstabilityError(f"non-finite values at t={(s - 1) * dt:.4g}")
        if (s - 1) % save_every == 0:
            kept_t.append((s - 1) * dt)
            kept.append(W.copy())
    sol = NashSolution(spec=spec, N=N, times=np.array(kept_t[::-1]), grid=grid, configs=configs,
                       W=np.stack(kept[::-1]), dt=dt, scheme=scheme,
                       meta={"steps": steps, "save_every": save_every})
    sol._op = op
    return sol


def picard_sweep(sol):
    """Re-solve with the opponents' feedback frozen at ``sol``; returns the new
    solution and the sup-distance to ``sol``."""
    if sol.meta.get("save_every", 1) != 1:
        raise ValueError("a fixed-point sweep needs every time slice")
    new = solve_nash(sol.spec, sol.N, dt=sol.dt, dy=sol.dy, scheme=sol.scheme,
                     frozen=sol, _op=getattr(sol, "_op", None))
    return new, float(np.max(np.abs(new.W - sol.W)))


class NashPolicy(Policy):
    """Equilibrium feedback ``(w^l(x) - w^l(j, x^-l))_+`` interpolated in (t, y)."""

    def __init__(self, sol, bound=None):
        self.sol = sol
        bound = sol.spec.feedback_bound if bound is None else bound
        super().__init__(self._one, bound, name=f"nash(N={sol.N})")
        self._last = (None, None)

    def _locate(self, y):
        # weights change only at shuffles, so consecutive calls mostly repeat y
        key = np.asarray(y, dtype=float).tobytes()
        if self._last[0] != key:
            self._last = (key, self.sol.grid.locate(np.asarray(y, dtype=float)[None, :]))
        return self._last[1]

    def all_rates(self, t, x, y):
        sol = self.sol
        N = sol.N
        c = sol.configs.index(x)
        idx, w = self._locate(y)
        k, lam = sol._time(min(max(t, sol.times[0]), sol.times[-1]))
        cn = sol.configs.nb[c]                       # (N, d)
        players = np.arange(N)[:, None]
        vals = sol.W[k][players, cn][..., idx[0]] @ w[0]
        if lam:
            vals = (1 - lam) * vals + lam * (sol.W[k + 1][players, cn][..., idx[0]] @ w[0])
        own = vals[np.arange(N), np.asarray(x)]
        r = np.maximum(own[:, None] - vals, 0.0)
        r[np.arange(N), np.asarray(x)] = 0.0
        return r

    def _one(self, t, x, y, l):
        return self.all_rates(t, x, y)[l]


def equilibrium_policy(sol):
    return NashPolicy(sol)


def nash_operator_at(spec, N, wfun, x, y):
    """The spatial part of the normalised system at one point ``(x, y)``.

    ``wfun(l, x, y)`` supplies the candidate values; shuffled weights are fed
    to ``wfun`` directly, so no lattice is involved here.
    """
    d = spec.d
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    mu = np.bincount(x, weights=y, minlength=d)[:d] / N
    phi = spec.phi(mu)
    f = np.asarray(spec.running(mu), dtype=float)
    # vals[l, m, j] = w^l((j, x^-m), y)
    vals = np.empty((N, N, d))
    for m in range(N):
        for j in range(d):
            xm = x.copy()
            xm[m] = j
            for l in range(N):
                vals[l, m, j] = wfun(l, xm, y)
    base = np.array([vals[l, 0, x[0]] for l in range(N)])
    D = vals - base[:, None, None]                  # Delta^m w^l [j]
    a = np.maximum(-np.array([D[m, m] for m in range(N)]), 0.0)   # a[m, j] opponents' feedback
    out = np.empty(N)
    ks = compositions(N, d)
    pmf = multinomial_pmf(ks, mu, N)
    ratio = shuffle_ratios(ks, mu, N)
    for l in range(N):
        tot = f[x[l]] + hamiltonian_all(vals[l, l])[x[l]]
        for m in range(N):
            rate = phi + (a[m] if m != l else 0.0)
            tot += float(np.dot(rate, D[l, m]))
        if spec.epsilon:
            acc = 0.0
            for kk, p, r in zip(ks, pmf, ratio):
                if p == 0:
                    continue
                ynew = y * r[x]
                ynew *= N / ynew.sum()
                acc += p * r[x[l]] * (wfun(l, x, ynew) - base[l])
            tot += spec.epsilon * N * acc
        out[l] = tot
    return out


def nash_residual(sol, t, x, y):
    """Discrete left-hand side of the normalised system on ``sol`` at (t, x, y):
    forward time difference plus the operator at ``t + dt``."""
    k, _ = sol._time(t)
    k = min(k, len(sol.times) - 2)
    t0, t1 = sol.times[k], sol.times[k + 1]
    dw = (sol.value(t1, x, y) - sol.value(t0, x, y)) / (t1 - t0)
    return dw + nash_operator_at(sol.spec, sol.N, sol.value_fn(t1), x, y)


def theta_weight(mu, y, N, eps_exp=1 / 8, ell=3):
    """``prod_i (N^-eps + mu[i])^(1/d) * (N^-1 sum_m y_m^ell)^-1``."""
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    d = mu.shape[-1]
    prod = np.prod((N ** (-eps_exp) + mu) ** (1.0 / d), axis=-1)
    return prod / np.mean(np.abs(y) ** ell, axis=-1)


def value_gap(sol, U, eps_exp=1 / 8, ell=3, relaxed_min_mu=None):
    """Distance between ``w`` and ``z^l = U^{x^l}(t, mu_{x,y})`` over all nodes.

    Returns per-region sups of ``|z - w|`` and of the weighted square
    ``theta (z - w)^2``.  Regions: ``strict`` is the localisation set
    ``{min mu >= N^-eps, max y <= N^(1-eps)/2}`` (empty for small N),
    ``unit`` is the equal-weight slice ``y = (1, ..., 1)``, ``relaxed``
    requires ``min mu >= relaxed_min_mu`` (default ``1/(2d)``) and
    ``max y <= 2``, ``all`` is every node.
    """
    N, d = sol.N, sol.d
    mu = sol.mu_nodes()                                       # (C, G, d)
    X = sol.configs.X
    ypts = sol.grid.points
    th = theta_weight(mu, ypts[None, :, :], N, eps_exp, ell)  # (C, G)
    lo, hi = N ** (-eps_exp), 0.5 * N ** (1 - eps_exp)
    relaxed_min_mu = 1.0 / (2 * d) if relaxed_min_mu is None else relaxed_min_mu
    masks = {"all": np.ones(mu.shape[:2], dtype=bool),
             "unit": np.broadcast_to(np.all(np.abs(ypts - 1.0) < 1e-9, axis=1)[None, :], mu.shape[:2]),
             "relaxed": (mu.min(axis=2) >= relaxed_min_mu - 1e-12) & (ypts.max(axis=1)[None, :] <= 2 + 1e-12),
             "strict": (mu.min(axis=2) >= lo - 1e-12) & (ypts.max(axis=1)[None, :] <= hi + 1e-12)}
    gaps = np.zeros((len(sol.times), N) + mu.shape[:2])
    for k, t in enumerate(sol.times):
        Uv = U.value(min(t, U.T), mu.reshape(-1, d)).reshape(mu.shape)
        for l in range(N):
            z = np.take_along_axis(Uv, X[:, l][:, None, None].repeat(mu.shape[1], 1), 2)[..., 0]
            gaps[k, l] = np.abs(z - sol.W[k, l])
    out = {"N": N, "eps_exp": eps_exp, "ell": ell, "thresholds": {"min_mu": lo, "max_y": hi}}
    for name, mask in masks.items():
        if not mask.any():
            out[name] = {"raw_sup": None, "weighted_sup": None, "nodes": 0,
                         "raw_per_player": None}
            continue
        g = gaps[:, :, mask]                                  # (K, N, nodes)
        wsq = th[mask][None, None, :] * g**2
        out[name] = {"raw_sup": float(g.max()), "weighted_sup": float(wsq.max()),
                     "nodes": int(mask.sum()),
                     "raw_per_player": [float(v) for v in g.max(axis=(0, 2))]}
    return out
