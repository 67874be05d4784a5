"""Event-driven simulation of the N-player weighted game.

Players jump ``x^l -> j`` at rate ``phi(mu[j]) + alpha^l[j]``; at total rate
``eps N`` a Wright-Fisher shuffle draws ``k ~ Mult(N, mu)`` and rescales every
weight by ``k[x^l] / (N mu[x^l])``.  In the tilted variant (``iota=1``) the
shuffle law is size-biased by the tagged player's ratio, which is sampled
exactly as ``e_{x^n} + Mult(N - 1, mu)``.

Policies may depend on time, so rates are held piecewise constant on a
refresh grid of step ``refresh`` (evaluated at cell midpoints) as well as
between events; the Gillespie step is exact for those frozen rates.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import RateOverflowError, SupportError
from .rng import COMMON, IDIOSYNCRATIC, PathStreams
from .simplex import empirical_measure

MODULE = "nplayer"
IDIO, SHUFFLE = 0, 1
MASS_TOL = 1e-9


def multinomial_sample(N, mu, rng):
    """Draw ``k ~ Mult(N, mu)`` by sequential binomials."""
    mu = np.asarray(mu, dtype=float)
    k = np.zeros(mu.size, dtype=np.int64)
    left, rest = int(N), 1.0
    for i in range(mu.size - 1):
        if left == 0:
            break
        q = 0.0 if rest <= 0 else min(max(mu[i] / rest, 0.0), 1.0)
        k[i] = rng.binomial(left, q)
        left -= k[i]
        rest -= mu[i]
    k[-1] += left
    if left and mu[-1] <= 0:
        # rounding left mass on an empty last state; put it on the largest state
        k[-1] -= left
        k[int(np.argmax(mu))] += left
    return k


def shuffle_weights(x, y, k, d=None):
    """Rescale weights after a shuffle with outcome ``k`` and renormalise to N."""
    x = np.asarray(x, dtype=int)
    y = np.asarray(y, dtype=float)
    k = np.asarray(k)
    N = x.size
    d = k.size if d is None else d
    if int(k.sum()) != N:
        raise ValueError("the shuffle outcome must sum to N")
    mass = np.bincount(x, weights=y, minlength=d)[:d]
    if np.any((k > 0) & (mass <= 0)):
        raise SupportError(f"shuffle {k.tolist()} charges an empty state")
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(mass > 0, k / mass, 1.0)
    out = y * factor[x]
    total = out.sum()
    if total > 0 and total != N:
        out *= N / total
    return out


@dataclass
class TrajectoryRecord:
    """Event log of one path.  Row 0 of ``X, Y, MU`` is the initial state; row
    ``e + 1`` is the state just after event ``e``."""

    N: int
    d: int
    t0: float
    T: float
    iota: int
    tagged: int
    seed: int
    path: int
    times: np.ndarray
    kinds: np.ndarray
    who: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    MU: np.ndarray
    shuffles: np.ndarray
    cost: np.ndarray
    cost_unweighted: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def n_events(self):
        return len(self.times)

    def _row(self, t):
        return int(np.searchsorted(self.times, t, side="right"))

    def state_at(self, t):
        r = self._row(t)
        return self.X[r], self.Y[r], self.MU[r]

    def terminal(self):
        return self.X[-1], self.Y[-1], self.MU[-1]

    def segments(self, until=None):
        """Constant pieces ``(start, end, row)`` of the path on ``[t0, until]``."""
        until = self.T if until is None else min(until, self.T)
        edges = np.concatenate([[self.t0], self.times[self.times < until], [until]])
        return [(edges[r], edges[r + 1], r) for r in range(len(edges) - 1)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "kind", "l_or_k", "x", "y"])
            w.writerow([repr(self.t0), "init", "",
                        " ".join(map(str, self.X[0])), " ".join(repr(float(v)) for v in self.Y[0])])
            s = 0
            for e in range(self.n_events):
                if self.kinds[e] == IDIO:
                    tag, what = "jump", str(int(self.who[e]))
                else:
                    tag, what = "shuffle", " ".join(map(str, self.shuffles[s]))
                    s += 1
                w.writerow([repr(float(self.times[e])), tag, what,
                            " ".join(map(str, self.X[e + 1])),
                            " ".join(repr(float(v)) for v in self.Y[e + 1])])

    def manifest(self, spec=None):
        return {"N": self.N, "d": self.d, "t0": self.t0, "T": self.T, "iota": self.iota,
                "tagged": self.tagged, "seed": self.seed, "path": self.path,
                "n_events": self.n_events, "stats": self.stats,
                "spec": spec.to_dict() if spec is not None else None}

    def write(self, stem, spec=None):
        self.to_csv(f"{stem}.csv")
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.manifest(spec), fh, indent=2, sort_keys=True)


def _check_init(x, y, N, d):
    x = np.asarray(x, dtype=np.int64).copy()
    y = np.asarray(y, dtype=float).copy()
    if x.shape != (N,) or y.shape != (N,):
        raise ValueError(f"initial configuration must have N={N} players")
    if np.any((x < 0) | (x >= d)):
        raise ValueError("states must lie in range(d)")
    empirical_measure(x, y, d)  # validates weights
    return x, y


def simulate(spec, N, policy, x0, y0=None, t0=0.0, iota=0, tagged=None, seed=0,
             path=0, refresh=0.02, T=None, check_rates=True):
    """Simulate one path on ``[t0, T]`` and return its :class:`TrajectoryRecord`."""
    d = spec.d
    T = spec.T if T is None else T
    y0 = np.ones(N) if y0 is None else y0
    x, y = _check_init(x0, y0, N, d)
    if iota not in (0, 1):
        raise ValueError("iota must be 0 or 1")
    if iota == 1 and (tagged is None or not 0 <= tagged < N):
        raise ValueError("the tilted game needs a tagged player in range(N)")
    streams = PathStreams(seed, MODULE, path)
    clock, common = streams[IDIOSYNCRATIC], streams[COMMON]
    shuffle_rate = spec.epsilon * N
    players = np.arange(N)

    times, kinds, who, shuffles = [], [], [], []
    Xs, Ys, MUs = [x.copy()], [y.copy()], []
    mu = np.bincount(x, weights=y, minlength=d)[:d] / N
    MUs.append(mu.copy())
    cost = np.zeros(N)
    cost_u = np.zeros(N)
    max_mass_err = abs(y.sum() - N)

    t = t0
    cell = 0
    while t < T:
        # rates frozen until the next event or the end of the refresh cell
        if policy.stationary:
            cell_end, t_eval = T, t
        else:
            cell_end = min(T, t0 + (cell + 1) * refresh)
            t_eval = 0.5 * (t0 + cell * refresh + cell_end)
        alpha = np.asarray(policy.all_rates(t_eval, x, y), dtype=float)
        if check_rates and alpha.size and alpha.max() > policy.bound + 1e-9:
            raise RateOverflowError(f"policy rate {alpha.max():.6g} exceeds its bound {policy.bound:.6g}")
        rates = spec.phi(mu)[None, :] + alpha
        rates[players, x] = 0.0
        run = 0.5 * np.sum(alpha**2, axis=1) - 0.5 * alpha[players, x] ** 2
        run = run + np.asarray(spec.running(mu), dtype=float)[x]
        total = rates.sum() + shuffle_rate
        wait = clock.exponential(1.0 / total) if total > 0 else np.inf
        t_next = t + wait
        stop = min(t_next, cell_end)
        cost += (stop - t) * y * run
        cost_u += (stop - t) * run
        if t_next >= cell_end:
            t = cell_end
            cell += 1
            continue
        t = t_next
        u = clock.random() * total
        flat = rates.ravel()
        if u < flat.sum():
            e = int(np.searchsorted(np.cumsum(flat), u, side="right"))
            e = min(e, flat.size - 1)
            l, j = divmod(e, d)
            x = x.copy()
            x[l] = j
            kinds.append(IDIO)
            who.append(l)
        else:
            if iota == 1 and mu[x[tagged]] > 0:
                k = multinomial_sample(N - 1, mu, common)
                k[x[tagged]] += 1
            else:
                k = multinomial_sample(N, mu, common)
            y = shuffle_weights(x, y, k, d)
            kinds.append(SHUFFLE)
            who.append(-1)
            shuffles.append(k)
            max_mass_err = max(max_mass_err, abs(y.sum() - N))
        mu = np.bincount(x, weights=y, minlength=d)[:d] / N
        if kinds[-1] == SHUFFLE:
            mu = np.asarray(shuffles[-1], dtype=float) / N
        times.append(t)
        Xs.append(x.copy())
        Ys.append(y.copy())
        MUs.append(mu.copy())

    x_T, y_T, mu_T = Xs[-1], Ys[-1], MUs[-1]
    g = np.asarray(spec.terminal(mu_T), dtype=float)[x_T]
    cost += y_T * g
    cost_u += g
    return TrajectoryRecord(
        N=N, d=d, t0=t0, T=T, iota=iota, tagged=-1 if tagged is None else int(tagged),
        seed=int(seed), path=int(path), times=np.array(times), kinds=np.array(kinds, dtype=np.int8),
        who=np.array(who, dtype=np.int64), X=np.array(Xs), Y=np.array(Ys), MU=np.array(MUs),
        shuffles=np.array(shuffles, dtype=np.int64).reshape(-1, d),
        cost=cost, cost_unweighted=cost_u,
        stats={"max_mass_error": float(max_mass_err), "policy": policy.name,
               "refresh": refresh})


def estimate_cost(spec, N, policy, x0, y0=None, t0=0.0, l=0, M=1000, seed=0,
                  iota=0, tagged=None, weighted=True, refresh=0.02, return_samples=False):
    """Monte-Carlo estimate of player ``l``'s cost: (mean, standard error).

    Path ``m`` uses the streams of path index ``m``, so two calls with the same
    seed are paired.  ``weighted=False`` drops the weight factor, which gives
    the cost of the tilted game when ``iota=1``.
    """
    samples = np.empty(M)
    for m in range(M):
        tr = simulate(spec, N, policy, x0, y0, t0=t0, iota=iota, tagged=tagged,
                      seed=seed, path=m, refresh=refresh)
        samples[m] = (tr.cost if weighted else tr.cost_unweighted)[l]
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    return (mean, se, samples) if return_samples else (mean, se)


def tau_thresholds(N, eps_exp):
    return N ** (-eps_exp), 0.5 * N ** (1.0 - eps_exp)


def stopping_time_tau(traj, eps_exp):
    """First time ``min mu < N^-eps`` or ``max Y > N^(1-eps) / 2``, capped at T."""
    if not 0 < eps_exp < 0.25:
        raise ValueError("the boundary exponent must lie in (0, 1/4)")
    lo, hi = tau_thresholds(traj.N, eps_exp)
    bad = (traj.MU.min(axis=1) < lo) | (traj.Y.max(axis=1) > hi)
    if bad[0]:
        return traj.t0
    hits = np.nonzero(bad[1:])[0]
    return float(traj.times[hits[0]]) if hits.size else traj.T


def integral_inverse_mu(traj, until=None):
    """``int_{t0}^{until} 1 / mu_t[i] dt`` for every state (inf if mu hits 0)."""
    out = np.zeros(traj.d)
    for a, b, r in traj.segments(until):
        if b > a:
            with np.errstate(divide="ignore"):
                out += (b - a) / traj.MU[r]
    return out


def weight_moment(traj, t, ell):
    """``(1/N) sum_l Y^l_t ** ell``."""
    _, y, _ = traj.state_at(t)
    return float(np.mean(y**ell))
