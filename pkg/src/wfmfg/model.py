"""Game primitives: inward drift, Hamiltonian, optimal feedback, presets."""
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .simplex import SimplexGrid

CONVENTIONS = ("eps2", "eps")


def phi(r, kappa, delta):
    """Inward drift rate: ``kappa`` below ``delta``, 0 above ``2 delta``, linear between."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("phi is defined on [0, inf)")
    out = kappa * np.clip((2 * delta - r) / delta, 0.0, 1.0)
    return out if out.ndim else float(out)


def hamiltonian(i, u):
    u = np.asarray(u, dtype=float)
    return -0.5 * float(np.sum(np.maximum(u[i] - u, 0.0) ** 2))


def a_star(i, u):
    """Minimiser of the Hamiltonian, as a length-d vector with entry ``i`` set to 0."""
    u = np.asarray(u, dtype=float)
    a = np.maximum(u[i] - u, 0.0)
    a[i] = 0.0
    return a


def lagrangian(i, alpha, d=None):
    """Control cost ``0.5 * sum_{j != i} alpha[j]**2``.

    ``alpha`` lists the rates toward the d-1 states other than ``i``; pass ``d``
    to supply a full length-d vector instead, in which case entry ``i`` is ignored.
    """
    alpha = np.asarray(alpha, dtype=float)
    if d is not None and alpha.size == d:
        alpha = np.delete(alpha, i)
    if np.any(alpha < 0):
        raise ValueError("transition rates must be nonnegative")
    return 0.5 * float(np.sum(alpha**2))


def hamiltonian_all(u):
    """``H(i, u)`` for every i; ``u`` has shape (..., d)."""
    diff = np.maximum(u[..., :, None] - u[..., None, :], 0.0)
    return -0.5 * np.sum(diff**2, axis=-1)


def a_star_all(u):
    """Feedback rates ``[..., i, j] = (u_i - u_j)_+``."""
    return np.maximum(u[..., :, None] - u[..., None, :], 0.0)


def default_kappa(lam, delta):
    """Drift strength large enough for the exponential integrability estimate at
    level ``lam`` (requires (2/5)(1-delta) kappa - (8/3) eps >= lam, eps < 1)."""
    return 5.0 * (lam + 3.0) / (2.0 * (1.0 - delta))


def _zero(p):
    p = np.asarray(p, dtype=float)
    return np.zeros_like(p)


@dataclass(frozen=True)
class RateBound:
    M: float
    kappa: float
    feedback: float


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Model parameters.  ``running(p)`` and ``terminal(p)`` map an array of
    simplex points (..., d) to per-state costs (..., d)."""

    d: int
    T: float
    epsilon: float
    kappa: float
    delta: float
    running: Callable = _zero
    terminal: Callable = _zero
    noise_convention: str = "eps2"
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError("d must be an integer >= 2")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not 0.0 < self.delta < 1.0 / (4.0 * np.sqrt(self.d)):
            raise ValueError(f"delta must lie in (0, 1/(4 sqrt(d))) = "
                             f"(0, {1.0 / (4.0 * np.sqrt(self.d)):.6f})")
        if self.noise_convention not in CONVENTIONS:
            raise ValueError(f"noise_convention must be one of {CONVENTIONS}")

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def sigma2(self):
        """Second-order coefficient of the limit dynamics."""
        return self.epsilon**2 if self.noise_convention == "eps2" else self.epsilon

    def f(self, i, p):
        return float(np.asarray(self.running(np.asarray(p, dtype=float)))[..., i])

    def g(self, i, p):
        return float(np.asarray(self.terminal(np.asarray(p, dtype=float)))[..., i])

    def phi(self, r):
        return phi(r, self.kappa, self.delta)

    @cached_property
    def _scan(self):
        n = {2: 400, 3: 60, 4: 24}.get(self.d, 10)
        pts = SimplexGrid(self.d, n).points
        return (float(np.max(np.abs(self.running(pts)))),
                float(np.max(np.abs(self.terminal(pts)))))

    @property
    def f_sup(self):
        return self._scan[0]

    @property
    def g_sup(self):
        return self._scan[1]

    @property
    def value_bound(self):
        return self.T * self.f_sup + self.g_sup

    @property
    def feedback_bound(self):
        return 2.0 * self.value_bound

    def rate_bound(self):
        return RateBound(M=self.kappa + self.feedback_bound, kappa=self.kappa,
                         feedback=self.feedback_bound)

    def to_dict(self):
        return {"scenario": self.name, "d": self.d, "T": self.T,
                "epsilon": self.epsilon, "kappa": self.kappa, "delta": self.delta,
                "noise_convention": self.noise_convention, "params": dict(self.params)}


def _voter_terminal(p):
    p = np.asarray(p, dtype=float)
    m = p[..., 0] - p[..., 1]
    return np.stack([-m, m], axis=-1)


def _linear_in_own_mass(scale):
    def cost(p):
        return scale * np.asarray(p, dtype=float)
    return cost


def _constant(c):
    def cost(p):
        return np.full_like(np.asarray(p, dtype=float), c)
    return cost


PRESETS = ("voter", "sellers", "constant-cost", "zero-cost")


def preset_scenario(name, **overrides):
    """Build a GameSpec for a named scenario.

    voter          d=2, f = 0, g(i, p) = -s(i)(p[0] - p[1]) with s = (+1, -1)
    sellers        d=3, f(i, p) = a p[i], g(i, p) = b p[i] (selling a crowded type costs)
    constant-cost  f = 0, g = c
    zero-cost      f = g = 0
    """
    base = dict(T=1.0, epsilon=0.3, kappa=5.0, delta=0.1)
    params = {k: overrides.pop(k) for k in ("c", "a", "b") if k in overrides}
    if name == "voter":
        spec = dict(d=2, running=_zero, terminal=_voter_terminal)
    elif name == "sellers":
        a, b = params.setdefault("a", 1.0), params.setdefault("b", 1.0)
        spec = dict(d=3, running=_linear_in_own_mass(a), terminal=_linear_in_own_mass(b))
    elif name == "constant-cost":
        c = params.setdefault("c", 1.0)
        spec = dict(d=2, running=_zero, terminal=_constant(c))
    elif name == "zero-cost":
        spec = dict(d=2, running=_zero, terminal=_zero)
    else:
        raise ValueError(f"unknown scenario {name!r}; expected one of {PRESETS}")
    base.update(spec)
    base.update(overrides)
    return GameSpec(name=name, params=params, **base)
