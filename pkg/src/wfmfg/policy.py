"""Markov feedback policies for the N-player game."""
import numpy as np


class Policy:
    """Feedback ``(t, x, y, l) -> rates`` over the d states (entry ``x[l]`` is 0).

    ``fn`` evaluates one player; subclasses may override :meth:`all_rates` with a
    vectorised version.  ``bound`` is the declared sup of every rate.  A
    ``stationary`` policy does not depend on ``t``, which lets the simulator
    skip time refreshes.
    """

    stationary = False

    def __init__(self, fn, bound, name="policy"):
        self.fn = fn
        self.bound = float(bound)
        self.name = name

    def __call__(self, t, x, y, l):
        return np.asarray(self.fn(t, x, y, l), dtype=float)

    def all_rates(self, t, x, y):
        """Rates of every player, shape (N, d)."""
        return np.stack([self(t, x, y, l) for l in range(len(x))])


class ZeroPolicy(Policy):
    stationary = True

    def __init__(self, d):
        self.d = d
        super().__init__(lambda t, x, y, l: np.zeros(d), 0.0, name="zero")

    def all_rates(self, t, x, y):
        return np.zeros((len(x), self.d))


class ConstantPolicy(Policy):
    """Each player jumps to every other state at the same fixed rate."""

    stationary = True

    def __init__(self, d, rate):
        self.d = d
        self.rate = float(rate)
        super().__init__(self._one, rate, name=f"constant({rate:g})")

    def _one(self, t, x, y, l):
        r = np.full(self.d, self.rate)
        r[x[l]] = 0.0
        return r

    def all_rates(self, t, x, y):
        r = np.full((len(x), self.d), self.rate)
        r[np.arange(len(x)), np.asarray(x)] = 0.0
        return r


class MixedPolicy(Policy):
    """Player ``l`` follows ``deviation``; every other player follows ``base``."""

    def __init__(self, base, deviation, l):
        self.base = base
        self.deviation = deviation
        self.l = l
        super().__init__(self._one, max(base.bound, deviation.bound),
                         name=f"{base.name}|{l}:{deviation.name}")
        self.stationary = base.stationary and deviation.stationary

    def _one(self, t, x, y, l):
        return (self.deviation if l == self.l else self.base)(t, x, y, l)

    def all_rates(self, t, x, y):
        r = self.base.all_rates(t, x, y).copy()
        r[self.l] = self.deviation(t, x, y, self.l)
        return r
