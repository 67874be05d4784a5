"""Simplex geometry: empirical measures, intrinsic derivatives, lattice grids.

States are 0-based throughout (state ``i`` in ``range(d)``).
"""
import numpy as np

from .errors import BoundaryError, MassMismatchError

SUM_TOL = 1e-9


def as_simplex_point(p, tol=SUM_TOL):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("a simplex point is a 1-d vector")
    if np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"not a point of the simplex: {p}")
    return p


def is_tangent(v, tol=SUM_TOL):
    return abs(float(np.sum(v))) <= tol


def empirical_measure(x, y, d, tol=SUM_TOL):
    """Weighted empirical measure ``mu[i] = (1/N) sum_l y[l] 1{x[l] == i}``."""
    x = np.asarray(x, dtype=int)
    y = np.asarray(y, dtype=float)
    N = x.size
    if y.size != N:
        raise ValueError("x and y must have the same length")
    if np.any(y < 0):
        raise ValueError("weights must be nonnegative")
    if abs(y.sum() - N) > tol * max(1, N):
        raise MassMismatchError(f"weights sum to {y.sum()!r}, expected {N}")
    return np.bincount(x, weights=y, minlength=d)[:d] / N


def _check_stencil(points, what):
    if np.any(points < -1e-12):
        raise BoundaryError(f"{what} stencil leaves the simplex; move the "
                            f"point inward or reduce the step")


def _chart_moves(d, step):
    # t_a = e_a - e_{d-1}, the chart basis of the tangent space
    t = np.zeros((d - 1, d))
    t[np.arange(d - 1), np.arange(d - 1)] = 1.0
    t[:, -1] = -1.0
    return step * t


def _centering(d):
    return np.eye(d) - np.full((d, d), 1.0 / d)


def intrinsic_gradient(h, p, step=1e-4):
    """Intrinsic gradient of a scalar field ``h`` (callable on simplex points).

    Central differences along the chart directions ``e_a - e_d``; the result is
    the centered chart gradient, so its coordinates sum to zero.
    """
    p = as_simplex_point(p)
    d = p.size
    moves = _chart_moves(d, step)
    pts = np.concatenate([p + moves, p - moves])
    _check_stencil(pts, "gradient")
    g = np.zeros(d)
    for a in range(d - 1):
        g[a] = (h(p + moves[a]) - h(p - moves[a])) / (2 * step)
    return g - g.mean()


def chart_hessian(h, p, step=1e-4):
    p = as_simplex_point(p)
    d = p.size
    moves = _chart_moves(d, step)
    G = np.zeros((d, d))
    h0 = h(p)
    for a in range(d - 1):
        ta = moves[a]
        _check_stencil(np.stack([p + ta, p - ta]), "hessian")
        G[a, a] = (h(p + ta) - 2 * h0 + h(p - ta)) / step**2
        for b in range(a + 1, d - 1):
            tb = moves[b]
            pts = np.stack([p + ta + tb, p + ta - tb, p - ta + tb, p - ta - tb])
            _check_stencil(pts, "hessian")
            G[a, b] = G[b, a] = (h(pts[0]) - h(pts[1]) - h(pts[2]) + h(pts[3])) / (4 * step**2)
    return G


def intrinsic_hessian(h, p, step=1e-4):
    """Second intrinsic derivatives, defined as the composition of first ones.

    Equals ``C G C`` with ``G`` the zero-padded chart Hessian and ``C`` the
    centering projector.
    """
    G = chart_hessian(h, p, step)
    C = _centering(G.shape[0])
    return C @ G @ C


def kimura_matrix(p):
    """The degenerate diffusion coefficient ``p_j delta_jk - p_j p_k``."""
    p = np.asarray(p, dtype=float)
    return np.diag(p) - np.outer(p, p)


def kimura_contraction(hess, p):
    return float(np.sum(kimura_matrix(p) * hess))


def compositions(n, parts):
    """All nonnegative integer vectors of length ``parts`` summing to ``n``."""
    if parts == 1:
        return np.array([[n]], dtype=int)
    grids = np.indices((n + 1,) * (parts - 1)).reshape(parts - 1, -1).T
    grids = grids[grids.sum(axis=1) <= n]
    last = n - grids.sum(axis=1, keepdims=True)
    return np.ascontiguousarray(np.concatenate([grids, last], axis=1))


class SimplexGrid:
    """Lattice ``{m / n : m in N^parts, sum m = n}`` scaled by ``scale``.

    Node coordinates are ``scale * m / n``.  With ``scale=1`` this is a grid of
    the probability simplex; with ``scale=N`` it is a grid of the weight set.
    Interpolation is piecewise linear on the Freudenthal triangulation in
    cumulative coordinates, whose cells never leave the simplex.
    """

    def __init__(self, parts, n, scale=1.0):
        if n < 1:
            raise ValueError("the grid needs at least one subdivision")
        self.parts = parts
        self.n = n
        self.scale = float(scale)
        self.m = compositions(n, parts)
        self.size = len(self.m)
        self.points = self.scale * self.m / n
        if parts > 1:
            self._lookup = -np.ones((n + 1,) * (parts - 1), dtype=np.int64)
            self._lookup[tuple(self.m[:, :-1].T)] = np.arange(self.size)
        else:
            self._lookup = None

    @property
    def step(self):
        return self.scale / self.n

    def index(self, m):
        m = np.atleast_2d(np.asarray(m, dtype=int))
        if self.parts == 1:
            return np.zeros(len(m), dtype=np.int64)
        return self._lookup[tuple(m[:, :-1].T)]

    def shift(self, k, j):
        """Index of ``m + e_j - e_k`` for every node, or -1 when it leaves the grid."""
        m = self.m.copy()
        m[:, j] += 1
        m[:, k] -= 1
        ok = m[:, k] >= 0
        out = -np.ones(self.size, dtype=np.int64)
        out[ok] = self.index(m[ok])
        return out

    def locate(self, q):
        """Interpolation stencil for points ``q`` (shape (M, parts), in grid units
        of ``scale``).  Returns ``(idx, w)`` with shape (M, parts)."""
        q = np.atleast_2d(np.asarray(q, dtype=float)) * (self.n / self.scale)
        M = len(q)
        D = self.parts
        if D == 1:
            return np.zeros((M, 1), dtype=np.int64), np.ones((M, 1))
        n = self.n
        s = np.cumsum(q[:, :-1], axis=1)
        s = np.clip(s, 0.0, n)
        s = np.maximum.accumulate(s, axis=1)
        b = np.minimum(np.floor(s), n - 1)
        f = s - b
        D1 = D - 1
        # descending fractional part; ties broken by larger coordinate first so
        # that intermediate vertices keep cumulative sums ordered
        order = (D1 - 1) - np.argsort(-f[:, ::-1], axis=1, kind="stable")
        fs = np.take_along_axis(f, order, axis=1)
        w = np.empty((M, D))
        w[:, 0] = 1.0 - fs[:, 0]
        w[:, 1:D1] = fs[:, :-1] - fs[:, 1:]
        w[:, D1] = fs[:, -1]
        verts = np.empty((M, D, D1))
        cur = b.copy()
        verts[:, 0] = cur
        rows = np.arange(M)
        for r in range(D1):
            cur = cur.copy()
            cur[rows, order[:, r]] += 1
            verts[:, r + 1] = cur
        vm = np.empty((M, D, D), dtype=np.int64)
        vs = verts.astype(np.int64)
        vm[:, :, 0] = vs[:, :, 0]
        vm[:, :, 1:D1] = vs[:, :, 1:] - vs[:, :, :-1]
        vm[:, :, D1] = n - vs[:, :, -1]
        bad = np.any(vm < 0, axis=2) | np.any(vm > n, axis=2)
        vm[bad] = vm[:, 0][np.nonzero(bad)[0]]
        w = np.where(bad, 0.0, w)
        idx = self.index(vm.reshape(-1, D)).reshape(M, D)
        return idx, w

    def interpolate(self, values, q):
        """Interpolate node values (shape (size, ...)) at points ``q``."""
        idx, w = self.locate(q)
        vals = values[idx]
        return np.einsum("md,md...->m...", w, vals)
