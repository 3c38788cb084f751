"""Discrete potential theory on Z^2.

Green functions of the killed simple random walk, the potential kernel of the
recurrent walk, harmonic measure, harmonic extension and pinning profiles.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad_vec

from .lattice import NEIGHBORS, DomainError, LatticeDomain, box_half_width

g = 2.0 / math.pi
DENSE_LIMIT = 10_000


class ToleranceNotMet(RuntimeError):
    """Quadrature could not certify the requested accuracy."""


# ---------------------------------------------------------------- sparse operators

def killed_generator(D: LatticeDomain):
    """Sparse I - P_D and the coupling to the boundary (rows: D, cols: boundary points).

    Each interior row of P_D has weight 1/4 on every neighbor inside D; the
    coupling matrix carries the 1/4 weights that step out onto the boundary.
    """
    n = len(D)
    nb = D.neighbor_table()
    rows = np.repeat(np.arange(n), 4)
    cols = nb.ravel()
    inside = cols >= 0
    P = sp.csr_matrix((np.full(inside.sum(), 0.25), (rows[inside], cols[inside])), shape=(n, n))
    L = (sp.identity(n, format="csr") - P).tocsc()

    bd = D.boundary
    bidx = {(int(a), int(b)): i for i, (a, b) in enumerate(bd)}
    out_pts = (D.points[:, None, :] + NEIGHBORS[None, :, :]).reshape(-1, 2)[~inside]
    out_rows = rows[~inside]
    out_cols = np.array([bidx[(int(a), int(b))] for a, b in out_pts], dtype=np.int64)
    B = sp.csr_matrix((np.full(len(out_rows), 0.25), (out_rows, out_cols)), shape=(n, len(bd)))
    return L, B


class DirichletSolver:
    """Solves the discrete Dirichlet problem on a fixed domain, many right-hand sides at once."""

    def __init__(self, D: LatticeDomain):
        if len(D) == 0:
            raise DomainError("empty domain")
        self.domain = D
        self.L, self.B = killed_generator(D)
        self._lu = None
        self._rect = D.is_rectangle

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.L)
        return self._lu

    def solve(self, rhs):
        """Solve (I - P_D) u = rhs; rhs has the point axis last."""
        rhs = np.asarray(rhs, dtype=float)
        if self._rect:
            arr = self.domain.to_array(rhs)
            sol = rect_solve(4.0 * arr)
            return self.domain.from_array(sol)
        flat = rhs.reshape(-1, len(self.domain)).T
        out = self.lu.solve(np.ascontiguousarray(flat))
        return out.T.reshape(rhs.shape)

    def extend(self, boundary_values):
        """Harmonic extension into the domain of values given on its boundary (point axis last)."""
        f = np.asarray(boundary_values, dtype=float)
        rhs = (self.B @ f.reshape(-1, f.shape[-1]).T).T.reshape(f.shape[:-1] + (len(self.domain),))
        return self.solve(rhs)


@lru_cache(maxsize=64)
def _rect_eigs(mx: int, my: int):
    tx = 2 - 2 * np.cos(np.pi * np.arange(1, mx + 1) / (mx + 1))
    ty = 2 - 2 * np.cos(np.pi * np.arange(1, my + 1) / (my + 1))
    return tx[:, None] + ty[None, :]


def rect_solve(rhs):
    """Solve (4I - A) u = rhs with zero Dirichlet data on a full rectangle (last two axes)."""
    mu = _rect_eigs(*rhs.shape[-2:])
    c = sfft.dstn(rhs, type=1, axes=(-2, -1), norm="ortho")
    return sfft.idstn(c / mu, type=1, axes=(-2, -1), norm="ortho")


# ---------------------------------------------------------------- Green functions

@dataclass
class GreenMatrix:
    domain: LatticeDomain
    values: np.ndarray

    def __call__(self, x, y) -> float:
        i, j = self.domain.index_of([x, y])
        if i < 0 or j < 0:
            return 0.0
        return float(self.values[i, j])

    def residual(self) -> float:
        L, _ = killed_generator(self.domain)
        return float(np.abs(L @ self.values - np.eye(len(self.domain))).max())

    def write_csv(self, path):
        pts = self.domain.points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "y1", "x2", "y2", "value"])
            for i in range(len(pts)):
                for j in range(len(pts)):
                    w.writerow([int(pts[i, 0]), int(pts[i, 1]), int(pts[j, 0]), int(pts[j, 1]), repr(float(self.values[i, j]))])


def green_matrix(D: LatticeDomain) -> GreenMatrix:
    """Dense Green matrix of the walk killed on exiting D, from (I - P_D) G = I."""
    n = len(D)
    if n == 0:
        raise DomainError("empty domain")
    if n == 1:
        return GreenMatrix(D, np.ones((1, 1)))
    if n > DENSE_LIMIT:
        raise DomainError(f"{n} points is above the dense limit; use green_column")
    L, _ = killed_generator(D)
    cf = sla.cho_factor(L.toarray(), lower=True)
    G = sla.cho_solve(cf, np.eye(n))
    return GreenMatrix(D, 0.5 * (G + G.T))


def green_column(D: LatticeDomain, y) -> np.ndarray:
    """G^D(., y) on D by a single sparse (or sine-transform) solve."""
    j = D.index_of([y])[0]
    if j < 0:
        return np.zeros(len(D))
    e = np.zeros(len(D))
    e[j] = 1.0
    return DirichletSolver(D).solve(e)


def rect_green_entries(shape, a, b) -> np.ndarray:
    """Exact G(a, b) on a full mx-by-my rectangle, coordinates 1-based within the rectangle.

    Sine modes in the first coordinate reduce the problem to tridiagonal
    solves in the second, which have a closed hyperbolic form.
    """
    mx, my = shape
    a = np.atleast_2d(np.asarray(a, dtype=np.int64))
    b = np.atleast_2d(np.asarray(b, dtype=np.int64))
    i = np.arange(1, mx + 1)
    theta = np.pi * i / (mx + 1)
    c = 4.0 - 2.0 * np.cos(theta)
    kappa = np.arccosh(c / 2.0)
    lo = np.minimum(a[:, 1], b[:, 1])[:, None]
    hi_gap = (my + 1 - np.maximum(a[:, 1], b[:, 1]))[:, None]
    k = kappa[None, :]
    tri = (np.exp(k * (lo + hi_gap - my - 1)) * -np.expm1(-2 * k * lo) * -np.expm1(-2 * k * hi_gap)
           / (2 * np.sinh(k) * -np.expm1(-2 * k * (my + 1))))
    sx = np.sin(np.outer(a[:, 0], theta)) * np.sin(np.outer(b[:, 0], theta))
    return 4.0 * (2.0 / (mx + 1)) * np.sum(sx * tri, axis=1)


def box_green(k: int, x, y) -> np.ndarray:
    """G^{box k}(x, y) for arrays of points x, y; zero when either lies outside the box."""
    h = box_half_width(k)
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    y = np.atleast_2d(np.asarray(y, dtype=np.int64))
    inside = (np.abs(x).max(axis=1) <= h) & (np.abs(y).max(axis=1) <= h)
    out = np.zeros(len(x))
    if inside.any():
        out[inside] = rect_green_entries((2 * h + 1, 2 * h + 1), x[inside] + h + 1, y[inside] + h + 1)
    return out


def box_green_field(k: int, y=(0, 0)) -> np.ndarray:
    """G^{box k}(., y) as a (2h+1, 2h+1) array, by one sine-transform solve."""
    h = box_half_width(k)
    rhs = np.zeros((2 * h + 1, 2 * h + 1))
    rhs[y[0] + h, y[1] + h] = 4.0
    return rect_solve(rhs)


# ---------------------------------------------------------------- potential kernel

@dataclass(frozen=True)
class Quadrature:
    """How to evaluate the potential-kernel integral.

    method 'reduced' integrates out one frequency in closed form and runs
    adaptive Gauss-Kronrod on the remaining one; 'midpoint' is the plain
    tensor midpoint rule on n x n cells with a Richardson check against n/2.
    """

    method: str = "reduced"
    n: int = 4096
    tol: float = 1e-10


def _reduced_integrand(m, n):
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)

    def f(k):
        u = 2.0 * np.sin(k / 2) ** 2
        kappa = np.log1p(u + np.sqrt(u * (u + 2)))
        sh = np.sqrt(u * (u + 2))
        if k == 0.0:
            return 2.0 * n
        num = -np.expm1(-n * kappa) + np.exp(-n * kappa) * 2.0 * np.sin(k * m / 2) ** 2
        return 2.0 * num / sh

    return f


def _kernel_reduced(pts, tol):
    pts = np.abs(np.asarray(pts, dtype=np.int64).reshape(-1, 2))
    m = pts.min(axis=1)
    n = pts.max(axis=1)
    out = np.zeros(len(pts))
    nz = n > 0
    if nz.any():
        val, err = quad_vec(_reduced_integrand(m[nz], n[nz]), 0.0, math.pi, epsabs=tol * 1e-2, epsrel=0, limit=20000)
        if err > tol * math.pi:
            raise ToleranceNotMet(f"potential kernel error estimate {err / math.pi:.2e} exceeds {tol:.1e}")
        out[nz] = val / math.pi
    return out


def _midpoint(pts, n):
    h = 2 * math.pi / n
    k = -math.pi + h * (np.arange(n) + 0.5)
    s = np.sin(k / 2) ** 2
    den = s[:, None] + s[None, :]
    out = []
    for x1, x2 in np.asarray(pts).reshape(-1, 2):
        num = 1.0 - np.cos(k[:, None] * x1 + k[None, :] * x2)
        out.append(float(np.mean(num / den)))
    return np.array(out)


def _kernel_midpoint(pts, n, tol):
    fine = _midpoint(pts, n)
    coarse = _midpoint(pts, n // 2)
    rich = (4 * fine - coarse) / 3
    if np.max(np.abs(rich - fine)) > tol:
        raise ToleranceNotMet(f"midpoint rule at n={n} misses tolerance {tol:.1e} "
                              f"(Richardson gap {np.max(np.abs(rich - fine)):.2e})")
    return rich


def potential_kernel(x, resolution: Quadrature = Quadrature()):
    """a(x) for one point or an array of points."""
    pts = np.asarray(x, dtype=np.int64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    if resolution.method == "reduced":
        vals = _kernel_reduced(pts, resolution.tol)
    elif resolution.method == "midpoint":
        vals = _kernel_midpoint(pts, resolution.n, resolution.tol)
    else:
        raise ValueError(f"unknown quadrature method {resolution.method!r}")
    return float(vals[0]) if single else vals


class PotentialTable:
    """Memoized potential kernel keyed by the symmetry class (min |x_i|, max |x_i|)."""

    def __init__(self, resolution: Quadrature = Quadrature()):
        self.resolution = resolution
        self._cache: dict[tuple[int, int], float] = {}

    @staticmethod
    def _keys(pts):
        a = np.abs(np.asarray(pts, dtype=np.int64).reshape(-1, 2))
        return np.stack([a.min(axis=1), a.max(axis=1)], axis=1)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64)
        keys = self._keys(pts)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        missing = [tuple(int(v) for v in u) for u in uniq if (int(u[0]), int(u[1])) not in self._cache]
        if missing:
            vals = potential_kernel(np.array(missing), self.resolution)
            for key, v in zip(missing, np.atleast_1d(vals)):
                self._cache[key] = float(v)
        table = np.array([self._cache[(int(u[0]), int(u[1]))] for u in uniq])
        out = table[np.asarray(inv).ravel()]
        return out.reshape(pts.shape[:-1]) if pts.ndim > 1 else out[0]

    def covers(self, radius: int) -> bool:
        return all((m, n) in self._cache for n in range(radius + 1) for m in range(n + 1))

    def fill(self, radius: int):
        """Precompute every symmetry class with sup-norm at most radius."""
        pts = [(m, n) for n in range(radius + 1) for m in range(n + 1)]
        self(np.array(pts))
        return self

    def pinned_covariance(self, pts) -> np.ndarray:
        """a(x) + a(y) - a(x - y) on a list of points."""
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
        ax = self(pts)
        diff = pts[:, None, :] - pts[None, :, :]
        axy = self(diff.reshape(-1, 2)).reshape(len(pts), len(pts))
        return ax[:, None] + ax[None, :] - axy

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for (m, n), v in sorted(self._cache.items()):
                w.writerow([m, n, repr(v)])


_shared_table: PotentialTable | None = None


def shared_potential_table() -> PotentialTable:
    global _shared_table
    if _shared_table is None:
        _shared_table = PotentialTable()
    return _shared_table


@dataclass
class KernelFit:
    c0: float
    slope: float
    spread: float
    radii: np.ndarray = field(repr=False)


def _axis_points(r_lo, r_hi):
    radii = np.arange(int(math.ceil(r_lo)), int(math.floor(r_hi)) + 1)
    return radii, np.stack([radii, np.zeros_like(radii)], axis=1)


def fit_c0(table, radius_range) -> KernelFit:
    """Least-squares c0 in a(x) = g log|x| + c0 along the axis, slope held at g."""
    radii, pts = _axis_points(*radius_range)
    if len(radii) < 8 or radii.min() < 16:
        raise DomainError("need at least 8 distinct radii, all >= 16")
    resid = np.asarray(table(pts), dtype=float) - g * np.log(radii)
    c0 = float(resid.mean())
    return KernelFit(c0=c0, slope=g, spread=float(resid.max() - resid.min()), radii=radii)


def fit_kernel_slope(table, radius_range) -> KernelFit:
    """Least-squares fit of a(x) = slope * log|x| + c0 with the slope free."""
    radii, pts = _axis_points(*radius_range)
    y = np.asarray(table(pts), dtype=float)
    A = np.stack([np.log(radii), np.ones(len(radii))], axis=1)
    (slope, c0), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, c0])
    return KernelFit(c0=float(c0), slope=float(slope), spread=float(np.ptp(resid)), radii=radii)


# ---------------------------------------------------------------- harmonic objects

@dataclass
class HarmonicProfile:
    """Values on D together with its boundary; `harmonic_on` marks where the mean-value property is claimed."""

    domain: LatticeDomain
    values: np.ndarray
    boundary_values: np.ndarray
    harmonic_on: np.ndarray

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
        out = np.zeros(len(pts))
        i = self.domain.index_of(pts)
        out[i >= 0] = self.values[i[i >= 0]]
        bd = LatticeDomain(self.domain.boundary)
        j = bd.index_of(pts)
        sel = (i < 0) & (j >= 0)
        # boundary is sorted lexicographically, matching LatticeDomain ordering
        out[sel] = self.boundary_values[j[sel]]
        return out

    def residual(self) -> float:
        D = self.domain
        idx = np.flatnonzero(self.harmonic_on)
        if len(idx) == 0:
            return 0.0
        nbrs = (D.points[idx, None, :] + NEIGHBORS[None, :, :]).reshape(-1, 2)
        avg = self(nbrs).reshape(-1, 4).mean(axis=1)
        return float(np.abs(avg - self.values[idx]).max())


def _boundary_vector(D: LatticeDomain, boundary_values) -> np.ndarray:
    bd = D.boundary
    if callable(boundary_values):
        return np.asarray(boundary_values(bd), dtype=float)
    if isinstance(boundary_values, dict):
        try:
            return np.array([boundary_values[(int(a), int(b))] for a, b in bd], dtype=float)
        except KeyError as exc:
            raise DomainError(f"missing boundary value at {exc.args[0]}") from None
    vals = np.asarray(boundary_values, dtype=float)
    if vals.shape[-1] != len(bd):
        raise DomainError(f"expected {len(bd)} boundary values, got {vals.shape[-1]}")
    return vals


def harmonic_extension(D: LatticeDomain, boundary_values) -> HarmonicProfile:
    f = _boundary_vector(D, boundary_values)
    u = DirichletSolver(D).extend(f)
    return HarmonicProfile(D, u, f, np.ones(len(D), dtype=bool))


def harmonic_measure(D: LatticeDomain, x) -> np.ndarray:
    """Exit distribution on D.boundary (lexicographic order) of the walk started at x."""
    i = D.index_of([x])[0]
    if i < 0:
        raise DomainError(f"{tuple(x)} is not a point of the domain")
    solver = DirichletSolver(D)
    e = np.zeros(len(D))
    e[i] = 1.0
    # row x of L^{-1} B equals (L^{-1} e_x)^T B because L is symmetric
    row = solver.solve(e)
    return np.asarray(solver.B.T @ row).ravel()


def harmonic_measure_matrix(D: LatticeDomain) -> np.ndarray:
    solver = DirichletSolver(D)
    return solver.extend(np.eye(len(D.boundary))).T


def pinning_profile(D: LatticeDomain, method: str = "extension") -> HarmonicProfile:
    """Profile harmonic on D minus the origin, equal to 1 at the origin and 0 off D.

    method='extension' solves the Dirichlet problem on D minus the origin;
    method='green' uses a single Green column, which is much cheaper on large boxes.
    """
    i0 = D.index_of([(0, 0)])[0]
    if i0 < 0:
        raise DomainError("the origin must belong to the domain")
    harm = np.ones(len(D), dtype=bool)
    harm[i0] = False
    zeros = np.zeros(len(D.boundary))
    if len(D) == 1:
        return HarmonicProfile(D, np.ones(1), zeros, harm)
    if method == "green":
        col = green_column(D, (0, 0))
        return HarmonicProfile(D, col / col[i0], zeros, harm)
    punctured = D.minus([(0, 0)])
    bd = punctured.boundary
    f = (np.abs(bd).sum(axis=1) == 0).astype(float)
    inner = DirichletSolver(punctured).extend(f)
    vals = np.ones(len(D))
    vals[harm] = inner[punctured.index_of(D.points[harm])]
    return HarmonicProfile(D, vals, zeros, harm)
