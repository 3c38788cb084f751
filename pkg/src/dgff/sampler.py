"""Exact Gaussian samplers: zero-boundary fields, Gibbs-Markov splits, pinned fields and
the whole-plane field pinned at the origin on finite windows."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from .harmonic import (DirichletSolver, PotentialTable, _rect_eigs, green_matrix, pinning_profile,
                       shared_potential_table)
from .lattice import DomainError, LatticeDomain, box, box_half_width, concentric_box
from .rng import as_generator

DENSE = "dense-factorization"
SPECTRAL = "spectral-rectangle"
EMBEDDED = "embedded-rectangle"
BINARY_MAGIC = b"DGFFBIN1"


class UnsupportedMethod(ValueError):
    pass


class NumericalDegeneracy(RuntimeError):
    pass


@dataclass
class FieldSample:
    """Field values on a domain (zero off it).  `values` is (n,) or (batch, n)."""

    domain: LatticeDomain
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def at(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
        i = self.domain.index_of(pts)
        out = np.zeros(self.values.shape[:-1] + (len(pts),))
        out[..., i >= 0] = self.values[..., i[i >= 0]]
        return out

    def to_array(self) -> np.ndarray:
        return self.domain.to_array(self.values)

    def write_csv(self, path, row: int = 0):
        vals = self.values if self.values.ndim == 1 else self.values[row]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for (x, y), v in zip(self.domain.points, vals):
                w.writerow([int(x), int(y), repr(float(v))])

    def write_binary(self, path):
        """Header: magic, uint64 point count, uint64 row count; then int64 (x, y) pairs and float64 rows, little-endian."""
        vals = np.atleast_2d(self.values).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<QQ", len(self.domain), vals.shape[0]))
            fh.write(self.domain.points.astype("<i8").tobytes())
            fh.write(vals.tobytes())


def read_binary(path) -> FieldSample:
    with open(path, "rb") as fh:
        if fh.read(8) != BINARY_MAGIC:
            raise ValueError("not a field snapshot file")
        n, rows = struct.unpack("<QQ", fh.read(16))
        pts = np.frombuffer(fh.read(16 * n), dtype="<i8").reshape(n, 2)
        vals = np.frombuffer(fh.read(8 * n * rows), dtype="<f8").reshape(rows, n)
    return FieldSample(LatticeDomain(pts), vals.copy())


# ---------------------------------------------------------------- plans

@dataclass
class SamplerPlan:
    method: str
    domain: LatticeDomain
    factor: object = None
    inner: "SamplerPlan | None" = None

    def covariance(self) -> np.ndarray:
        if self.method == DENSE:
            return self.factor @ self.factor.T
        if self.method == SPECTRAL:
            mx, my = self.domain.shape
            mu = self.factor
            sx = _sine_basis(mx)
            sy = _sine_basis(my)
            psi = np.einsum("ai,bj->abij", sx, sy).reshape(mx * my, mx * my)
            return psi @ np.diag((4.0 / mu).ravel()) @ psi.T
        if self.method == EMBEDDED:
            outer = self.inner.covariance()
            D = self.domain
            R = self.inner.domain
            solver = self.factor
            iD = R.index_of(D.points)
            ib = R.index_of(D.boundary)
            # h^D = h^R|_D - H (h^R on the boundary of D); boundary points outside R carry zero
            T = np.zeros((len(D), len(R)))
            T[np.arange(len(D)), iD] = 1.0
            Hm = solver.extend(np.eye(len(D.boundary))).T
            ok = ib >= 0
            T[:, ib[ok]] -= Hm[:, ok]
            return T @ outer @ T.T
        raise UnsupportedMethod(self.method)

    def sample(self, rng, size=None) -> np.ndarray:
        rng = as_generator(rng)
        b = 1 if size is None else int(size)
        if self.method == DENSE:
            z = rng.standard_normal((b, len(self.domain)))
            out = z @ self.factor.T
        elif self.method == SPECTRAL:
            mu = self.factor
            z = rng.standard_normal((b,) + mu.shape)
            arr = sfft.idstn(np.sqrt(4.0 / mu) * z, type=1, axes=(-2, -1), norm="ortho")
            out = arr.reshape(b, -1)
        elif self.method == EMBEDDED:
            outer = self.inner.sample(rng, b)
            R = self.inner.domain
            D = self.domain
            ib = R.index_of(D.boundary)
            f = np.zeros((b, len(D.boundary)))
            f[:, ib >= 0] = outer[:, ib[ib >= 0]]
            out = outer[:, R.index_of(D.points)] - self.factor.extend(f)
        else:
            raise UnsupportedMethod(self.method)
        return out[0] if size is None else out


def _sine_basis(m: int) -> np.ndarray:
    j = np.arange(1, m + 1)
    return np.sqrt(2.0 / (m + 1)) * np.sin(np.pi * np.outer(j, j) / (m + 1))


def _cholesky(C: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    try:
        return sla.cholesky(C, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * max(1.0, float(np.abs(np.diag(C)).max()))
    try:
        return sla.cholesky(C + jitter * np.eye(len(C)), lower=True), jitter
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(C)
        raise NumericalDegeneracy(
            f"{what}: Gram factorization failed even with jitter {jitter:.1e}; "
            f"smallest eigenvalue {w.min():.3e}, size {len(C)}") from None


_plan_cache: dict = {}


def build_plan(D: LatticeDomain, method: str = "auto") -> SamplerPlan:
    if len(D) == 0:
        raise DomainError("empty domain")
    if method == "auto":
        method = SPECTRAL if D.is_rectangle else (DENSE if len(D) <= 2500 else EMBEDDED)
    key = (D, method)
    if key in _plan_cache:
        return _plan_cache[key]
    if method == DENSE:
        L, _ = _cholesky(green_matrix(D).values, "green matrix")
        plan = SamplerPlan(DENSE, D, L)
    elif method == SPECTRAL:
        if not D.is_rectangle:
            raise UnsupportedMethod("spectral sampling needs a full rectangle")
        plan = SamplerPlan(SPECTRAL, D, _rect_eigs(*D.shape))
    elif method == EMBEDDED:
        hi = D.lo + np.array(D.shape) - 1
        R = box(int(D.lo[0]), int(hi[0]), int(D.lo[1]), int(hi[1]))
        plan = SamplerPlan(EMBEDDED, D, DirichletSolver(D), build_plan(R, SPECTRAL))
    else:
        raise UnsupportedMethod(method)
    if len(_plan_cache) > 32:
        _plan_cache.clear()
    _plan_cache[key] = plan
    return plan


def sample_dgff(D: LatticeDomain, rng, method: str = "auto", size=None) -> FieldSample:
    plan = build_plan(D, method)
    vals = plan.sample(rng, size)
    return FieldSample(D, vals, {"sampler": plan.method, "conditioning": "zero boundary"})


# ---------------------------------------------------------------- Gibbs-Markov and pinning

def sample_gibbs_markov(D: LatticeDomain, inner: LatticeDomain, rng, size=None):
    """Split a field on D into its harmonic binding part on `inner` plus the independent inner field.

    binding equals the field off `inner` and its harmonic extension on `inner`;
    the remainder lives on `inner` with zero boundary values.
    """
    if not inner.issubset(D):
        raise DomainError("inner domain must be contained in the outer domain")
    h = sample_dgff(D, rng, size=size)
    vals = np.atleast_2d(h.values)
    bd = inner.boundary
    ib = D.index_of(bd)
    f = np.zeros((vals.shape[0], len(bd)))
    f[:, ib >= 0] = vals[:, ib[ib >= 0]]
    ext = DirichletSolver(inner).extend(f)
    binding = vals.copy()
    ii = D.index_of(inner.points)
    binding[:, ii] = ext
    rest = vals[:, ii] - ext
    if size is None:
        binding, rest = binding[0], rest[0]
    meta = {"sampler": h.meta["sampler"], "conditioning": "gibbs-markov"}
    return FieldSample(D, binding, dict(meta, part="binding")), FieldSample(inner, rest, dict(meta, part="inner"))


def binding_covariance(D: LatticeDomain, inner: LatticeDomain) -> np.ndarray:
    """Covariance of the binding field restricted to `inner`, from dense Green matrices."""
    G = green_matrix(D).values
    bd = inner.boundary
    ib = D.index_of(bd)
    ok = ib >= 0
    H = DirichletSolver(inner).extend(np.eye(len(bd))).T[:, ok]
    Gb = G[np.ix_(ib[ok], ib[ok])]
    return H @ Gb @ H.T


def sample_pinned(D: LatticeDomain, t: float, rng, size=None) -> FieldSample:
    """Field on D conditioned to equal t at the origin."""
    i0 = D.index_of([(0, 0)])[0]
    if i0 < 0:
        raise DomainError("the origin must belong to the domain")
    prof = pinning_profile(D, method="green").values
    h = sample_dgff(D, rng, size=size)
    vals = np.atleast_2d(h.values)
    out = vals - vals[:, i0:i0 + 1] * prof + t * prof
    out[:, i0] = t
    if size is None:
        out = out[0]
    return FieldSample(D, out, {"sampler": h.meta["sampler"], "conditioning": f"value {t} at origin"})


# ---------------------------------------------------------------- field pinned at the origin on Z^2

class PinnedWindowSampler:
    """Exact sampler of the whole-plane field pinned at the origin, on the k-th dyadic box.

    Boundary values on the ring around the box come from a Gram factor of
    a(x)+a(y)-a(x-y); inside, the Markov property gives a zero-boundary field
    plus the harmonic extension of the ring values, re-pinned at the origin
    with the pinning profile.  The extension and the interior field share one
    inverse sine transform.
    """

    def __init__(self, k: int, table: PotentialTable | None = None):
        self.k = k
        self.table = table or shared_potential_table()
        self.domain = concentric_box(k)
        h = box_half_width(k)
        self.half = h
        ring = self.domain.boundary
        self.ring = ring
        self.table.fill(2 * h + 2)
        C = self.table.pinned_covariance(ring)
        self.factor, self.jitter = _cholesky(C, "pinned boundary covariance")
        m = 2 * h + 1
        self.mu = _rect_eigs(m, m)
        self._inv_mu = 1.0 / self.mu
        self._sqrt_cov = np.sqrt(4.0 / self.mu)
        self.sine = _sine_basis(m)
        self.profile = self.domain.to_array(pinning_profile(self.domain, method="green").values)
        inner = np.arange(-h, h + 1)
        self._edges = [ring_index(ring, np.stack([np.full_like(inner, s * (h + 1)), inner], 1)) if ax == 0
                       else ring_index(ring, np.stack([inner, np.full_like(inner, s * (h + 1))], 1))
                       for ax, s in ((0, -1), (0, 1), (1, -1), (1, 1))]

    def sample_arrays(self, rng, size: int) -> np.ndarray:
        """(size, m, m) arrays of the pinned field on the box."""
        rng = as_generator(rng)
        f = rng.standard_normal((size, len(self.ring))) @ self.factor.T
        z = rng.standard_normal((size,) + self.mu.shape)
        S = self.sine
        m = S.shape[0]
        fl, fr, fb, ft = (f[:, e] @ S for e in self._edges)
        # sine transform of the boundary source: four rank-one terms per sample
        U = np.empty((size, m, 4))
        U[:, :, 0] = S[0]
        U[:, :, 1] = S[-1]
        U[:, :, 2] = fb
        U[:, :, 3] = ft
        V = np.empty((size, 4, m))
        V[:, 0] = fl
        V[:, 1] = fr
        V[:, 2] = S[0]
        V[:, 3] = S[-1]
        src = np.matmul(U, V)
        src *= self._inv_mu
        z *= self._sqrt_cov
        z += src
        w = sfft.idstn(z, type=1, axes=(-2, -1), norm="ortho", overwrite_x=True)
        c = self.half
        w -= w[:, c:c + 1, c:c + 1] * self.profile
        w[:, c, c] = 0.0
        return w

    def model_covariance(self) -> np.ndarray:
        """Covariance implied by the construction (for small boxes), in domain order."""
        D = self.domain
        solver = DirichletSolver(D)
        H = solver.extend(np.eye(len(self.ring))).T
        Cb = self.factor @ self.factor.T
        G = green_matrix(D).values
        W = H @ Cb @ H.T + G
        prof = D.from_array(self.profile)
        i0 = D.index_of([(0, 0)])[0]
        P = np.eye(len(D)) - np.outer(prof, np.eye(len(D))[i0])
        return P @ W @ P.T


def ring_index(ring, pts) -> np.ndarray:
    return LatticeDomain(ring).index_of(pts)


_window_samplers: dict = {}


def pinned_window_sampler(k: int, table: PotentialTable | None = None) -> PinnedWindowSampler:
    key = (k, id(table))
    if key not in _window_samplers:
        _window_samplers[key] = PinnedWindowSampler(k, table)
    return _window_samplers[key]


def sample_nu0(r: int, rng, size=None, table: PotentialTable | None = None) -> FieldSample:
    """Whole-plane pinned field on the r-th dyadic box; exactly zero at the origin."""
    if r == 0:
        D = concentric_box(0)
        vals = np.zeros((1 if size is None else size, 1))
        return FieldSample(D, vals[0] if size is None else vals, {"sampler": "pinned-window"})
    s = pinned_window_sampler(r, table)
    arr = s.sample_arrays(rng, 1 if size is None else size)
    vals = arr.reshape(arr.shape[0], -1)
    meta = {"sampler": "pinned-window", "conditioning": "zero at origin", "jitter": s.jitter}
    return FieldSample(s.domain, vals[0] if size is None else vals, meta)


def sample_nu0_points(points, rng, size=None, table: PotentialTable | None = None) -> FieldSample:
    """Direct Gram-factor sampler of the pinned whole-plane field on an arbitrary finite point set."""
    table = table or shared_potential_table()
    D = LatticeDomain(points)
    C = table.pinned_covariance(D.points)
    i0 = D.index_of([(0, 0)])[0]
    keep = np.arange(len(D)) != i0
    L, jitter = _cholesky(C[np.ix_(keep, keep)], "pinned covariance")
    rng = as_generator(rng)
    b = 1 if size is None else size
    vals = np.zeros((b, len(D)))
    vals[:, keep] = rng.standard_normal((b, keep.sum())) @ L.T
    return FieldSample(D, vals[0] if size is None else vals, {"sampler": "gram", "jitter": jitter})
