"""Concentric decomposition of the field on nested dyadic boxes.

Level k contributes a field phi_k, harmonic on the k-th box away from the
boundary of the (k-1)-th box, and an annulus field h'_k with zero boundary
values.  Writing phi_k = (1 + b_k) phi_k(0) + chi_k splits off the value at the
origin; the values phi_k(0) are the increments of the backbone walk S.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .harmonic import box_green, box_green_field, pinning_profile, rect_solve
from .lattice import box_half_width, concentric_box
from .rng import as_generator, stream
from .sampler import FieldSample, build_plan

FULL_FIELD_CAP = 9
DEFAULT_C = 5.0


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def centering(N: float) -> float:
    """2 sqrt(g) log N - (3/4) sqrt(g) log log N, for any N > 1."""
    sg = math.sqrt(2 / math.pi)
    return 2 * sg * math.log(N) - 0.75 * sg * math.log(math.log(N))


def embed(arr, n_half: int):
    """Place a centered (..., m, m) array into the middle of a (2*n_half+1)^2 array."""
    m = arr.shape[-1]
    side = 2 * n_half + 1
    off = (side - m) // 2
    out = np.zeros(arr.shape[:-2] + (side, side))
    out[..., off:off + m, off:off + m] = arr
    return out


def center_crop(arr, half: int):
    c = arr.shape[-1] // 2
    return arr[..., c - half:c + half + 1, c - half:c + half + 1]


# ---------------------------------------------------------------- deterministic quantities

class DecompositionStats:
    """Variances sigma_k^2 of phi_k(0), the profiles b_k and the walk clock t_k."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("depth must be at least 1")
        self.n = n
        diag = box_green(0, [(0, 0)], [(0, 0)])[0]
        g_prev = diag
        sig = [diag]
        for k in range(1, n + 1):
            gk = box_green(k, [(0, 0)], [(0, 0)])[0]
            sig.append(gk - g_prev)
            g_prev = gk
        self.sigma2 = np.array(sig)
        self.t = np.concatenate([[0.0], np.cumsum(self.sigma2)])
        self._b: dict[int, np.ndarray] = {}

    def b_profile(self, k: int) -> np.ndarray:
        """b_k on the k-th box as a centered array; b_k = -1 off the box."""
        if k not in self._b:
            h = box_half_width(k)
            col = box_green_field(k)
            if k >= 1:
                col = col - embed(box_green_field(k - 1), h)
            b = col / self.sigma2[k] - 1.0
            b[h, h] = 0.0
            self._b[k] = b
        return self._b[k]

    def b_at(self, k: int, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
        h = box_half_width(k)
        out = np.full(len(pts), -1.0)
        inside = np.abs(pts).max(axis=1) <= h
        prof = self.b_profile(k)
        out[inside] = prof[pts[inside, 0] + h, pts[inside, 1] + h]
        return out

    def b_on_box(self, k: int, n: int | None = None) -> np.ndarray:
        n = self.n if n is None else n
        return embed(self.b_profile(k) + 1.0, box_half_width(n)) - 1.0

    @property
    def b(self) -> list:
        if self.n > FULL_FIELD_CAP:
            raise MemoryError(f"profiles on the full box are capped at depth {FULL_FIELD_CAP}; use b_profile")
        return [self.b_on_box(k) for k in range(self.n + 1)]

    def conditioned_drift(self) -> np.ndarray:
        """c_n(k) = sigma_k^2 / sum of sigma^2: the mean of phi_k(0) per unit of S_{n+1}."""
        return self.sigma2 / self.sigma2.sum()


_stats_cache: dict[int, DecompositionStats] = {}


def decomposition_stats(n: int) -> DecompositionStats:
    if n not in _stats_cache:
        # deeper stats contain the shallower ones; reuse when possible
        deeper = [m for m in _stats_cache if m >= n]
        if deeper:
            src = _stats_cache[min(deeper)]
            st = DecompositionStats.__new__(DecompositionStats)
            st.n = n
            st.sigma2 = src.sigma2[:n + 1].copy()
            st.t = src.t[:n + 2].copy()
            st._b = src._b
            _stats_cache[n] = st
        else:
            _stats_cache[n] = DecompositionStats(n)
    return _stats_cache[n]


# ---------------------------------------------------------------- one level

class LevelPlan:
    """Precomputed linear algebra for sampling (phi_k, h'_k) on the k-th box."""

    def __init__(self, k: int):
        self.k = k
        H = box_half_width(k)
        self.half = H
        side = 2 * H + 1
        inner = concentric_box(k - 1)
        ring = inner.boundary
        self.ring = ring
        self.ring_ix = (ring[:, 0] + H, ring[:, 1] + H)
        Gcols = np.empty((len(ring), len(ring)))
        chunk = max(1, int(2e7 // (side * side)))
        for s in range(0, len(ring), chunk):
            rr = ring[s:s + chunk]
            src = np.zeros((len(rr), side, side))
            src[np.arange(len(rr)), rr[:, 0] + H, rr[:, 1] + H] = 4.0
            cols = rect_solve(src)
            Gcols[s:s + chunk] = cols[:, self.ring_ix[0], self.ring_ix[1]]
        self.G_ring = 0.5 * (Gcols + Gcols.T)
        self.chol = sla.cho_factor(self.G_ring, lower=True)
        xs = np.arange(-H, H + 1)
        sup = np.maximum(np.abs(xs)[:, None], np.abs(xs)[None, :])
        on_ring = np.zeros((side, side), dtype=bool)
        on_ring[self.ring_ix] = True
        h_in = box_half_width(k - 1)
        self.annulus = (sup > h_in) & ~on_ring
        self.plan = build_plan(concentric_box(k), "spectral-rectangle")

    def sample(self, rng, size: int):
        """Return (phi_k, h'_k) as (size, side, side) arrays."""
        H = self.half
        side = 2 * H + 1
        h = self.plan.sample(rng, size).reshape(size, side, side)
        f = h[:, self.ring_ix[0], self.ring_ix[1]]
        c = sla.cho_solve(self.chol, f.T).T
        src = np.zeros_like(h)
        src[:, self.ring_ix[0], self.ring_ix[1]] = 4.0 * c
        phi = rect_solve(src)
        hprime = np.where(self.annulus, h - phi, 0.0)
        return phi, hprime

    def component_covariances(self):
        """Dense model covariances of phi_k and h'_k on the k-th box (small k only)."""
        from .harmonic import green_matrix, harmonic_measure_matrix
        from .lattice import LatticeDomain
        D = concentric_box(self.k)
        Gk = green_matrix(D).values
        punct = D.minus(self.ring)
        Hm = harmonic_measure_matrix(punct)
        ib = LatticeDomain(punct.boundary).index_of(self.ring)
        iring = D.index_of(self.ring)
        T = np.zeros((len(D), len(self.ring)))
        T[D.index_of(punct.points)] = Hm[:, ib]
        T[iring, np.arange(len(self.ring))] = 1.0
        cov_phi = T @ Gk[np.ix_(iring, iring)] @ T.T
        ann_pts = np.argwhere(self.annulus) - self.half
        A = LatticeDomain(ann_pts)
        GA = green_matrix(A).values
        ia = D.index_of(A.points)
        cov_h = np.zeros((len(D), len(D)))
        cov_h[np.ix_(ia, ia)] = GA
        return cov_phi, cov_h


_level_cache: dict[int, LevelPlan] = {}


def level_plan(k: int) -> LevelPlan:
    if k not in _level_cache:
        _level_cache[k] = LevelPlan(k)
    return _level_cache[k]


def level_stream(seed: int, chunk: int, k: int):
    return stream(seed, "concentric", chunk, k)


# ---------------------------------------------------------------- full samples

@dataclass
class ConcentricSample:
    """A batch of concentric decompositions at depth n.

    phi0: (B, n+1); chi[k], hprime[k]: (B, side_k, side_k) centered arrays on the
    k-th box; field: (B, side_n, side_n); walk: (B, n+2) with walk[:, k] = S_k.
    """

    n: int
    phi0: np.ndarray
    chi: list
    hprime: list
    stats: DecompositionStats
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return self.phi0.shape[0]

    @cached_property
    def walk(self) -> np.ndarray:
        B = self.batch
        return np.concatenate([np.zeros((B, 1)), np.cumsum(self.phi0, axis=1)], axis=1)

    def level_term(self, k: int) -> np.ndarray:
        """(1 + b_k) phi_k(0) + chi_k + h'_k on the k-th box."""
        b = self.stats.b_profile(k)
        return (1.0 + b) * self.phi0[:, k, None, None] + self.chi[k] + self.hprime[k]

    def partial_field(self, m: int) -> np.ndarray:
        """Field on the m-th box assembled from levels 0..m."""
        H = box_half_width(m)
        out = np.zeros((self.batch, 2 * H + 1, 2 * H + 1))
        for k in range(m + 1):
            hk = box_half_width(k)
            c = H
            out[:, c - hk:c + hk + 1, c - hk:c + hk + 1] += self.level_term(k)
        return out

    @cached_property
    def field(self) -> np.ndarray:
        return self.partial_field(self.n)

    def field_sample(self) -> FieldSample:
        D = concentric_box(self.n)
        return FieldSample(D, self.field.reshape(self.batch, -1), {"sampler": "concentric", "seed": self.seed})

    def phi_full(self, k: int) -> np.ndarray:
        b = self.stats.b_profile(k)
        return (1.0 + b) * self.phi0[:, k, None, None] + self.chi[k]

    def save(self, directory, index: int = 0, report: "ControlReport | None" = None):
        """Write one sample as component CSVs plus a JSON manifest."""
        os.makedirs(directory, exist_ok=True)
        files = []
        for k in range(self.n + 1):
            H = box_half_width(k)
            xs = np.arange(-H, H + 1)
            for name, arr in (("chi", self.chi[k][index]), ("hprime", self.hprime[k][index])):
                fn = f"{name}_{k}.csv"
                with open(os.path.join(directory, fn), "w") as fh:
                    fh.write("x,y,value\n")
                    for i, x in enumerate(xs):
                        for j, y in enumerate(xs):
                            fh.write(f"{x},{y},{arr[i, j]!r}\n")
                files.append(fn)
        with open(os.path.join(directory, "walk.csv"), "w") as fh:
            fh.write("k,phi0,S\n")
            for k in range(self.n + 2):
                p = repr(float(self.phi0[index, k])) if k <= self.n else ""
                fh.write(f"{k},{p},{float(self.walk[index, k])!r}\n")
        files.append("walk.csv")
        manifest = {"depth": self.n, "seed": self.seed, "sigma2": [float(v) for v in self.stats.sigma2],
                    "files": files}
        if report is not None:
            manifest["K"] = report.K
            manifest["Ktilde"] = None if report.Ktilde == math.inf else report.Ktilde
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


def sample_concentric(n: int, rng, size: int = 1, chunk: int = 0) -> ConcentricSample:
    """Sample all components up to depth n.  Level k draws from its own keyed stream."""
    if n > FULL_FIELD_CAP:
        raise MemoryError(f"full concentric samples are capped at depth {FULL_FIELD_CAP}")
    seed = _seed_of(rng)
    stats = decomposition_stats(n)
    phi0 = np.empty((size, n + 1))
    chi = []
    hprime = []
    g0 = level_stream(seed, chunk, 0)
    phi0[:, 0] = g0.standard_normal(size)
    chi.append(np.zeros((size, 1, 1)))
    hprime.append(np.zeros((size, 1, 1)))
    for k in range(1, n + 1):
        phi, hp = level_plan(k).sample(level_stream(seed, chunk, k), size)
        H = box_half_width(k)
        p0 = phi[:, H, H].copy()
        phi0[:, k] = p0
        c = phi - (1.0 + stats.b_profile(k)) * p0[:, None, None]
        c[:, H, H] = 0.0
        chi.append(c)
        hprime.append(hp)
    return ConcentricSample(n, phi0, chi, hprime, stats, seed)


def composed_covariance(n: int) -> np.ndarray:
    """Model covariance on the n-th box obtained by summing the component laws (dense, small n)."""
    D = concentric_box(n)
    H = box_half_width(n)
    total = np.zeros((len(D), len(D)))
    i0 = D.index_of([(0, 0)])[0]
    total[i0, i0] += 1.0
    for k in range(1, n + 1):
        cp, ch = level_plan(k).component_covariances()
        Dk = concentric_box(k)
        idx = D.index_of(Dk.points)
        total[np.ix_(idx, idx)] += cp + ch
    return total


# ---------------------------------------------------------------- control variables

def theta(k, ell, n):
    return math.log(1 + max(k, min(ell, n - ell))) ** 2


def theta_tilde(k, ell):
    return math.log(1 + max(k, ell)) ** 2


@dataclass
class ControlReport:
    n: int
    K: int
    Ktilde: float
    C: float = DEFAULT_C

    def theta(self, k, ell):
        return theta(k, ell, self.n)

    def R(self, k, ell):
        return self.C * (1 + theta(k, ell, self.n))

    def R_tilde(self, k, ell):
        return self.C * (1 + theta_tilde(k, ell))


def _demands(sample: ConcentricSample, index: int):
    """(ell, required bound) pairs: each says Theta(ell) must be at least the given value."""
    n = sample.n
    out = []
    for ell in range(n + 1):
        out.append((ell, abs(float(sample.phi0[index, ell]))))
    for ell in range(2, n + 1):
        chi = np.abs(sample.chi[ell][index])
        H = box_half_width(ell)
        for r in range(ell - 1):
            m = float(center_crop(chi, box_half_width(r)).max())
            out.append((ell, m / 2 ** ((r - ell) / 2)))
    for ell in range(1, n + 1):
        H = box_half_width(ell)
        base = sample.chi[ell][index] + sample.hprime[ell][index] + embed(sample.chi[ell - 1][index], H)
        ring = np.ones_like(base, dtype=bool)
        hin = box_half_width(ell - 1)
        ring[H - hin:H + hin + 1, H - hin:H + hin + 1] = False
        target = centering(2**ell)
        out.append((ell, abs(float(base[ring].max()) - target)))
        if ell < n:
            ext = base + center_crop(sample.chi[ell + 1][index], H)
            out.append((ell, abs(float(ext[ring].max()) - target)))
    return out


def _min_k(req, floor_arg):
    """Smallest integer k >= 2 with log(1 + max(k, floor_arg))^2 >= req."""
    if math.log(1 + max(2, floor_arg)) ** 2 >= req:
        return 2
    k = max(2, math.ceil(math.expm1(math.sqrt(req))))
    while math.log(1 + k) ** 2 < req:
        k += 1
    while k > 2 and math.log(1 + k - 1) ** 2 >= req:
        k -= 1
    return k


def control_variables(sample: ConcentricSample, index: int = 0, C: float = DEFAULT_C) -> ControlReport:
    n = sample.n
    dem = _demands(sample, index)
    k_req = max(_min_k(q, min(ell, n - ell)) for ell, q in dem)
    K = k_req if k_req <= n // 2 else n // 2 + 1
    kt = max(_min_k(q, ell) for ell, q in dem)
    Ktilde = kt if kt < 2**62 else math.inf
    return ControlReport(n, K, Ktilde, C)


def random_walk_gaps(sample: ConcentricSample, index: int = 0) -> np.ndarray:
    """For k = 0..n: |max over the k-th annulus of [h - m_{2^n}(1 - pinning profile)] - (S_{n+1} - S_k)|."""
    n = sample.n
    H = box_half_width(n)
    h = sample.field[index]
    prof = concentric_box(n).to_array(pinning_profile(concentric_box(n), method="green").values)
    shifted = h - centering(2**n) * (1 - prof)
    S = sample.walk[index]
    gaps = np.empty(n + 1)
    for k in range(n + 1):
        hk = box_half_width(k)
        mask = np.zeros_like(h, dtype=bool)
        mask[H - hk:H + hk + 1, H - hk:H + hk + 1] = True
        if k >= 1:
            hin = box_half_width(k - 1)
            mask[H - hin:H + hin + 1, H - hin:H + hin + 1] = False
        gaps[k] = abs(float(shifted[mask].max()) - (S[n + 1] - S[k]))
    return gaps


# ---------------------------------------------------------------- whole-plane pinned field

class WindowLevel:
    """Factor of the covariance of phi_k(x) - phi_k(0) on a small centered window, for k > window exponent."""

    def __init__(self, k: int, r: int):
        W = concentric_box(r).points
        pairs_a = np.repeat(W, len(W), axis=0)
        pairs_b = np.tile(W, (len(W), 1))
        zero = np.zeros((len(W), 2), dtype=np.int64)

        def c(a, b):
            return box_green(k, a, b) - box_green(k - 1, a, b)

        cxy = np.concatenate([c(pairs_a[s:s + 400], pairs_b[s:s + 400]) for s in range(0, len(pairs_a), 400)])
        cxy = cxy.reshape(len(W), len(W))
        cx0 = c(W, zero)
        c00 = c(zero[:1], zero[:1])[0]
        cov = cxy - cx0[:, None] - cx0[None, :] + c00
        cov = 0.5 * (cov + cov.T)
        w, V = np.linalg.eigh(cov)
        self.cov = cov
        self.factor = V * np.sqrt(np.clip(w, 0, None))


_window_cache: dict = {}


def window_level(k: int, r: int) -> WindowLevel:
    if (k, r) not in _window_cache:
        _window_cache[(k, r)] = WindowLevel(k, r)
    return _window_cache[(k, r)]


def whole_plane_pinned(n: int, r: int, rng, size: int = 1, chunk: int = 0) -> FieldSample:
    """Truncated whole-plane series over levels 0..n, restricted to the r-th box."""
    if r > n - 2:
        raise ValueError("window exponent must be at most n - 2")
    seed = _seed_of(rng)
    inner = sample_concentric(r, seed, size, chunk)
    Hr = box_half_width(r)
    out = inner.field - inner.walk[:, r + 1, None, None]
    vals = out.reshape(size, -1)
    for k in range(r + 1, n + 1):
        wl = window_level(k, r)
        z = level_stream(seed, chunk, k).standard_normal((size, wl.factor.shape[1]))
        vals = vals + z @ wl.factor.T
    i0 = concentric_box(r).index_of([(0, 0)])[0]
    vals[:, i0] = 0.0
    return FieldSample(concentric_box(r), vals, {"sampler": "concentric-series", "depth": n, "seed": seed})


def whole_plane_window_covariance(n: int, r: int) -> np.ndarray:
    """Model covariance of the truncated series on the r-th box."""
    W = concentric_box(r).points
    Hr = box_half_width(r)
    pa = np.repeat(W, len(W), axis=0)
    pb = np.tile(W, (len(W), 1))
    G = box_green(r, pa, pb).reshape(len(W), len(W))
    g0 = box_green(r, W, np.zeros_like(W))
    cov = G - g0[:, None] - g0[None, :] + box_green(r, [(0, 0)], [(0, 0)])[0]
    for k in range(r + 1, n + 1):
        cov = cov + window_level(k, r).cov
    return cov
