"""Extreme values of the field: centering, local maxima with their cluster shapes,
level sets, the cluster-law rejection sampler and height-intensity fits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage, optimize, stats

from .harmonic import shared_potential_table
from .lattice import DomainError, DomainSpec, LatticeDomain, box_half_width, discretize
from .rng import stream
from .sampler import FieldSample, build_plan, pinned_window_sampler

G = 2 / math.pi
ALPHA = math.sqrt(2 * math.pi)  # 2 / sqrt(g)


class InsufficientData(ValueError):
    """Too few observations for the requested fit."""


def m_N(N: float) -> float:
    """2 sqrt(g) log N - (3/4) sqrt(g) log log N."""
    if N <= 2:
        raise DomainError("m_N needs N >= 3")
    sg = math.sqrt(G)
    return 2 * sg * math.log(N) - 0.75 * sg * math.log(math.log(N))


# ---------------------------------------------------------------- local maxima


def disk(r: float) -> np.ndarray:
    m = int(math.floor(r))
    xs = np.arange(-m, m + 1)
    return xs[:, None] ** 2 + xs[None, :] ** 2 <= r * r


@dataclass
class PointProcessSample:
    """r-local maxima of one field: positions, centered heights and shapes.

    shapes[i][z] = h(x_i) - h(x_i + z) for |z|_inf <= window; NaN off the domain.
    """

    N: int | None
    r: float
    positions: np.ndarray
    heights: np.ndarray
    shapes: np.ndarray
    window: int
    ties: int = 0

    def __len__(self):
        return len(self.heights)

    @property
    def scaled_positions(self) -> np.ndarray:
        return self.positions / (self.N or 1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "sx", "sy", "height", "shape_row"])
            sp = self.scaled_positions
            for i, ((x, y), h) in enumerate(zip(self.positions, self.heights)):
                w.writerow([int(x), int(y), repr(float(sp[i, 0])), repr(float(sp[i, 1])), repr(float(h)), i])


def _as_grid(field_sample: FieldSample, row: int = 0):
    D = field_sample.domain
    vals = field_sample.values if field_sample.values.ndim == 1 else field_sample.values[row]
    arr = D.to_array(vals)
    mask = D.to_array(np.ones(len(D), dtype=bool), fill=False)
    return arr, mask, D.lo


def local_maxima_grid(arr: np.ndarray, mask: np.ndarray, r: float):
    """Indices (i, j) of r-local maxima of a field given on a grid, zero where mask is False.

    Ties inside a neighborhood are resolved in favor of the lexicographically
    smallest point; the number of tied candidates is returned as well.
    """
    h = np.where(mask, arr, 0.0)
    fp = disk(r)
    mx = ndimage.maximum_filter(h, footprint=fp, mode="constant", cval=0.0)
    cand = np.argwhere(mask & (h >= mx))
    if fp.sum() == 1 or len(cand) == 0:
        return cand, 0
    ring = fp.copy()
    ring[ring.shape[0] // 2, ring.shape[1] // 2] = False
    others = ndimage.maximum_filter(h, footprint=ring, mode="constant", cval=0.0)
    tied = others[cand[:, 0], cand[:, 1]] == h[cand[:, 0], cand[:, 1]]
    if not tied.any():
        return cand, 0
    offs = np.argwhere(fp) - fp.shape[0] // 2
    keep = np.ones(len(cand), dtype=bool)
    for n in np.flatnonzero(tied):
        i, j = cand[n]
        pts = offs + (i, j)
        ok = (pts[:, 0] >= 0) & (pts[:, 1] >= 0) & (pts[:, 0] < h.shape[0]) & (pts[:, 1] < h.shape[1])
        pts = pts[ok]
        eq = pts[h[pts[:, 0], pts[:, 1]] == h[i, j]]
        first = eq[np.lexsort((eq[:, 1], eq[:, 0]))[0]]
        keep[n] = (first[0], first[1]) == (i, j)
    return cand[keep], int(tied.sum())


def _shapes(h: np.ndarray, mask: np.ndarray, idx: np.ndarray, window: int) -> np.ndarray:
    w = window
    pad = np.pad(np.where(mask, h, np.nan), w, constant_values=np.nan)
    out = np.empty((len(idx), 2 * w + 1, 2 * w + 1))
    for n, (i, j) in enumerate(idx):
        out[n] = h[i, j] - pad[i:i + 2 * w + 1, j:j + 2 * w + 1]
    return out


def local_maxima(field_sample: FieldSample, r: float, window: int = 0, N: int | None = None,
                 row: int = 0) -> PointProcessSample:
    """Points x with h(x) = max of h over the Euclidean ball of radius r around x.

    The field is zero off its domain.  Heights are centered by m_N when N is given.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    arr, mask, lo = _as_grid(field_sample, row)
    idx, ties = local_maxima_grid(arr, mask, r)
    heights = arr[idx[:, 0], idx[:, 1]] - (m_N(N) if N else 0.0)
    shapes = _shapes(arr, mask, idx, window)
    return PointProcessSample(N, r, idx + lo, heights, shapes, window, ties)


def level_set(field_sample: FieldSample, t: float, N: int, row: int = 0) -> np.ndarray:
    """Points with h(x) >= m_N - t."""
    vals = field_sample.values if field_sample.values.ndim == 1 else field_sample.values[row]
    if t == -math.inf:
        return np.zeros((0, 2), dtype=np.int64)
    return field_sample.domain.points[vals >= m_N(N) - t]


def separation_fraction(points: np.ndarray, r: float, N: int) -> float:
    """Fraction of pairs of points at distance in (r, N/r)."""
    n = len(points)
    if n < 2:
        return 0.0
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(n, 1)
    d = d[iu]
    return float(np.mean((d > r) & (d < N / r)))


# ---------------------------------------------------------------- field batches


def square_domain(N: int, spec: DomainSpec | None = None) -> LatticeDomain:
    return discretize(spec or DomainSpec.unit_square(), N)


def field_batches(D: LatticeDomain, seed: int, samples: int, label: str, chunk: int = 16):
    """Yield (start index, FieldSample batch); batch c draws from stream(seed, label, c)."""
    plan = build_plan(D)
    for c, start in enumerate(range(0, samples, chunk)):
        b = min(chunk, samples - start)
        vals = plan.sample(stream(seed, label, c), b)
        yield start, FieldSample(D, vals, {"sampler": plan.method})


# ---------------------------------------------------------------- cluster law


def wilson_interval(k: int, n: int, level: float = 0.95):
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class ClusterEstimate:
    """Accepted shapes phi + alpha a on the window (NaN outside the ball), and the acceptance rate."""

    r: float
    k: int
    accepted: int
    trials: int
    shapes: np.ndarray
    seed: int
    ci: tuple = (0.0, 1.0)
    probes: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return self.accepted / self.trials if self.trials else math.nan

    @property
    def no_acceptance(self) -> bool:
        return self.accepted == 0

    def to_json(self) -> dict:
        return {"r": self.r, "window_exponent": self.k, "value": self.p, "ci_lo": self.ci[0],
                "ci_hi": self.ci[1], "n": self.trials, "accepted": self.accepted, "seed": self.seed,
                "stored_shapes": int(len(self.shapes))}


def window_exponent(r: float) -> int:
    """Smallest k with the Euclidean ball of radius r inside the k-th dyadic box."""
    k = 0
    while box_half_width(k) < r:
        k += 1
    return k


def sample_cluster_law(r: float, seed: int, budget: int, keep: int = 100, chunk: int = 500,
                       probe: Callable | None = None, region: str = "ball") -> ClusterEstimate:
    """Rejection sampler for the cluster law at radius r.

    Draws the origin-pinned whole-plane field phi on the smallest dyadic box
    containing the ball |x| <= r and accepts when phi + alpha a >= 0 on the ball.
    Chunk c uses stream(seed, "cluster", r, c).  The first `keep` accepted shapes
    are stored; `probe(shapes)` may return a dict of per-shape arrays that are summed
    over accepted samples.  region="box" imposes the constraint on the whole window.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    if region not in ("ball", "box"):
        raise ValueError(f"unknown region {region!r}")
    k = window_exponent(r)
    table = shared_potential_table()
    if k == 0:
        return ClusterEstimate(r, 0, budget, budget, np.zeros((min(keep, budget), 1, 1)), seed,
                               wilson_interval(budget, budget))
    sampler = pinned_window_sampler(k, table)
    D = sampler.domain
    h = sampler.half
    ball = disk(r)
    pad = h - ball.shape[0] // 2
    ball = np.pad(ball, pad)
    if region == "box":
        ball[:] = True
    boost = ALPHA * D.to_array(table(D.points))
    accepted = 0
    kept = []
    sums: dict = {}
    for c, start in enumerate(range(0, budget, chunk)):
        b = min(chunk, budget - start)
        w = sampler.sample_arrays(stream(seed, "cluster", int(r), c), b)
        w += boost
        ok = np.all(w[:, ball] >= 0, axis=1)
        acc = w[ok]
        accepted += int(ok.sum())
        if len(kept) < keep and len(acc):
            take = acc[: keep - len(kept)].copy()
            take[:, ~ball] = np.nan
            kept.extend(take)
        if probe is not None and len(acc):
            for name, v in probe(acc).items():
                sums[name] = sums.get(name, 0.0) + np.asarray(v, dtype=float).sum(axis=0)
    shapes = np.array(kept) if kept else np.zeros((0, 2 * h + 1, 2 * h + 1))
    return ClusterEstimate(r, k, accepted, budget, shapes, seed, wilson_interval(accepted, budget), sums)


def cluster_ratio(p_small: float, r_small: float, p_large: float, r_large: float) -> float:
    """[p(r_small) sqrt(log r_small)] / [p(r_large) sqrt(log r_large)]."""
    return p_small * math.sqrt(math.log(r_small)) / (p_large * math.sqrt(math.log(r_large)))


# ---------------------------------------------------------------- Xi functional


@dataclass(frozen=True)
class XiInEstimate:
    ell: int
    f: str
    value: float
    stderr: float
    n: int

    @property
    def ci(self):
        return (self.value - 1.96 * self.stderr, self.value + 1.96 * self.stderr)


def xi_in(ell: int, f: Callable | None, seed: int, budget: int, chunk: int = 500,
          f_name: str | None = None) -> XiInEstimate:
    """Monte Carlo mean of f(alpha a - phi) S_ell 1{S_ell in [ell^(1/6), ell^2]} 1{phi <= alpha a on the box},
    with phi = h(x) - h(0) for the field h on the ell-th box and S the backbone walk of its
    concentric decomposition.  f maps (B, side, side) arrays to (B,) values; None means f = 1."""
    from .concentric import sample_concentric

    name = f_name or ("1" if f is None else getattr(f, "__name__", "f"))
    table = shared_potential_table()
    from .lattice import concentric_box

    D = concentric_box(ell)
    boost = ALPHA * D.to_array(table(D.points))
    c0 = box_half_width(ell)
    lo, hi = ell ** (1 / 6), float(ell) ** 2
    vals = []
    for c, start in enumerate(range(0, budget, chunk)):
        b = min(chunk, budget - start)
        smp = sample_concentric(ell, stream(seed, "xi-in", ell, c), size=b, chunk=c)
        hfield = smp.field
        phi = hfield - hfield[:, c0:c0 + 1, c0:c0 + 1]
        S = smp.walk[:, ell]
        ok = np.all(phi <= boost, axis=(1, 2)) & (S >= lo) & (S <= hi)
        fv = np.ones(b) if f is None else np.asarray(f(boost - phi), dtype=float)
        vals.append(np.where(ok, fv * S, 0.0))
    v = np.concatenate(vals)
    return XiInEstimate(ell, name, float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))), len(v))


# ---------------------------------------------------------------- intensity fits


@dataclass(frozen=True)
class IntensityFit:
    slope: float
    ci: tuple
    n: int
    window: tuple


def _truncated_exp_mean(lam: float, L: float) -> float:
    """Mean of the density proportional to exp(-lam u) on [0, L]."""
    if abs(lam * L) < 1e-8:
        return L / 2 - lam * L * L / 12
    return 1 / lam - L / math.expm1(lam * L)


def _mle_slope(u: np.ndarray, L: float) -> float:
    m = float(u.mean())
    if m <= 0:
        return math.inf
    if m >= L:
        return -math.inf
    f = lambda lam: _truncated_exp_mean(lam, L) - m
    lo, hi = -1.0, 1.0
    while f(lo) < 0:
        lo *= 2
    while f(hi) > 0:
        hi *= 2
    return float(optimize.brentq(f, lo, hi, xtol=1e-12))


def intensity_exponent(heights, window=(-6.0, 0.0), n_boot: int = 1000, seed: int = 0,
                       min_count: int = 200, level: float = 0.95) -> IntensityFit:
    """Maximum-likelihood slope lam of a density proportional to exp(-lam h) on the window,
    with a percentile bootstrap interval."""
    h = np.asarray(heights, dtype=float)
    lo, hi = window
    h = h[(h >= lo) & (h <= hi)]
    if len(h) < min_count:
        raise InsufficientData(f"{len(h)} heights in window {window}, need {min_count}")
    u = h - lo
    L = hi - lo
    slope = _mle_slope(u, L)
    rng = stream(seed, "bootstrap")
    boots = np.array([_mle_slope(u[rng.integers(0, len(u), len(u))], L) for _ in range(n_boot)])
    q = (1 - level) / 2
    return IntensityFit(slope, (float(np.quantile(boots, q)), float(np.quantile(boots, 1 - q))), len(h),
                        (lo, hi))


def local_max_heights(N: int, r: float, samples: int, seed: int, spec: DomainSpec | None = None,
                      chunk: int = 8) -> np.ndarray:
    """Centered heights of all r-local maxima over independent fields on D_N."""
    D = square_domain(N, spec)
    mask = D.to_array(np.ones(len(D), dtype=bool), fill=False)
    out = []
    mN = m_N(N)
    for _, batch in field_batches(D, seed, samples, "local-max", chunk):
        arrs = D.to_array(np.atleast_2d(batch.values))
        for arr in arrs:
            idx, _ = local_maxima_grid(arr, mask, r)
            out.append(arr[idx[:, 0], idx[:, 1]] - mN)
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------- maximum histogram


@dataclass
class MaxHistogram:
    """Empirical joint law of (argmax / N, max - m_N); counts normalized to total mass 1."""

    N: int
    density: np.ndarray  # (nx, ny, nh) probabilities
    x_edges: np.ndarray
    y_edges: np.ndarray
    h_edges: np.ndarray
    samples: int

    @property
    def position_marginal(self) -> np.ndarray:
        return self.density.sum(axis=2)

    @property
    def height_marginal(self) -> np.ndarray:
        return self.density.sum(axis=(0, 1))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_lo", "x_hi", "y_lo", "y_hi", "h_lo", "h_hi", "mass"])
            nx, ny, nh = self.density.shape
            for i in range(nx):
                for j in range(ny):
                    for k in range(nh):
                        w.writerow([repr(float(self.x_edges[i])), repr(float(self.x_edges[i + 1])),
                                    repr(float(self.y_edges[j])), repr(float(self.y_edges[j + 1])),
                                    repr(float(self.h_edges[k])), repr(float(self.h_edges[k + 1])),
                                    repr(float(self.density[i, j, k]))])


def max_samples(N: int, samples: int, seed: int, spec: DomainSpec | None = None, chunk: int = 16):
    """(positions / N, max - m_N) of independent fields on D_N."""
    D = square_domain(N, spec)
    pos, hts = [], []
    for _, batch in field_batches(D, seed, samples, "max", chunk):
        v = np.atleast_2d(batch.values)
        i = v.argmax(axis=1)
        pos.append(D.points[i] / N)
        hts.append(v[np.arange(len(i)), i] - m_N(N))
    return np.concatenate(pos), np.concatenate(hts)


def max_histogram(N: int, samples: int, seed: int, spec: DomainSpec | None = None, bins: int = 8,
                  h_edges=None) -> MaxHistogram:
    pos, hts = max_samples(N, samples, seed, spec)
    return histogram_of_maxima(N, pos, hts, spec, bins, h_edges)


def histogram_of_maxima(N: int, pos, hts, spec: DomainSpec | None = None, bins: int = 8,
                        h_edges=None) -> MaxHistogram:
    """Bin (argmax / N, max - m_N) pairs; heights outside the edges go to the end bins."""
    samples = len(hts)
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    hts = np.asarray(hts, dtype=float)
    spec = spec or DomainSpec.unit_square()
    (x0, x1, y0, y1), _ = spec._uncovered_cells()
    xe = np.linspace(float(x0), float(x1), bins + 1)
    ye = np.linspace(float(y0), float(y1), bins + 1)
    he = np.arange(-4.0, 6.01, 0.5) if h_edges is None else np.asarray(h_edges, dtype=float)
    counts, _ = np.histogramdd(np.column_stack([pos, np.clip(hts, he[0], he[-1])]), bins=(xe, ye, he))
    return MaxHistogram(N, counts / max(samples, 1), xe, ye, he, samples)


def tail_slope(heights, lo: float = 2.0, hi: float = 5.0, width: float = 0.5) -> float:
    """Least-squares slope of log frequency of heights on [lo, hi]."""
    edges = np.arange(lo, hi + 1e-9, width)
    c, _ = np.histogram(heights, bins=edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    ok = c > 0
    if ok.sum() < 2:
        raise InsufficientData("not enough tail counts")
    return float(np.polyfit(mid[ok], np.log(c[ok]), 1)[0])


def write_estimate_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
