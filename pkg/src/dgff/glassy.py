"""Gibbs measures of the field at inverse temperature beta, Poisson-Dirichlet
samplers, freezing curves and the Gumbel absorption property."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special, stats

from .extremes import ALPHA, field_batches, m_N, square_domain
from .lattice import DomainError, DomainSpec
from .rng import as_generator

BETA_C = ALPHA


@dataclass(frozen=True)
class GibbsWeights:
    beta: float
    weights: np.ndarray
    log_partition: float


def log_partition(values, beta: float) -> np.ndarray:
    """log sum exp(beta h) along the last axis, accumulated after shifting by the maximum."""
    v = np.asarray(values, dtype=float)
    return special.logsumexp(beta * v, axis=-1)


def gibbs_weights(values, beta: float) -> GibbsWeights:
    """Weights proportional to exp(beta h_x)."""
    v = np.asarray(values, dtype=float)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if not np.all(np.isfinite(v)):
        raise DomainError("field has non-finite values")
    x = beta * (v - v.max())
    w = np.exp(x)
    total = w.sum()
    return GibbsWeights(beta, w / total, float(beta * v.max() + math.log(total)))


def liouville_total(values, beta: float, N: int) -> float:
    """sum_x exp(beta (h_x - m_N))."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return float(np.exp(log_partition(values, beta) - beta * m_N(N)))


def y_beta(shape: np.ndarray, beta: float, cutoff: float | None = None) -> float:
    """sum of exp(-beta phi_x) over the window points with |x| <= cutoff (NaN entries skipped).

    `shape` is a square array centered at the origin.
    """
    if beta <= BETA_C:
        warnings.warn("beta <= beta_c: the full-plane sum diverges, value is window-truncated",
                      RuntimeWarning, stacklevel=2)
    shape = np.asarray(shape, dtype=float)
    c = shape.shape[-1] // 2
    xs = np.arange(shape.shape[-1]) - c
    sel = np.ones(shape.shape[-2:], dtype=bool)
    if cutoff is not None:
        sel = xs[:, None] ** 2 + xs[None, :] ** 2 <= cutoff * cutoff
    vals = np.where(sel & np.isfinite(shape), np.exp(-beta * np.nan_to_num(shape, nan=np.inf)), 0.0)
    return vals.sum(axis=(-2, -1))


# ---------------------------------------------------------------- Poisson-Dirichlet


@dataclass
class AtomicMeasure:
    """Atoms with positive masses, sorted by decreasing mass.

    `dust` is the share of the total assigned to the truncated small points (0 when
    the truncated mass is simply dropped), so masses.sum() + dust == 1.
    """

    masses: np.ndarray
    locations: np.ndarray | None = None
    dust: float = 0.0
    discarded_expectation: float = 0.0
    raw_total: float = math.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.locations is None:
                w.writerow(["rank", "mass"])
                for i, m in enumerate(self.masses):
                    w.writerow([i + 1, repr(float(m))])
            else:
                w.writerow(["rank", "mass", "x", "y"])
                for i, (m, loc) in enumerate(zip(self.masses, np.atleast_2d(self.locations))):
                    w.writerow([i + 1, repr(float(m))] + [repr(float(v)) for v in np.ravel(loc)])


def expected_dust(s: float, epsilon: float) -> float:
    """Expected total of the points below epsilon: int_0^eps x x^(-1-s) dx."""
    return epsilon ** (1 - s) / (1 - s)


def sample_pd(s: float, rng, epsilon: float = 1e-4, dust: str = "drop") -> AtomicMeasure:
    """Points of the Poisson process with intensity x^(-1-s) dx on [epsilon, inf),
    normalized and sorted.

    dust="drop" normalizes by the kept points only; dust="expected" adds the
    expected mass of the points below epsilon to the normalization and reports
    its share in `dust`.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = as_generator(rng)
    n = rng.poisson(epsilon ** (-s) / s)
    x = epsilon * rng.random(n) ** (-1 / s)
    x = np.sort(x)[::-1]
    kept = float(x.sum())
    ed = expected_dust(s, epsilon)
    if dust == "drop":
        total, share = kept, 0.0
    elif dust == "expected":
        total = kept + ed
        share = ed / total
    else:
        raise ValueError("dust must be 'drop' or 'expected'")
    return AtomicMeasure(x / total if total > 0 else x, None, share, ed, kept)


def pd_top_weights(s: float, rng, samples: int, epsilon: float = 1e-4, dust: str = "drop", k: int = 1):
    """(samples, k) array of the k largest normalized weights; also returns sum p_i^2."""
    rng = as_generator(rng)
    top = np.zeros((samples, k))
    sq = np.zeros(samples)
    for i in range(samples):
        m = sample_pd(s, rng, epsilon, dust)
        j = min(k, len(m.masses))
        top[i, :j] = m.masses[:j]
        sq[i] = float((m.masses ** 2).sum())
    return top, sq


def stick_breaking_top(s: float, rng, samples: int, squares: bool = False, sq_tol: float = 1e-4, miss: float = 1e-9,
                       max_steps: int = 100_000_000):
    """Largest piece (and optionally the sum of squares) under stick-breaking with
    W_i ~ Beta(1 - s, i s), whose pieces are the size-biased order of PD(s).

    After n breaks the remaining stick r, rescaled to length 1, breaks like the
    same scheme with Beta(1 - s, (n + i) s) factors, so the expected number of
    later pieces longer than the current maximum b is at most
    (r/b) P(Beta(1 - s, (n + 1) s) > b/r).  A sample stops once the remaining
    stick is shorter than b or that bound falls below `miss`.  With `squares`, it
    also waits until r^2 <= sq_tol, which bounds the missing sum of squares.
    """
    rng = as_generator(rng)
    best = np.zeros(samples)
    sq = np.zeros(samples)
    rest = np.ones(samples)
    active = np.arange(samples)
    i = 1
    while len(active):
        if i > max_steps:
            raise RuntimeError("stick-breaking did not terminate")
        # draw a block of steps at once; the stopping rule only needs the block's end state
        # because the remaining stick shrinks and the running maximum grows
        block = int(min(4096, max(16, 2**19 // len(active))))
        shape_b = s * np.arange(i, i + block)
        w = rng.beta(1 - s, shape_b[None, :], size=(len(active), block))
        left = np.cumprod(1 - w, axis=1)
        before = np.concatenate([np.ones((len(active), 1)), left[:, :-1]], axis=1)
        pieces = rest[active, None] * before * w
        rest[active] *= left[:, -1]
        best[active] = np.maximum(best[active], pieces.max(axis=1))
        sq[active] += (pieces * pieces).sum(axis=1)
        r = rest[active]
        b = best[active]
        done = r <= b
        u = np.minimum(b / r, 1.0)
        tail = special.betaincc(1 - s, (i + block) * s, u) / u
        done |= tail <= miss
        if squares:
            done &= r * r <= sq_tol
        active = active[~done]
        i += block
    return (best, sq) if squares else best


def sample_sigma(s: float, Q: Callable, rng, epsilon: float = 1e-4, dust: str = "drop") -> AtomicMeasure:
    """PD(s) masses placed at iid locations drawn from Q(rng, n)."""
    rng = as_generator(rng)
    m = sample_pd(s, rng, epsilon, dust)
    m.locations = np.asarray(Q(rng, len(m.masses)))
    return m


def ks_distance(a, b) -> float:
    return float(stats.ks_2samp(np.ravel(a), np.ravel(b)).statistic)


# ---------------------------------------------------------------- freezing


@dataclass
class FreezingCurve:
    """G(t) = E exp(-exp(-beta t) sum_x exp(beta h_x)) from per-field log partition functions."""

    beta: float
    N: int
    log_z: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(-np.exp(self.log_z[None, :] - self.beta * t[:, None])).mean(axis=1)

    def stderr(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        v = np.exp(-np.exp(self.log_z[None, :] - self.beta * t[:, None]))
        return v.std(axis=1, ddof=1) / math.sqrt(v.shape[1])

    def per_field(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(-np.exp(self.log_z[:, None] - self.beta * t[None, :]))


def freezing_curve(N: int, beta: float, samples: int, seed: int, spec: DomainSpec | None = None,
                   chunk: int = 16) -> FreezingCurve:
    D = square_domain(N, spec)
    out = []
    for _, batch in field_batches(D, seed, samples, f"freezing-{beta!r}", chunk):
        out.append(log_partition(np.atleast_2d(batch.values), beta))
    return FreezingCurve(beta, N, np.concatenate(out))


@dataclass(frozen=True)
class FreezingComparison:
    shift: float
    sup_distance: float
    window: tuple
    grid: np.ndarray = field(repr=False)


def compare_freezing(c1: FreezingCurve, c2: FreezingCurve, window, points: int = 241,
                     bracket: tuple = (-5.0, 5.0)) -> FreezingComparison:
    """Shift d minimizing sup over the window of |G1(t) - G2(t + d)| (golden-section search)."""
    grid = np.linspace(window[0], window[1], points)
    g1 = c1(grid)

    def dist(d):
        return float(np.max(np.abs(g1 - c2(grid + d))))

    # coarse scan to land in the right basin, then golden-section refinement
    scan = np.linspace(bracket[0], bracket[1], 101)
    d0 = scan[int(np.argmin([dist(d) for d in scan]))]
    h = scan[1] - scan[0]
    res = optimize.minimize_scalar(dist, bracket=(d0 - h, d0, d0 + h), method="golden",
                                   options={"xtol": 1e-6})
    best = res.x if res.fun <= dist(d0) else d0
    return FreezingComparison(float(best), dist(best), tuple(window), grid)


# ---------------------------------------------------------------- Gumbel absorption


class NonIntegrableDisplacement(ValueError):
    """The empirical moment generating function does not settle."""


def empirical_mgf(lam: float, x: np.ndarray) -> float:
    e = lam * np.asarray(x, dtype=float)
    half = len(e) // 2
    a = special.logsumexp(e[:half]) - math.log(half)
    b = special.logsumexp(e[half:]) - math.log(len(e) - half)
    top = e.max() - special.logsumexp(e)
    if abs(a - b) > 0.25 or top > math.log(0.2):
        raise NonIntegrableDisplacement(
            f"exp(lambda X) average unstable: half-sample logs {a:.3f} vs {b:.3f}, "
            f"largest term share {math.exp(top):.2f}")
    return float(math.exp(special.logsumexp(e) - math.log(len(e))))


def gumbel_points(lam: float, rng, replicas: int, m: int) -> np.ndarray:
    """Top m points (decreasing) of a Poisson process with intensity exp(-lam x) dx, per replica."""
    gam = np.cumsum(rng.exponential(size=(replicas, m)), axis=1)
    return -np.log(lam * gam) / lam


@dataclass(frozen=True)
class AbsorptionResult:
    ks: float
    theta: float
    replicas: int
    top: int


def gumbel_absorption_check(lam: float, displacement: Callable, replicas: int, rng, top: int = 5,
                            depth: int = 400, mgf_samples: int = 200_000) -> AbsorptionResult:
    """Decorate a Gumbel process with iid displacements and compare its top points
    to a fresh process with intensity theta exp(-lam x), theta = E exp(lam X)."""
    rng = as_generator(rng)
    theta = empirical_mgf(lam, displacement(rng, mgf_samples))
    z = gumbel_points(lam, rng, replicas, depth)
    x = np.asarray(displacement(rng, replicas * depth)).reshape(replicas, depth)
    dec = -np.sort(-(z + x), axis=1)[:, :top]
    fresh = gumbel_points(lam, rng, replicas, top) + math.log(theta) / lam
    return AbsorptionResult(ks_distance(dec, fresh), theta, replicas, top)
