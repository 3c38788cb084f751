"""Brownian motion and Brownian bridge above curves.

Exact reflection-principle formulas, the rho functionals of a curve, the
explicit bound families for paths above positive and negative curves, and a
Monte Carlo oracle that simulates paths on a grid and corrects each step by the
exact probability that a Brownian bridge between the two grid values crosses a
constant level.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate, special

from .rng import as_generator

SQRT_2_OVER_PI = math.sqrt(2 / math.pi)
CHUNK = 8192

# Frozen constants.  LOG_FAMILY_CONSTANTS come from `fit_log_family_constant`
# (rounded up); the entropic ones from `calibrate_entropic` on the grid
# ENTROPIC_GRID with seed 11, 20000 paths and 512 steps (rounded up).
LOG_FAMILY_CONSTANTS = {(1.0, 1.0): 142.0, (2.0, 1.0): 548.0, (1.0, 2.0): 2265.0}
ENTROPIC_GRID = {"t": (100.0, 400.0, 1600.0), "u": (4.0, 8.0, 16.0, 25.0)}
# (a, sigma, zeta0) -> (c, c_prime)
ENTROPIC_BM_CONSTANTS = {(1.0, 1.0, 1.0): (16.7, 4.0)}
ENTROPIC_BRIDGE_CONSTANTS = {(1.0, 1.0, 1.0): (307.6, 4.0)}


class GrowthClassError(ValueError):
    """The curve grows too fast for the requested tail integral to converge."""


class CurveError(ValueError):
    pass


# ---------------------------------------------------------------- curves


@dataclass(frozen=True)
class CurveSpec:
    """A curve zeta: [0, inf) -> [0, inf) given by a vectorized evaluator."""

    fn: Callable
    name: str = "curve"
    deriv: Callable | None = None
    nondecreasing: bool = True
    concave: bool = False
    growth: str = "quarter"  # "half": o(s^1/2), "quarter": o(s^1/4)
    params: dict = field(default_factory=dict)
    shift: float = 0.0

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float) + self.shift)

    def derivative(self, s):
        if self.deriv is None:
            raise CurveError(f"{self.name}: no derivative available")
        return self.deriv(np.asarray(s, dtype=float) + self.shift)

    def shifted(self, u: float) -> "CurveSpec":
        """zeta_u(s) = zeta(u + s)."""
        return replace(self, shift=self.shift + float(u), name=f"{self.name}@{u:g}")

    def at_zero(self) -> float:
        return float(self(0.0))

    def validate(self, grid=None) -> None:
        grid = np.geomspace(1e-3, 1e8, 400) if grid is None else np.asarray(grid, dtype=float)
        grid = np.concatenate([[0.0], grid])
        v = self(grid)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise CurveError(f"{self.name}: curve must be finite and nonnegative")
        if self.nondecreasing and np.any(np.diff(v) < -1e-12 * (1 + np.abs(v[1:]))):
            raise CurveError(f"{self.name}: curve flagged nondecreasing but decreases")
        if self.concave:
            mid = 0.5 * (grid[1:] + grid[:-1])
            chord = 0.5 * (v[1:] + v[:-1])
            if np.any(self(mid) < chord - 1e-9 * (1 + np.abs(chord))):
                raise CurveError(f"{self.name}: curve flagged concave but is not")


def constant_curve(c: float) -> CurveSpec:
    if c < 0:
        raise CurveError("constant curve must be nonnegative")
    return CurveSpec(fn=lambda s: np.full_like(s, float(c), dtype=float),
                     deriv=lambda s: np.zeros_like(s, dtype=float),
                     name=f"const({c:g})", concave=True, params={"c": float(c)})


def zero_curve() -> CurveSpec:
    return constant_curve(0.0)


def gamma_curve(a: float) -> CurveSpec:
    """a [1 + log(a + s)]^2, concave and nondecreasing for a > golden ratio."""
    if a <= (1 + math.sqrt(5)) / 2:
        raise CurveError("gamma curve needs a > (1 + sqrt 5)/2")
    return CurveSpec(fn=lambda s: a * (1 + np.log(a + s)) ** 2,
                     deriv=lambda s: 2 * a * (1 + np.log(a + s)) / (a + s),
                     name=f"gamma(a={a:g})", concave=True, params={"a": float(a)})


def log_family(a: float = 1.0, sigma: float = 1.0, zeta0: float = 1.0) -> CurveSpec:
    """zeta0 + (a sigma^2 / 2) log(1 + s/sigma^2)^2.

    Its derivative equals a log(1 + s/sigma^2) / (1 + s/sigma^2), the extreme
    member of the class controlled by `log_family_bound`.
    """
    s2 = sigma * sigma
    return CurveSpec(fn=lambda s: zeta0 + 0.5 * a * s2 * np.log1p(s / s2) ** 2,
                     deriv=lambda s: a * np.log1p(s / s2) / (1 + s / s2),
                     name=f"logfam(a={a:g},sigma={sigma:g},z0={zeta0:g})",
                     params={"a": float(a), "sigma": float(sigma), "zeta0": float(zeta0)})


def power_curve(c: float, p: float) -> CurveSpec:
    """c s^p; used to probe the growth-class checks."""
    growth = "quarter" if p < 0.25 else "half"
    return CurveSpec(fn=lambda s: c * np.power(s, p), name=f"{c:g}*s^{p:g}",
                     concave=p <= 1, growth=growth, params={"c": c, "p": p})


def symmetrize(curve: CurveSpec, t: float) -> Callable:
    """s -> zeta(min(s, t - s))."""
    return lambda s: curve(np.minimum(s, t - np.asarray(s, dtype=float)))


# ---------------------------------------------------------------- exact formulas


def tau_tail(x: float, t: float) -> float:
    """P^0(B stays below x up to time t) = P(|B_1| <= x/sqrt t)."""
    if x <= 0 or t <= 0:
        raise ValueError("tau_tail needs x > 0 and t > 0")
    return float(special.erf(x / math.sqrt(2 * t)))


def bridge_positive(x: float, y: float, t: float) -> float:
    """P^x(bridge to y over [0, t] stays positive) = 1 - exp(-2xy/t)."""
    if x < 0 or y < 0 or t <= 0:
        raise ValueError("bridge_positive needs x, y >= 0 and t > 0")
    return float(-math.expm1(-2 * x * y / t))


def argmax_density(s, z, t: float):
    """Joint density of (time of the maximum, maximum) of B on [0, t]."""
    s = np.asarray(s, dtype=float)
    z = np.asarray(z, dtype=float)
    inside = (s > 0) & (s < t) & (z >= 0)
    ss = np.where(inside, s, 0.5 * t)
    out = z * np.exp(-z * z / (2 * ss)) / (math.pi * ss**1.5 * np.sqrt(t - ss))
    out = np.where(inside, out, 0.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- rho functionals

_VMAX = 300.0


def _tail_integral(x: float, h: Callable, label: str) -> float:
    """int_{x^2}^inf h(s) s^{-3/2} ds, written as (2/x) int_0^inf h(x^2 e^{2v}) e^{-v} dv.

    The v-integral is computed on [0, VMAX] and the remainder is extrapolated
    from the exponential decay rate of the integrand near VMAX.
    """
    x2 = x * x
    vmax = min(_VMAX, 0.5 * (700 - math.log(x2)))

    def f(v):
        return float(h(x2 * math.exp(2 * v))) * math.exp(-v)

    body, _ = integrate.quad(f, 0.0, vmax, limit=400, epsabs=1e-13, epsrel=1e-11)
    f1, f0 = f(vmax), f(vmax - 20.0)
    if f1 == 0.0:
        return 2 * body / x
    if f0 <= 0 or f1 >= f0:
        raise GrowthClassError(f"{label}: integrand does not decay, tail diverges")
    rate = math.log(f0 / f1) / 20.0
    tail = f1 / rate
    if rate < 0.05 or tail > 1e-8 * max(abs(body), 1e-300):
        raise GrowthClassError(f"{label}: tail decays too slowly (rate {rate:.3g})")
    return 2 * (body + tail) / x


@dataclass(frozen=True)
class RhoValues:
    rho: float
    rho_tilde: float


def rho_functionals(x: float, curve: CurveSpec) -> RhoValues:
    """rho(x) = zeta(x^2) + (x/2) int_{x^2}^inf zeta(s) s^{-3/2} ds and
    rho~(x) = rho(x) + 4 zeta(x^2)^2 / x + 2 int_{x^2}^inf zeta(s)^2 s^{-3/2} ds."""
    if x <= 0:
        raise ValueError("rho functionals need x > 0")
    z = float(curve(x * x))
    i1 = _tail_integral(x, curve, f"{curve.name}: zeta s^-3/2")
    rho = z + 0.5 * x * i1
    i2 = _tail_integral(x, lambda s: float(curve(s)) ** 2, f"{curve.name}: zeta^2 s^-3/2")
    return RhoValues(rho, rho + 4 * z * z / x + 2 * i2)


def log_family_bound(x: float, u: float, curve: CurveSpec, c: float | None = None) -> float:
    """2 zeta(u) + 16 zeta(u)^2 / x + c (log(e + x^2/sigma^2))^4, an upper bound on rho~_u(x)."""
    a, sigma = curve.params["a"], curve.params["sigma"]
    if c is None:
        c = log_family_constant(a, sigma)
    zu = float(curve(u))
    return 2 * zu + 16 * zu * zu / x + c * math.log(math.e + x * x / sigma**2) ** 4


def log_family_constant(a: float, sigma: float) -> float:
    key = (float(a), float(sigma))
    if key not in LOG_FAMILY_CONSTANTS:
        raise CurveError(f"no frozen constant for a={a}, sigma={sigma}; run fit_log_family_constant")
    return LOG_FAMILY_CONSTANTS[key]


def fit_log_family_constant(a: float, sigma: float, zeta0: float = 1.0, xs=None, us=None) -> float:
    """Smallest c making `log_family_bound` hold on a grid of (x, u)."""
    curve = log_family(a, sigma, zeta0)
    xs = np.geomspace(1, 1e4, 13) if xs is None else xs
    us = np.concatenate([[0.0], np.geomspace(1e-2, 1e6, 9)]) if us is None else us
    worst = 0.0
    for u in us:
        cu = curve.shifted(u)
        zu = float(curve(u))
        for x in xs:
            rt = rho_functionals(float(x), cu).rho_tilde
            need = (rt - 2 * zu - 16 * zu * zu / x) / math.log(math.e + x * x / sigma**2) ** 4
            worst = max(worst, need)
    return worst


# ---------------------------------------------------------------- bounds


def kappa1(u: float) -> float:
    w = u ** (2 / 3)
    return 4 * (1 + w) * w


def kappa2(u: float, v: float) -> float:
    return 48 * (1 + u) * (1 + v) * (math.sqrt(u) + math.sqrt(v))


BOUND_KINDS = ("bm-pos-lower", "bridge-pos-lower", "bm-neg-upper", "bridge-neg-upper",
               "entropic-bm", "entropic-bridge")


@dataclass(frozen=True)
class BoundValue:
    kind: str
    value: float
    delta: float
    vacuous: bool
    side: str  # "lower" or "upper"


def curve_bound(kind: str, curve: CurveSpec, t: float, x: float | None = None,
                y: float | None = None, u: float | None = None) -> BoundValue:
    """Explicit bound on the probability that B (or a bridge) stays above +zeta or -zeta."""
    if t <= 0:
        raise ValueError("t must be positive")
    if kind == "bm-pos-lower":
        r = rho_functionals(x, curve).rho
        delta = x * x / (2 * t) + 4 * (r / x) ** (2 / 3)
        return BoundValue(kind, (1 - delta) * SQRT_2_OVER_PI * x / math.sqrt(t), delta, delta >= 1, "lower")
    if kind == "bridge-pos-lower":
        rx, ry = rho_functionals(x, curve).rho, rho_functionals(y, curve).rho
        delta = x * y / t + 4 * (math.sqrt(rx / x) + math.sqrt(ry / y)) * math.exp((x - y) ** 2 / (2 * t))
        return BoundValue(kind, (1 - delta) * 2 * x * y / t, delta, delta >= 1, "lower")
    if kind == "bm-neg-upper":
        delta = kappa1(rho_functionals(x, curve).rho_tilde / x)
        value = (1 + delta) * SQRT_2_OVER_PI * x / math.sqrt(t)
        return BoundValue(kind, value, delta, value >= 1, "upper")
    if kind == "bridge-neg-upper":
        rx, ry = rho_functionals(x, curve).rho_tilde, rho_functionals(y, curve).rho_tilde
        delta = kappa2(rx / x, ry / y) * math.exp((x - y) ** 2 / (2 * t))
        value = (1 + delta) * 2 * x * y / t
        return BoundValue(kind, value, delta, value >= 1, "upper")
    if kind in ("entropic-bm", "entropic-bridge"):
        table = ENTROPIC_BM_CONSTANTS if kind == "entropic-bm" else ENTROPIC_BRIDGE_CONSTANTS
        p = curve.params
        key = (p.get("a"), p.get("sigma"), p.get("zeta0"))
        if key not in table:
            raise CurveError(f"no frozen entropic constants for {curve.name}; run calibrate_entropic")
        c, c_prime = table[key]
        scale = math.sqrt(t) if kind == "entropic-bm" else t
        value = c * u ** (-1 / 16) / scale
        hi = t / 2 if kind == "entropic-bm" else t / 4
        return BoundValue(kind, value, 0.0, value >= 1 or not (c_prime <= u <= hi), "upper")
    raise ValueError(f"unknown bound kind {kind!r}; expected one of {BOUND_KINDS}")


# ---------------------------------------------------------------- Monte Carlo oracle


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    paths: int

    def merge(self, other: "MCEstimate") -> "MCEstimate":
        n = self.paths + other.paths
        mean = (self.mean * self.paths + other.mean * other.paths) / n
        # pooled second moments
        m2 = sum((e.stderr**2 * e.paths * (e.paths - 1) + e.paths * e.mean**2) for e in (self, other))
        var = max(m2 / n - mean**2, 0.0) * n / max(n - 1, 1)
        return MCEstimate(mean, math.sqrt(var / n), n)

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.stderr + 1e-12

    def within_bounded(self, value: float, k: float = 3.0) -> bool:
        """Like `within`, for weights in [0, 1] with true mean `value`: their variance is at most
        value (1 - value), which keeps rare failures unseen by the sample from shrinking the error."""
        se = max(self.stderr, math.sqrt(max(value * (1 - value), 0.0) / self.paths))
        return abs(self.mean - value) <= k * se + 1e-12


def _estimate(weights: list) -> MCEstimate:
    w = np.concatenate(weights)
    n = len(w)
    return MCEstimate(float(w.mean()), float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf, n)


def _step_floor(barrier: Callable, times: np.ndarray, peak: float | None) -> np.ndarray:
    """Piecewise-constant minorant of a barrier curve on each grid step.

    Barriers here are monotone, or unimodal/antimodal with the extremum at `peak`,
    so the minimum over a step is attained at an endpoint or at the peak.
    """
    lo, hi = times[:-1], times[1:]
    m = np.minimum(barrier(lo), barrier(hi))
    if peak is not None:
        inside = (lo < peak) & (peak < hi)
        if inside.any():
            m = np.where(inside, np.minimum(m, barrier(np.full_like(lo, peak))), m)
    return m


def _paths(rng, n: int, start: float, times: np.ndarray, end: float | None) -> np.ndarray:
    dt = np.diff(times)
    incr = rng.standard_normal((n, len(dt))) * np.sqrt(dt)
    w = np.zeros((n, len(times)))
    np.cumsum(incr, axis=1, out=w[:, 1:])
    if end is not None:
        frac = (times - times[0]) / (times[-1] - times[0])
        w -= frac * (w[:, -1:] - (end - start))
    return start + w


def _survival(path: np.ndarray, floor: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Per-path probability of staying above a stepwise-constant floor, given grid values."""
    a = path[:, :-1] - floor
    b = path[:, 1:] - floor
    ok = np.all(a > 0, axis=1) & np.all(b > 0, axis=1)
    with np.errstate(divide="ignore"):
        logp = np.log(-np.expm1(-2 * np.clip(a, 0, None) * np.clip(b, 0, None) / dt)).sum(axis=1)
    return np.where(ok, np.exp(logp), 0.0)


def _barrier(curve: CurveSpec, sign: str, kind: str, t: float):
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' (above zeta) or '-' (above -zeta)")
    sgn = 1.0 if sign == "+" else -1.0
    if kind == "bridge":
        return (lambda s: sgn * curve(np.minimum(s, t - np.asarray(s, dtype=float)))), t / 2
    if kind == "bm":
        return (lambda s: sgn * curve(s)), None
    raise ValueError("kind must be 'bm' or 'bridge'")


def mc_curve_probability(kind: str, curve: CurveSpec, sign: str, x: float, t: float,
                         y: float | None = None, steps: int = 256, paths: int = 100_000,
                         rng=None) -> MCEstimate:
    """Probability that B from x (or the bridge from x to y) stays above sign*zeta on [0, t].

    For bridges the curve is symmetrized to zeta(min(s, t - s)).  Each grid step
    is weighted by the exact non-crossing probability of the Brownian bridge
    between the grid values against the step's lowest barrier level, so the
    estimate can only overshoot and the bias vanishes as steps grow.
    """
    if steps < 1 or paths < 2:
        raise ValueError("need steps >= 1 and paths >= 2")
    if kind == "bridge" and y is None:
        raise ValueError("bridge kind needs the endpoint y")
    rng = as_generator(rng)
    barrier, peak = _barrier(curve, sign, kind, t)
    times = np.linspace(0.0, t, steps + 1)
    floor = _step_floor(barrier, times, peak)
    dt = np.diff(times)
    out = []
    for start in range(0, paths, CHUNK):
        n = min(CHUNK, paths - start)
        p = _paths(rng, n, x, times, y if kind == "bridge" else None)
        out.append(_survival(p, floor, dt))
    return _estimate(out)


def mc_entropic(kind: str, curve: CurveSpec, t: float, u: float, steps: int = 512,
                paths: int = 100_000, rng=None) -> MCEstimate:
    """P^0(path stays above -zeta on [0, t] but dips below +zeta somewhere after u).

    For the bridge (pinned to 0 at time t) the curve is symmetrized and the dip is
    looked for on [u, t - u].
    """
    rng = as_generator(rng)
    times = np.linspace(0.0, t, steps + 1)
    dt = np.diff(times)
    low, peak = _barrier(curve, "-", kind, t)
    high, _ = _barrier(curve, "+", kind, t)
    lo_floor = _step_floor(low, times, peak)
    hi_floor = _step_floor(high, times, peak)
    end = t - u if kind == "bridge" else t
    window = (times[:-1] >= u - 1e-12) & (times[1:] <= end + 1e-12)
    both = np.where(window, hi_floor, lo_floor)
    out = []
    for start in range(0, paths, CHUNK):
        n = min(CHUNK, paths - start)
        p = _paths(rng, n, 0.0, times, 0.0 if kind == "bridge" else None)
        out.append(_survival(p, lo_floor, dt) - _survival(p, both, dt))
    return _estimate(out)


def calibrate_entropic(kind: str, curve: CurveSpec, ts, us, steps=512, paths=20_000, rng=None,
                       safety: float = 1.5) -> float:
    """Smallest c with MC (+2 stderr) <= c u^{-1/16} / scale(t) on the grid, times a safety factor."""
    rng = as_generator(rng)
    worst = 0.0
    for t in ts:
        for u in us:
            est = mc_entropic(kind, curve, t, u, steps=steps, paths=paths, rng=rng)
            scale = math.sqrt(t) if kind == "bm" else t
            worst = max(worst, (est.mean + 2 * est.stderr) * scale * u ** (1 / 16))
    return safety * worst


# ---------------------------------------------------------------- audits


@dataclass(frozen=True)
class AuditRow:
    kind: str
    curve: str
    x: float
    y: float
    t: float
    bound: float
    mc: float
    stderr: float
    verdict: str


def audit_verdict(bound: BoundValue, est: MCEstimate, k: float = 3.0) -> str:
    if bound.side == "lower":
        if bound.vacuous:
            return "vacuous"
        return "violated" if bound.value > est.mean + k * est.stderr else "ok"
    if bound.value < est.mean - k * est.stderr:
        return "violated"
    return "vacuous" if bound.vacuous else "ok"


_KIND_SETUP = {
    "bm-pos-lower": ("bm", "+"),
    "bridge-pos-lower": ("bridge", "+"),
    "bm-neg-upper": ("bm", "-"),
    "bridge-neg-upper": ("bridge", "-"),
}


def default_audit_grid():
    """(kind, curve, x, y, t) points used by the curves audit."""
    pos = log_family(a=2e-4, sigma=1.0, zeta0=1e-3)
    neg = log_family(a=1e-3, sigma=1.0, zeta0=1e-2)
    grid = []
    for x, t in ((2.0, 400.0), (3.0, 900.0), (4.0, 400.0)):
        grid.append(("bm-pos-lower", pos, x, None, t))
        grid.append(("bridge-pos-lower", pos, x, x, t))
        grid.append(("bm-neg-upper", neg, x, None, t))
        grid.append(("bridge-neg-upper", neg, x, 1.5 * x, t))
    return grid


def audit_bounds(grid=None, steps: int = 256, paths: int = 20_000, rng=None, k: float = 3.0) -> list:
    """Check every bound against crossing-corrected Monte Carlo."""
    rng = as_generator(rng)
    rows = []
    for kind, curve, x, y, t in (default_audit_grid() if grid is None else grid):
        mc_kind, sign = _KIND_SETUP[kind]
        bound = curve_bound(kind, curve, t, x=x, y=y)
        est = mc_curve_probability(mc_kind, curve, sign, x, t, y=y, steps=steps, paths=paths, rng=rng)
        rows.append(AuditRow(kind, curve.name, x, math.nan if y is None else y, t,
                             bound.value, est.mean, est.stderr, audit_verdict(bound, est, k)))
    return rows


CLOSED_FORM_GRID = tuple((x, t) for x in (0.5, 1.0, 2.0) for t in (1.0, 4.0, 16.0))


def closed_form_audit(grid=CLOSED_FORM_GRID, steps: int = 64, paths: int = 100_000, rng=None,
                      k: float = 3.0) -> list:
    """tau_tail and bridge_positive against MC; constant barriers make the correction exact."""
    rng = as_generator(rng)
    zero = zero_curve()
    rows = []
    for x, t in grid:
        est = mc_curve_probability("bm", zero, "+", x, t, steps=steps, paths=paths, rng=rng)
        exact = tau_tail(x, t)
        rows.append(AuditRow("tau_tail", zero.name, x, math.nan, t, exact, est.mean, est.stderr,
                             "ok" if est.within_bounded(exact, k) else "violated"))
        y = 1.5 * x
        est = mc_curve_probability("bridge", zero, "+", x, t, y=y, steps=steps, paths=paths, rng=rng)
        exact = bridge_positive(x, y, t)
        rows.append(AuditRow("bridge_positive", zero.name, x, y, t, exact, est.mean, est.stderr,
                             "ok" if est.within_bounded(exact, k) else "violated"))
    return rows


def write_audit_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "curve", "x", "y", "t", "bound", "mc", "stderr", "verdict"])
        for r in rows:
            w.writerow([r.kind, r.curve, repr(r.x), repr(r.y), repr(r.t), repr(r.bound),
                        repr(r.mc), repr(r.stderr), r.verdict])


# ---------------------------------------------------------------- decoupling and symmetrization


def decoupling_check(x: float, y: float, t: float, t1: float, t2: float, steps: int = 256,
                     paths: int = 50_000, rng=None):
    """Bridge from x to y staying positive on [0, t1] and on [t - t2, t], versus the
    product bound sqrt(t/(t - t1 - t2)) exp((x-y)^2/2t) P^x(A1) P^y(A2)."""
    rng = as_generator(rng)
    times = np.linspace(0.0, t, steps + 1)
    dt = np.diff(times)
    active = (times[1:] <= t1 + 1e-12) | (times[:-1] >= t - t2 - 1e-12)
    floor = np.where(active, 0.0, -np.inf)
    out = []
    for start in range(0, paths, CHUNK):
        n = min(CHUNK, paths - start)
        out.append(_survival(_paths(rng, n, x, times, y), floor, dt))
    bound = math.sqrt(t / (t - t1 - t2)) * math.exp((x - y) ** 2 / (2 * t)) * tau_tail(x, t1) * tau_tail(y, t2)
    return _estimate(out), bound


def symmetrization_check(x: float, y: float, t: float, c1: float, c2: float,
                         steps: int = 256, paths: int = 50_000, rng=None):
    """Bridge from x to y above c1 on the first half and above c2 on the second half,
    versus sqrt(P^x(above c1 | B_t = x) P^y(above c2 | B_t = y)) exp((x-y)^2/2t)."""
    rng = as_generator(rng)
    if steps % 2:
        raise ValueError("steps must be even so that t/2 is a grid point")
    times = np.linspace(0.0, t, steps + 1)
    dt = np.diff(times)
    floor = np.where(times[1:] <= t / 2 + 1e-12, c1, c2)
    out = []
    for start in range(0, paths, CHUNK):
        n = min(CHUNK, paths - start)
        out.append(_survival(_paths(rng, n, x, times, y), floor, dt))
    p1 = bridge_positive(x - c1, x - c1, t) if x > c1 else 0.0
    p2 = bridge_positive(y - c2, y - c2, t) if y > c2 else 0.0
    return _estimate(out), math.sqrt(p1 * p2) * math.exp((x - y) ** 2 / (2 * t))


# ---------------------------------------------------------------- random walks


@dataclass(frozen=True)
class WalkClock:
    """Step variances of a Gaussian walk, realized as B observed at times t_k."""

    sigma2: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma2, dtype=float)
        if s.ndim != 1 or len(s) == 0 or np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("step variances must be positive and finite")
        object.__setattr__(self, "sigma2", s)

    @classmethod
    def uniform(cls, n: int, variance: float = 1.0) -> "WalkClock":
        return cls(np.full(n, float(variance)))

    @classmethod
    def from_decomposition(cls, n: int) -> "WalkClock":
        """Variances of the backbone-walk steps of the depth-n concentric decomposition."""
        from .concentric import decomposition_stats

        return cls(np.asarray(decomposition_stats(n).sigma2, dtype=float))

    @property
    def n(self) -> int:
        return len(self.sigma2)

    @property
    def t(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.sigma2)])

    @property
    def smin(self) -> float:
        return float(self.sigma2.min())

    @property
    def smax(self) -> float:
        return float(self.sigma2.max())


@dataclass(frozen=True)
class SandwichReport:
    estimate: MCEstimate
    lower: MCEstimate
    upper_probability: MCEstimate
    correction: float

    @property
    def upper(self) -> float:
        return self.upper_probability.mean * self.correction

    @property
    def inside(self) -> bool:
        lo_ok = self.estimate.mean + 3 * self.estimate.stderr >= self.lower.mean - 3 * self.lower.stderr
        hi = (self.upper_probability.mean + 3 * self.upper_probability.stderr) * self.correction
        return lo_ok and self.estimate.mean - 3 * self.estimate.stderr <= hi


def _walk_values(rng, n: int, times: np.ndarray, start: float, end: float | None) -> np.ndarray:
    return _paths(rng, n, start, times, end)


def rw_above_curve(clock: WalkClock, gamma: CurveSpec, n: int, k: int, conditioning: str = "free",
                   x: float = 1.0, y: float | None = None, rng=None, paths: int = 20_000,
                   steps: int = 256, sandwich: bool = True):
    """P(S_l >= -gamma(l ^ (n - l)) for l = k..n-k | S_k = x, S_{n-k} = y)  (bridge-to-y), or
    P(S_l >= -gamma(l) for l = k..n | S_k = x)  (free), with S_l = B(t_l).

    With `sandwich`, also evaluates the Brownian upper and lower comparison
    probabilities with curves rescaled by the extreme step variances.
    """
    rng = as_generator(rng)
    if clock.n < n:
        raise ValueError("clock has fewer steps than n")
    tt = clock.t
    if conditioning == "free":
        ells = np.arange(k, n + 1)
        bar = -gamma(ells.astype(float))
        end = None
    elif conditioning == "bridge-to-0" or conditioning == "bridge":
        if not 0 <= k <= n // 2:
            raise ValueError("bridge conditioning needs k <= n/2")
        ells = np.arange(k, n - k + 1)
        bar = -gamma(np.minimum(ells, n - ells).astype(float))
        end = 0.0 if y is None else y
    else:
        raise ValueError("conditioning must be 'free' or 'bridge-to-0'")
    times = tt[ells] - tt[k]
    out = []
    for start in range(0, paths, CHUNK):
        m = min(CHUNK, paths - start)
        w = _walk_values(rng, m, times, x, end)
        out.append(np.all(w >= bar, axis=1).astype(float))
    est = _estimate(out)
    if not sandwich:
        return est
    span = times[-1]
    smin, smax, tk = clock.smin, clock.smax, tt[k]
    upper_curve = CurveSpec(fn=lambda s: 2 * gamma((tk + s) / smin), name="2zeta", nondecreasing=True)
    lower_curve = CurveSpec(fn=lambda s: gamma((tk + s) / smax), name="zeta~", nondecreasing=True)
    kind = "bm" if end is None else "bridge"
    up = mc_curve_probability(kind, upper_curve, "-", x, span, y=end, steps=steps, paths=paths, rng=rng)
    lo = mc_curve_probability(kind, lower_curve, "-", x, span, y=end, steps=steps, paths=paths, rng=rng)
    js = np.arange(k, (n if end is None else n - k) + 1).astype(float)
    with np.errstate(divide="ignore"):
        corr = float(np.exp(-2 * np.log(-np.expm1(-2 * gamma(js) ** 2 / smax)).sum()))
    return SandwichReport(est, lo, up, corr)


@dataclass(frozen=True)
class RepulsionPoint:
    k: int
    ratio: float
    stderr: float
    survivors: int


def entropic_repulsion(clock: WalkClock, gamma: CurveSpec, n: int, ks, conditioning: str = "free",
                       paths: int = 100_000, rng=None) -> list:
    """Fraction of walks from 0 staying above -gamma that still dip below +gamma after step k.

    Free walks use gamma(l) and look at l = k..n; walks pinned to 0 at step n use
    gamma(l ^ (n - l)) and look at l = k..n-k.  All k share the same paths.
    """
    rng = as_generator(rng)
    tt = clock.t[: n + 1]
    ells = np.arange(n + 1)
    bridge = conditioning != "free"
    g = gamma((np.minimum(ells, n - ells) if bridge else ells).astype(float))
    ks = list(ks)
    survivors = 0
    dips = np.zeros(len(ks))
    for start in range(0, paths, CHUNK):
        m = min(CHUNK, paths - start)
        w = _walk_values(rng, m, tt, 0.0, 0.0 if bridge else None)
        alive = np.all(w + g > 0, axis=1)
        below = (w - g) < 0
        for i, k in enumerate(ks):
            hi = n - k if bridge else n
            dips[i] += np.count_nonzero(alive & below[:, k:hi + 1].any(axis=1))
        survivors += int(alive.sum())
    out = []
    for i, k in enumerate(ks):
        p = dips[i] / survivors if survivors else math.nan
        se = math.sqrt(p * (1 - p) / survivors) if survivors else math.nan
        out.append(RepulsionPoint(int(k), float(p), float(se), survivors))
    return out
