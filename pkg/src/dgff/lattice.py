"""Square-lattice geometry: finite domains, dyadic boxes, balls and discretized rectangles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, reduce

import numpy as np

NEIGHBORS = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)], dtype=np.int64)


class DomainError(ValueError):
    pass


class LatticeDomain:
    """A finite set of points of Z^2 with its external vertex boundary.

    Points are kept sorted lexicographically by (x, y), so a full rectangle
    [x0..x1] x [y0..y1] has the same order as a C-ordered array indexed [x-x0, y-y0].
    """

    def __init__(self, points, name: str = ""):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        if len(pts):
            pts = np.unique(pts, axis=0)
        self.points = pts
        self.points.setflags(write=False)
        self.name = name
        self._build_index()

    def _build_index(self):
        pts = self.points
        if len(pts) == 0:
            self.lo = np.zeros(2, dtype=np.int64)
            self.shape = (0, 0)
            self._dense = np.zeros((0, 0), dtype=np.int64)
            self._hash = None
            return
        self.lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        self.shape = tuple(int(v) for v in hi - self.lo + 1)
        fill = len(pts) / (self.shape[0] * self.shape[1])
        if fill > 0.25:
            dense = np.full(self.shape, -1, dtype=np.int64)
            rel = pts - self.lo
            dense[rel[:, 0], rel[:, 1]] = np.arange(len(pts))
            self._dense = dense
            self._hash = None
        else:
            self._dense = None
            self._hash = {(int(a), int(b)): i for i, (a, b) in enumerate(pts)}

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        label = self.name or "LatticeDomain"
        return f"<{label}: {len(self)} points>"

    def __eq__(self, other):
        return isinstance(other, LatticeDomain) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def index_of(self, pts) -> np.ndarray:
        """Row index of each point, -1 when absent."""
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
        if len(self.points) == 0:
            return np.full(len(pts), -1, dtype=np.int64)
        if self._dense is not None:
            rel = pts - self.lo
            ok = (rel[:, 0] >= 0) & (rel[:, 1] >= 0) & (rel[:, 0] < self.shape[0]) & (rel[:, 1] < self.shape[1])
            out = np.full(len(pts), -1, dtype=np.int64)
            out[ok] = self._dense[rel[ok, 0], rel[ok, 1]]
            return out
        return np.array([self._hash.get((int(a), int(b)), -1) for a, b in pts], dtype=np.int64)

    def contains(self, pts) -> np.ndarray:
        return self.index_of(pts) >= 0

    def __contains__(self, p):
        return bool(self.contains(np.asarray(p))[0])

    @cached_property
    def boundary(self) -> np.ndarray:
        """External vertex boundary: points outside the domain adjacent to it."""
        if len(self) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        cand = (self.points[:, None, :] + NEIGHBORS[None, :, :]).reshape(-1, 2)
        cand = np.unique(cand, axis=0)
        return cand[~self.contains(cand)]

    @cached_property
    def is_rectangle(self) -> bool:
        return len(self) > 0 and len(self) == self.shape[0] * self.shape[1]

    def neighbor_table(self) -> np.ndarray:
        """(n, 4) array of neighbor indices inside the domain, -1 where the neighbor is outside."""
        cand = self.points[:, None, :] + NEIGHBORS[None, :, :]
        return self.index_of(cand.reshape(-1, 2)).reshape(-1, 4)

    def to_array(self, values, fill=0.0) -> np.ndarray:
        """Scatter per-point values onto the bounding-box array."""
        values = np.asarray(values)
        out = np.full(values.shape[:-1] + self.shape, fill, dtype=values.dtype)
        rel = self.points - self.lo
        out[..., rel[:, 0], rel[:, 1]] = values
        return out

    def from_array(self, arr) -> np.ndarray:
        rel = self.points - self.lo
        return np.asarray(arr)[..., rel[:, 0], rel[:, 1]]

    def union(self, other: "LatticeDomain") -> "LatticeDomain":
        return LatticeDomain(np.vstack([self.points, other.points]))

    def minus(self, other) -> "LatticeDomain":
        other = other if isinstance(other, LatticeDomain) else LatticeDomain(other)
        return LatticeDomain(self.points[~other.contains(self.points)])

    def issubset(self, other: "LatticeDomain") -> bool:
        return bool(np.all(other.contains(self.points)))

    def closure(self) -> "LatticeDomain":
        return LatticeDomain(np.vstack([self.points, self.boundary]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "role"])
            for x, y in self.points:
                w.writerow([int(x), int(y), "interior"])
            for x, y in self.boundary:
                w.writerow([int(x), int(y), "boundary"])


def box(x0: int, x1: int, y0: int, y1: int) -> LatticeDomain:
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1), indexing="ij")
    return LatticeDomain(np.stack([xs.ravel(), ys.ravel()], axis=1))


def centered_box(half: int) -> LatticeDomain:
    return box(-half, half, -half, half)


def box_half_width(k: int) -> int:
    """Half side length of the k-th dyadic box (0 for the singleton)."""
    if k < 0:
        raise DomainError("box index must be nonnegative")
    return 0 if k == 0 else 2**k


def concentric_box(k: int) -> LatticeDomain:
    dom = centered_box(box_half_width(k))
    dom.name = f"box{k}"
    return dom


def ball(center=(0, 0), r: float = 0.0) -> LatticeDomain:
    if r < 0:
        raise DomainError("radius must be nonnegative")
    c = np.asarray(center, dtype=np.int64)
    m = int(math.floor(r))
    xs, ys = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    keep = xs**2 + ys**2 <= r * r
    pts = np.stack([xs[keep], ys[keep]], axis=1) + c
    return LatticeDomain(pts)


@dataclass(frozen=True)
class DomainSpec:
    """Finite union of closed axis-aligned rectangles (x0, x1, y0, y1) with rational corners.

    The continuum domain is the interior of the union.
    """

    rects: tuple

    def __post_init__(self):
        if not self.rects:
            raise DomainError("domain spec needs at least one rectangle")
        clean = []
        for r in self.rects:
            x0, x1, y0, y1 = (Fraction(v) for v in r)
            if not (x0 < x1 and y0 < y1):
                raise DomainError(f"degenerate rectangle {r}")
            clean.append((x0, x1, y0, y1))
        object.__setattr__(self, "rects", tuple(clean))

    @classmethod
    def unit_square(cls):
        return cls(((0, 1, 0, 1),))

    @classmethod
    def parse(cls, text: str) -> "DomainSpec":
        """Parse 'x0,x1,y0,y1; x0,x1,y0,y1' (fractions like 1/2 allowed)."""
        rects = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = [Fraction(p.strip()) for p in chunk.split(",")]
            if len(parts) != 4:
                raise DomainError(f"rectangle needs 4 numbers: {chunk!r}")
            rects.append(tuple(parts))
        return cls(tuple(rects))

    def __str__(self):
        return "; ".join(",".join(str(v) for v in r) for r in self.rects)

    def is_rectangle(self) -> bool:
        return len(self.rects) == 1

    def _uncovered_cells(self):
        xs = sorted({r[0] for r in self.rects} | {r[1] for r in self.rects})
        ys = sorted({r[2] for r in self.rects} | {r[3] for r in self.rects})
        holes = []
        for i in range(len(xs) - 1):
            for j in range(len(ys) - 1):
                mx = (xs[i] + xs[i + 1]) / 2
                my = (ys[j] + ys[j + 1]) / 2
                if not any(r[0] <= mx <= r[1] and r[2] <= my <= r[3] for r in self.rects):
                    holes.append((xs[i], xs[i + 1], ys[j], ys[j + 1]))
        return (xs[0], xs[-1], ys[0], ys[-1]), holes

    def sup_distance_to_complement(self, p) -> Fraction:
        """Exact dist_inf(p, D^c) for a rational point p."""
        (bx0, bx1, by0, by1), holes = self._uncovered_cells()
        px, py = Fraction(p[0]), Fraction(p[1])
        d = min(max(px - bx0, 0), max(bx1 - px, 0), max(py - by0, 0), max(by1 - py, 0))
        for x0, x1, y0, y1 in holes:
            dx = max(x0 - px, 0, px - x1)
            dy = max(y0 - py, 0, py - y1)
            d = min(d, max(dx, dy))
        return d


def discretize(spec: DomainSpec, N: int) -> LatticeDomain:
    """Lattice points x with dist_inf(x/N, D^c) > 1/N, in exact integer arithmetic."""
    if N < 1:
        raise DomainError("N must be a positive integer")
    (bx0, bx1, by0, by1), holes = spec._uncovered_cells()
    den = reduce(math.lcm, [v.denominator for r in spec.rects for v in r], 1)

    def scaled(v):
        # v * N * den as an exact integer
        return int(v * N * den)

    xs = np.arange(math.floor(bx0 * N), math.ceil(bx1 * N) + 1, dtype=np.int64)
    ys = np.arange(math.floor(by0 * N), math.ceil(by1 * N) + 1, dtype=np.int64)
    X, Y = np.meshgrid(xs * den, ys * den, indexing="ij")
    d = np.minimum.reduce([
        np.maximum(X - scaled(bx0), 0),
        np.maximum(scaled(bx1) - X, 0),
        np.maximum(Y - scaled(by0), 0),
        np.maximum(scaled(by1) - Y, 0),
    ])
    for x0, x1, y0, y1 in holes:
        dx = np.maximum(np.maximum(scaled(x0) - X, 0), X - scaled(x1))
        dy = np.maximum(np.maximum(scaled(y0) - Y, 0), Y - scaled(y1))
        d = np.minimum(d, np.maximum(dx, dy))
    keep = d > den
    dom = LatticeDomain(np.stack([(X[keep] // den), (Y[keep] // den)], axis=1))
    dom.name = f"D_{N}"
    return dom
