import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgff.lattice import (DomainError, DomainSpec, LatticeDomain, ball, box, concentric_box, discretize)


def brute_discretize(rects, N):
    """Enumerate dist_inf(x/N, D^c) > 1/N directly with Fractions on a padded grid."""
    spec = DomainSpec(rects)
    (x0, x1, y0, y1), _ = spec._uncovered_cells()
    out = []
    for x in range(math.floor(x0 * N) - 1, math.ceil(x1 * N) + 2):
        for y in range(math.floor(y0 * N) - 1, math.ceil(y1 * N) + 2):
            p = (Fraction(x, N), Fraction(y, N))
            if spec.sup_distance_to_complement(p) > Fraction(1, N):
                out.append((x, y))
    return sorted(out)


def test_unit_square_n1_is_empty():
    assert len(discretize(DomainSpec.unit_square(), 1)) == 0


@pytest.mark.parametrize("N", [2, 3, 4, 7])
def test_unit_square_matches_enumeration(N):
    got = sorted(map(tuple, discretize(DomainSpec.unit_square(), N).points.tolist()))
    assert got == brute_discretize(((0, 1, 0, 1),), N)


def test_l_shape_matches_enumeration():
    rects = ((0, 1, 0, Fraction(1, 2)), (0, Fraction(1, 2), 0, 1))
    for N in (4, 6, 10):
        got = sorted(map(tuple, discretize(DomainSpec(rects), N).points.tolist()))
        assert got == brute_discretize(rects, N)


def test_discretized_points_scale_into_domain():
    spec = DomainSpec.parse("0,1,0,1/2; 0,1/2,0,1")
    D = discretize(spec, 20)
    for x, y in D.points:
        assert spec.sup_distance_to_complement((Fraction(int(x), 20), Fraction(int(y), 20))) > 0


def test_deep_points_included_past_threshold():
    spec = DomainSpec(((0, 2, 0, 1),))
    delta = Fraction(1, 8)
    for N in (16, 32, 64):
        D = discretize(spec, N)
        deep = [(x, y) for x in range(0, 2 * N + 1) for y in range(0, N + 1)
                if spec.sup_distance_to_complement((Fraction(x, N), Fraction(y, N))) > delta]
        assert np.all(D.contains(deep))


def test_spec_parse_and_reject():
    assert DomainSpec.parse("0,1,0,1").is_rectangle()
    with pytest.raises(DomainError):
        DomainSpec.parse("0,1,0")
    with pytest.raises(DomainError):
        DomainSpec(((1, 0, 0, 1),))


def test_concentric_box_small():
    assert concentric_box(0).points.tolist() == [[0, 0]]
    b1 = concentric_box(1)
    assert len(b1) == 25
    assert np.abs(b1.points).max() == 2


@pytest.mark.parametrize("k", range(1, 7))
def test_concentric_box_count_and_boundary(k):
    D = concentric_box(k)
    assert len(D) == (2 ** (k + 1) + 1) ** 2
    assert len(D.boundary) == 8 * 2 ** k + 4


def test_ball_examples():
    assert ball((3, 4), 0).points.tolist() == [[3, 4]]
    assert sorted(map(tuple, ball((0, 0), 1).points.tolist())) == [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]
    assert len(ball((0, 0), 1.5)) == 9


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_ball_inside_box(k):
    assert ball((0, 0), 2 ** k).issubset(concentric_box(k))


def test_boundary_properties():
    D = LatticeDomain([(0, 0), (1, 0), (3, 3)])
    bd = D.boundary
    assert not np.any(D.contains(bd))
    for p in bd:
        nb = p + np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])
        assert D.contains(nb).any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=1, max_size=60))
def test_membership_agrees_with_set(pts):
    D = LatticeDomain(pts)
    s = set(pts)
    probe = list(s) + [(x + 1, y) for x, y in s]
    assert [bool(v) for v in D.contains(probe)] == [p in s for p in probe]
    assert len(D) == len(s)


def test_sparse_and_dense_index_agree():
    sparse = LatticeDomain([(0, 0), (40, 40), (-7, 13)])
    assert sparse._dense is None
    assert sparse.index_of([(40, 40), (1, 1)]).tolist() == [2, -1]
    dense = box(0, 3, 0, 3)
    assert dense._dense is not None
    assert dense.index_of([(3, 3)])[0] == 15


def test_csv_export(tmp_path):
    D = box(0, 1, 0, 0)
    p = tmp_path / "d.csv"
    D.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,role"
    assert sum(line.endswith("interior") for line in lines) == 2
    assert sum(line.endswith("boundary") for line in lines) == 6
