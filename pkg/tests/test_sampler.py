import math

import numpy as np
import pytest
from scipy import stats

from dgff.harmonic import green_matrix, pinning_profile, shared_potential_table
from dgff.lattice import DomainError, LatticeDomain, box, centered_box, concentric_box
from dgff.rng import stream
from dgff.sampler import (UnsupportedMethod, binding_covariance, build_plan, pinned_window_sampler, read_binary,
                          sample_dgff, sample_gibbs_markov, sample_nu0, sample_nu0_points, sample_pinned)


def test_singleton_is_standard_normal():
    v = sample_dgff(LatticeDomain([(0, 0)]), stream(1), size=100_000).values[:, 0]
    assert abs(v.var() - 1) <= 4 * math.sqrt(2 / len(v))


def test_spectral_and_dense_covariances_agree():
    D = box(0, 8, 0, 8)
    spec = build_plan(D, "spectral-rectangle").covariance()
    dense = build_plan(D, "dense-factorization").covariance()
    assert np.abs(spec - dense).max() <= 1e-8
    assert np.abs(spec - green_matrix(D).values).max() <= 1e-8


def test_embedded_plan_covariance():
    D = LatticeDomain([(x, y) for x in range(9) for y in range(9) if x < 4 or y < 4])
    assert np.abs(build_plan(D, "embedded-rectangle").covariance() - green_matrix(D).values).max() <= 1e-8


def test_spectral_needs_rectangle():
    D = LatticeDomain([(0, 0), (1, 0), (0, 1)])
    with pytest.raises(UnsupportedMethod):
        sample_dgff(D, stream(0), method="spectral-rectangle")


def test_empirical_covariance_on_box():
    D = concentric_box(2)
    x = sample_dgff(D, stream(3), size=100_000).values
    G = green_matrix(D).values
    C = x.T @ x / len(x)
    se = np.sqrt((np.outer(np.diag(G), np.diag(G)) + G ** 2) / len(x))
    z = np.abs(C - G)[np.triu_indices(len(D))] / se[np.triu_indices(len(D))]
    # 3321 distinct entries: a 4-sigma exceedance or two is expected by chance alone
    assert (z > 4).mean() <= 1e-3
    assert z.max() <= 5


def test_reproducible_bits():
    D = box(0, 20, 0, 11)
    a = sample_dgff(D, stream(9, "x"), size=3).values
    b = sample_dgff(D, stream(9, "x"), size=3).values
    assert a.tobytes() == b.tobytes()


def test_gibbs_markov_covariance_identity():
    D, inner = centered_box(3), centered_box(1)
    G = green_matrix(D).values
    idx = D.index_of(inner.points)
    lhs = G[np.ix_(idx, idx)]
    rhs = green_matrix(inner).values + binding_covariance(D, inner)
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_gibbs_markov_samples():
    D, inner = centered_box(3), centered_box(1)
    binding, rest = sample_gibbs_markov(D, inner, stream(2), size=20)
    from dgff.harmonic import HarmonicProfile
    idx = D.index_of(inner.points)
    ib = D.index_of(inner.boundary)
    for row in range(20):
        prof = HarmonicProfile(inner, binding.values[row, idx], binding.values[row, ib],
                               np.ones(len(inner), dtype=bool))
        assert prof.residual() < 1e-10
    whole = sample_dgff(D, stream(2), size=20).values
    assert np.allclose(binding.values[:, idx] + rest.values, whole[:, idx], atol=1e-12)


def test_gibbs_markov_degenerate_split():
    D = centered_box(2)
    binding, rest = sample_gibbs_markov(D, D, stream(4))
    assert np.abs(binding.values).max() == 0.0
    assert np.allclose(rest.values, sample_dgff(D, stream(4)).values)


def test_gibbs_markov_containment():
    with pytest.raises(DomainError):
        sample_gibbs_markov(centered_box(1), centered_box(2), stream(0))


def test_pinned_value_and_mean():
    D = concentric_box(2)
    i0 = D.index_of([(0, 0)])[0]
    s = sample_pinned(D, 1.7, stream(5), size=100_000)
    assert np.all(s.values[:, i0] == 1.7)
    prof = pinning_profile(D).values
    se = s.values.std(axis=0, ddof=1) / math.sqrt(len(s.values))
    off = np.arange(len(D)) != i0
    assert np.all(np.abs(s.values.mean(axis=0) - 1.7 * prof)[off] <= 4 * se[off])
    zero = sample_pinned(D, 0.0, stream(6), size=4)
    assert np.all(zero.values[:, i0] == 0.0)
    with pytest.raises(DomainError):
        sample_pinned(box(1, 3, 1, 3), 0.0, stream(0))


def test_pinned_covariance_is_punctured_green():
    D = concentric_box(2)
    s = sample_pinned(D, 0.0, stream(7), size=100_000).values
    punct = D.minus([(0, 0)])
    G = green_matrix(punct).values
    idx = D.index_of(punct.points)
    C = s[:, idx].T @ s[:, idx] / len(s)
    se = np.sqrt((np.outer(np.diag(G), np.diag(G)) + G ** 2) / len(s))
    z = np.abs(C - G)[np.triu_indices(len(G))] / se[np.triu_indices(len(G))]
    assert (z > 4).mean() <= 1e-3
    assert z.max() <= 5


def test_nu0_window_model_covariance():
    t = shared_potential_table()
    smp = pinned_window_sampler(2, t)
    D = smp.domain
    keep = np.abs(D.points).sum(axis=1) > 0
    target = t.pinned_covariance(D.points[keep])
    model = smp.model_covariance()[np.ix_(keep, keep)]
    assert np.abs(model - target).max() <= 1e-8


def test_nu0_samples():
    t = shared_potential_table()
    s = sample_nu0(3, stream(8), size=40_000)
    D = s.domain
    i0 = D.index_of([(0, 0)])[0]
    assert np.all(s.values[:, i0] == 0.0)
    e1 = s.values[:, D.index_of([(1, 0)])[0]]
    assert abs(e1.var() - 2 * t((1, 0))) <= 4 * 2 * t((1, 0)) * math.sqrt(2 / len(e1))
    skew = stats.skew(e1)
    assert abs(skew) <= 4 * math.sqrt(6 / len(e1))


def test_nu0_points_sampler():
    s = sample_nu0_points([(0, 0), (1, 0), (0, 2)], stream(1), size=5)
    assert np.all(s.values[:, s.domain.index_of([(0, 0)])[0]] == 0)


def test_smaller_domain_max_dominated():
    """P(max_A h^small >= lam) <= 2 P(max_A h^big >= lam), up to Monte Carlo slack."""
    small, big = centered_box(3), centered_box(6)
    A = centered_box(1)
    n = 20_000
    ms = sample_dgff(small, stream(10), size=n).values[:, small.index_of(A.points)].max(axis=1)
    mb = sample_dgff(big, stream(11), size=n).values[:, big.index_of(A.points)].max(axis=1)
    for lam in (1.0, 2.0, 3.0):
        ps, pb = (ms >= lam).mean(), (mb >= lam).mean()
        slack = 5 * math.sqrt((ps * (1 - ps) + 4 * pb * (1 - pb)) / n)
        assert ps <= 2 * pb + slack


def test_fkg_smoke():
    D = concentric_box(2)
    x = sample_dgff(D, stream(12), size=50_000).values
    f = x.max(axis=1)
    g = (x > 0.5).sum(axis=1)
    prod = (f - f.mean()) * (g - g.mean())
    assert prod.mean() >= -4 * prod.std(ddof=1) / math.sqrt(len(x))


def test_binary_and_csv_round_trip(tmp_path):
    s = sample_dgff(box(0, 4, 0, 2), stream(0), size=3)
    s.write_binary(tmp_path / "f.bin")
    back = read_binary(tmp_path / "f.bin")
    assert back.values.tobytes() == s.values.tobytes()
    assert np.array_equal(back.domain.points, s.domain.points)
    s.write_csv(tmp_path / "f.csv", row=1)
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "x,y,value" and len(rows) == 16
    assert float(rows[1].split(",")[2]) == s.values[1, 0]


def test_off_domain_values_are_zero():
    s = sample_dgff(box(0, 3, 0, 3), stream(0))
    assert s.at([(10, 10), (-1, 0)]).tolist() == [0.0, 0.0]
