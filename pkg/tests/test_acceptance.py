"""Acceptance suite: one check per criterion at full scale.  Each test records a
PASS/FAIL line shown in the terminal summary.  Slow: deselect with -m "not slow"."""
import math
import time

import numpy as np
import pytest

from dgff.cli import RunManifest, main
from dgff.concentric import composed_covariance, decomposition_stats, sample_concentric
from dgff.config import KINDS
from dgff.curves import (CLOSED_FORM_GRID, WalkClock, audit_bounds, closed_form_audit, entropic_repulsion,
                         gamma_curve, log_family)
from dgff.extremes import (ALPHA, cluster_ratio, disk, intensity_exponent, local_max_heights, m_N,
                           sample_cluster_law, window_exponent)
from dgff.glassy import compare_freezing, freezing_curve, ks_distance, sample_sigma, stick_breaking_top
from dgff.harmonic import (PotentialTable, Quadrature, fit_kernel_slope, g, green_matrix, potential_kernel,
                           shared_potential_table)
from dgff.lattice import box_half_width, centered_box, concentric_box
from dgff.rng import stream
from dgff.sampler import binding_covariance

pytestmark = pytest.mark.slow


def test_1_gibbs_markov_exactness(report):
    t0 = time.time()
    D, inner = centered_box(3), centered_box(1)
    G = green_matrix(D).values
    idx = D.index_of(inner.points)
    err = np.abs(G[np.ix_(idx, idx)] - green_matrix(inner).values - binding_covariance(D, inner)).max()
    dt = time.time() - t0
    ok = err <= 1e-10 and dt < 1
    assert report(1, ok, f"Gibbs-Markov identity max error {err:.2e} (tol 1e-10), {dt:.2f} s")


def test_2_concentric_reconstruction(report):
    t0 = time.time()
    D = concentric_box(3)
    cov_err = np.abs(composed_covariance(3) - green_matrix(D).values).max()
    n = 6
    s = sample_concentric(n, stream(2, "acceptance"), size=1000)
    walk_err = 0.0
    for k in range(1, n + 2):
        part = s.partial_field(k - 1)
        c = box_half_width(k - 1)
        walk_err = max(walk_err, float(np.abs(s.walk[:, k] - part[:, c, c]).max()))
    dt = time.time() - t0
    ok = cov_err <= 1e-8 and walk_err <= 1e-9 and dt < 30
    assert report(2, ok, f"composed covariance error {cov_err:.2e} (tol 1e-8); walk identity error "
                         f"{walk_err:.2e} over 1000 samples at depth {n} (tol 1e-9), {dt:.1f} s")


def test_3_variance_limit(report):
    t0 = time.time()
    st = decomposition_stats(10)
    gap = np.abs(st.sigma2[6:11] - g * math.log(2))
    dt = time.time() - t0
    ok = gap[-1] < 0.05 and np.all(np.diff(gap) < 0) and dt < 300
    assert report(3, ok, f"|sigma_k^2 - g log 2| for k=6..10: {np.array2string(gap, precision=5)}, {dt:.1f} s")


def test_4_potential_kernel(report):
    t0 = time.time()
    t = PotentialTable()
    a0 = float(t((0, 0)))
    a1 = float(potential_kernel((1, 0)))
    a1_mid = float(potential_kernel((1, 0), Quadrature("midpoint", n=4096, tol=1e-6)))
    mean_value = float(np.mean(potential_kernel(np.array([(1, 0), (-1, 0), (0, 1), (0, -1)]))))
    slope = fit_kernel_slope(shared_potential_table(), (16, 256)).slope
    dt = time.time() - t0
    ok = (a0 == 0.0 and abs(a1 - 1) <= 1e-6 and abs(a1_mid - 1) <= 1e-6 and abs(mean_value - 1) <= 1e-6
          and abs(slope / (2 / math.pi) - 1) <= 0.01 and dt < 60)
    assert report(4, ok, f"a(0)={a0}, a(e1)={a1:.9f} (midpoint {a1_mid:.9f}), neighbour mean {mean_value:.9f}, "
                         f"slope/g-1={slope / (2 / math.pi) - 1:.2e}, {dt:.1f} s")


def test_5_closed_forms_and_bound_audit(report):
    t0 = time.time()
    closed = closed_form_audit(CLOSED_FORM_GRID, steps=64, paths=100_000, rng=stream(5, "closed"))
    audit = audit_bounds(steps=256, paths=20_000, rng=stream(5, "audit"))
    dt = time.time() - t0
    bad_closed = sum(r.verdict != "ok" for r in closed)
    violated = sum(r.verdict == "violated" for r in audit)
    vacuous = sum(r.verdict == "vacuous" for r in audit)
    ok = bad_closed == 0 and violated == 0 and dt < 600
    assert report(5, ok, f"closed forms: {len(closed) - bad_closed}/{len(closed)} within 3 sigma on the "
                         f"9-point grid; bound audit: {violated} violated, {vacuous} vacuous of {len(audit)}, "
                         f"{dt:.0f} s")


def test_6_cluster_law_acceptance(report):
    t0 = time.time()
    ests = {}
    bad = {}
    for r in (8, 64):
        ball = disk(r)
        k = box_half_width(window_exponent(r))
        pad = k - ball.shape[0] // 2
        ball_w = np.pad(ball, pad)

        def probe(acc, ball_w=ball_w, k=k):
            return {"negative": (acc[:, ball_w] < 0).sum(axis=1), "center": np.abs(acc[:, k, k])}

        ests[r] = sample_cluster_law(r, seed=6, budget=1_000_000, probe=probe)
        bad[r] = (float(ests[r].probes["negative"]), float(ests[r].probes["center"]))
    ratio = cluster_ratio(ests[8].p, 8, ests[64].p, 64)
    dt = time.time() - t0
    shapes_ok = all(v == (0.0, 0.0) for v in bad.values())
    ok = 0.75 <= ratio <= 1.33 and shapes_ok and dt < 1200
    assert report(6, ok, f"p(8)={ests[8].p:.4f}, p(64)={ests[64].p:.4f}, ratio {ratio:.3f} (in [0.75, 1.33]); "
                         f"negative entries / |shape(0)| sums {bad}, {dt:.0f} s")


def test_7_intensity_exponent(report):
    t0 = time.time()
    N = 512
    h = local_max_heights(N, 16, 500, seed=7)
    fit = intensity_exponent(h, (-6.0, 0.0), n_boot=1000, seed=7)
    dt = time.time() - t0
    rel = abs(fit.slope / ALPHA - 1)
    ok = rel <= 0.15
    assert report(7, ok, f"fitted slope {fit.slope:.3f} (95% CI {fit.ci[0]:.3f}..{fit.ci[1]:.3f}) from {fit.n} "
                         f"heights vs sqrt(2 pi)={ALPHA:.4f}: relative error {rel:.2f} (tol 0.15), {dt:.0f} s")


def test_8_freezing(report):
    t0 = time.time()
    N = 256
    mN = m_N(N)
    c1 = freezing_curve(N, 1.5 * ALPHA, 2000, seed=8)
    c2 = freezing_curve(N, 2.5 * ALPHA, 2000, seed=8)
    cmp = compare_freezing(c1, c2, (mN - 2, mN + 4))
    dt = time.time() - t0
    ok = cmp.sup_distance < 0.05 and dt < 3600
    assert report(8, ok, f"optimal shift {cmp.shift:.3f}, sup distance {cmp.sup_distance:.4f} (tol 0.05), {dt:.0f} s")


def test_9_poisson_dirichlet(report):
    t0 = time.time()
    ks = {}
    for s in (0.4, 0.5, 0.8):
        rng = stream(9, "sigma", s)
        top = np.array([sample_sigma(s, lambda r, n: r.random((n, 2)), rng, epsilon=1e-4, dust="expected").masses[0]
                        for _ in range(10_000)])
        sb = stick_breaking_top(s, stream(9, "stick", s), 10_000)
        ks[s] = ks_distance(top, sb)
    dt = time.time() - t0
    ok = all(v < 0.05 for v in ks.values()) and dt < 60
    assert report(9, ok, f"KS(p_1) {', '.join(f's={s}: {v:.4f}' for s, v in ks.items())} (tol 0.05), {dt:.0f} s")


def test_10_entropic_repulsion(report):
    t0 = time.time()
    clock = WalkClock.uniform(512)
    ks = [8, 32, 128]

    def decreasing(pts, strict):
        for a, b in zip(pts, pts[1:]):
            slack = 1.96 * math.hypot(a.stderr, b.stderr)
            if b.ratio > a.ratio + slack or (strict and b.ratio >= a.ratio):
                return False
        return True

    gam = entropic_repulsion(clock, gamma_curve(2.0), 512, ks, paths=100_000, rng=stream(10, "gamma"))
    lf = entropic_repulsion(clock, log_family(0.05, 1.0, 0.5), 512, ks, paths=100_000, rng=stream(10, "logfam"))
    dt = time.time() - t0
    ok = decreasing(gam, strict=False) and decreasing(lf, strict=True) and dt < 600
    fmt = lambda pts: ", ".join(f"k={p.k}: {p.ratio:.3f}" for p in pts)
    assert report(10, ok, f"gamma(a=2) curve {fmt(gam)} (saturated); "
                          f"log family (0.05, 1, 0.5) {fmt(lf)}, {dt:.0f} s")


SMALL = {
    "green-table": ["domain.depth=3"],
    "sample-field": ["domain.N=32", "params.samples=2"],
    "cluster-law": ["params.r=8", "params.budget=100000"],
    "intensity-fit": ["domain.N=64", "params.samples=8", "params.r=4", "params.bootstrap=100"],
    "max-histogram": ["domain.N=32", "params.samples=200"],
    "liouville": ["domain.N=32", "params.samples=50"],
    "freezing": ["domain.N=32", "params.samples=100"],
    "curves-audit": ["params.paths=4000", "params.steps=128", "params.closed_paths=20000"],
    "concentric-audit": ["domain.depth=3", "params.samples=100"],
}


def test_11_determinism(report, tmp_path):
    t0 = time.time()
    differing = []
    for kind in KINDS:
        base = [kind, "--seed", "11"] + [a for s in SMALL[kind] for a in ("--set", s)]
        if kind not in ("green-table", "curves-audit"):
            base += ["--replicas", "2"]
        runs = []
        for i, threads in enumerate((1, 2)):
            out = tmp_path / f"{kind}-{i}"
            main(base + ["--out", str(out), "--threads", str(threads)])
            runs.append(RunManifest.read(out / "manifest.json").output_hashes())
        if runs[0] != runs[1] or not runs[0]:
            differing.append(kind)
    dt = time.time() - t0
    ok = not differing
    assert report(11, ok, f"{len(KINDS) - len(differing)}/{len(KINDS)} experiment kinds byte-identical across "
                          f"re-runs (1 vs 2 threads){'; differing: ' + ', '.join(differing) if differing else ''}, "
                          f"{dt:.0f} s")
