"""Command-line experiment runner.

    dgff KIND [--config PATH] [--seed U64] [--out DIR] [--replicas N] [--threads N] [--set section.key=value]
    dgff plot DIR [--style NAME]
    dgff replay MANIFEST [--out DIR]

Exit codes: 0 pass, 1 an embedded assertion failed, 2 usage or config error, 3 numerical failure.
Replica i of a run draws from child_seed(seed, kind, i); results are merged in replica order,
so the thread count never changes the output bytes.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .config import KINDS, ConfigError, ExperimentConfig, parse, serialize
from .lattice import DomainError, concentric_box, discretize
from .plotting import RESULT_SCHEMA, STYLES, SchemaError, plot
from .rng import child_seed, stream

EXIT_PASS, EXIT_ASSERT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _numeric_errors():
    from .curves import CurveError, GrowthClassError
    from .extremes import InsufficientData
    from .glassy import NonIntegrableDisplacement
    from .harmonic import ToleranceNotMet
    from .sampler import NumericalDegeneracy

    return (NumericalDegeneracy, ToleranceNotMet, GrowthClassError, CurveError, InsufficientData,
            NonIntegrableDisplacement, FloatingPointError, np.linalg.LinAlgError)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class RunManifest:
    config_hash: str
    version: str
    kind: str
    seed: int
    started: str
    finished: str
    replica_seeds: list
    files: list
    checks: list = field(default_factory=list)
    config: str = ""

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def output_hashes(self) -> dict:
        return {f["path"]: f["sha256"] for f in self.files}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _split(total: int, parts: int) -> list:
    base, extra = divmod(total, parts)
    return [base + (i < extra) for i in range(parts)]


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = cfg.out
        self.seeds = [child_seed(cfg.seed, cfg.kind, i) for i in range(cfg.replicas)]

    def path(self, name):
        return os.path.join(self.out, name)

    def map_replicas(self, fn, counts=None):
        """fn(replica index, seed, count) for every replica; results in replica order."""
        counts = counts or [None] * self.cfg.replicas
        jobs = list(zip(range(self.cfg.replicas), self.seeds, counts))
        if self.cfg.threads == 1 or len(jobs) == 1:
            return [fn(*j) for j in jobs]
        with ThreadPoolExecutor(max_workers=self.cfg.threads) as ex:
            return list(ex.map(lambda j: fn(*j), jobs))

    def domain(self):
        d = self.cfg.domain
        if d.get("depth"):
            return concentric_box(d["depth"]), 2 ** d["depth"]
        return discretize(self.cfg.spec, d["N"]), d["N"]

    # -------------------------------------------------------------- experiments

    def green_table(self):
        from .harmonic import green_matrix

        D, _ = self.domain()
        G = green_matrix(D)
        G.write_csv(self.path("green.csv"))
        res = G.residual()
        tol = self.cfg.tolerance["residual"]
        return {"points": len(D), "residual": res}, [Check("residual", res <= tol, f"{res:.3e} <= {tol:g}")]

    def sample_field(self):
        from .extremes import level_set, local_maxima
        from .sampler import FieldSample, build_plan

        D, N = self.domain()
        plan = build_plan(D)
        p = self.cfg.params

        def work(i, seed, count):
            return plan.sample(stream(seed), count) if count else np.zeros((0, len(D)))

        vals = np.concatenate(self.map_replicas(work, _split(p["samples"], self.cfg.replicas)))
        fs = FieldSample(D, vals, {"sampler": plan.method})
        fs.write_binary(self.path("fields.bin"))
        fs.write_csv(self.path("field.csv"), row=0)
        lm = local_maxima(fs, p["r"], N=N)
        lm.write_csv(self.path("local_maxima.csv"))
        pts = level_set(fs, p["level"], N)
        _write_rows(self.path("level_set.csv"), ["x", "y", "sx", "sy"],
                    [(int(x), int(y), x / N, y / N) for x, y in pts])
        return {"points": len(D), "samples": int(len(vals)), "sampler": plan.method, "N": N,
                "level": p["level"], "r": p["r"], "maxima": [float(v) for v in vals.max(axis=1)],
                "local_maxima": len(lm), "level_set_size": int(len(pts))}, []

    def cluster_law(self):
        from .extremes import sample_cluster_law, wilson_interval

        p = self.cfg.params

        def work(i, seed, count):
            return sample_cluster_law(p["r"], seed, count, keep=p["keep"]) if count else None

        parts = [e for e in self.map_replicas(work, _split(p["budget"], self.cfg.replicas)) if e is not None]
        accepted = sum(e.accepted for e in parts)
        trials = sum(e.trials for e in parts)
        shapes = [s for e in parts for s in e.shapes][: p["keep"]]
        h = parts[0].shapes.shape[-1] // 2
        xs = np.arange(-h, h + 1)
        rows = []
        for n, s in enumerate(shapes):
            for a, x in enumerate(xs):
                for b, y in enumerate(xs):
                    if np.isfinite(s[a, b]):
                        rows.append((n, int(x), int(y), float(s[a, b])))
        _write_rows(self.path("shapes.csv"), ["shape", "x", "y", "value"], rows)
        ci = wilson_interval(accepted, trials)
        vals = [r[3] for r in rows]
        centre = [r[3] for r in rows if r[1] == 0 and r[2] == 0]
        checks = [Check("shapes nonnegative", all(v >= 0 for v in vals), f"min {min(vals, default=0.0)!r}"),
                  Check("shape(0) = 0", all(v == 0 for v in centre), f"{len(centre)} shapes")]
        return {"r": p["r"], "window_exponent": parts[0].k, "accepted": accepted, "trials": trials,
                "p": accepted / trials, "ci": list(ci), "stored_shapes": len(shapes),
                "p_sqrt_log_r": accepted / trials * math.sqrt(math.log(p["r"])) if p["r"] > 1 else None}, checks

    def intensity_fit(self):
        from .extremes import ALPHA, intensity_exponent, local_max_heights

        p = self.cfg.params
        N = self.cfg.domain["N"]

        def work(i, seed, count):
            return local_max_heights(N, p["r"], count, seed, self.cfg.spec) if count else np.zeros(0)

        h = np.concatenate(self.map_replicas(work, _split(p["samples"], self.cfg.replicas)))
        _write_rows(self.path("heights.csv"), ["height"], [(float(v),) for v in h])
        fit = intensity_exponent(h, tuple(p["window"]), n_boot=p["bootstrap"],
                                 seed=child_seed(self.cfg.seed, "bootstrap"))
        rel = abs(fit.slope / ALPHA - 1)
        tol = self.cfg.tolerance["slope_rel"]
        out = {"N": N, "r": p["r"], "fields": p["samples"], "heights": int(len(h)),
               "fit": {"slope": fit.slope, "ci": list(fit.ci), "n": fit.n, "window": list(fit.window)},
               "target": ALPHA, "relative_error": rel}
        return out, [Check("slope near alpha", rel <= tol, f"slope {fit.slope:.4f}, rel err {rel:.3f} <= {tol}")]

    def max_histogram(self):
        from .extremes import histogram_of_maxima, max_samples

        p = self.cfg.params
        N = self.cfg.domain["N"]

        def work(i, seed, count):
            return max_samples(N, count, seed, self.cfg.spec) if count else (np.zeros((0, 2)), np.zeros(0))

        parts = self.map_replicas(work, _split(p["samples"], self.cfg.replicas))
        pos = np.concatenate([a for a, _ in parts])
        hts = np.concatenate([b for _, b in parts])
        hist = histogram_of_maxima(N, pos, hts, self.cfg.spec, p["bins"])
        hist.write_csv(self.path("max_histogram.csv"))
        _write_rows(self.path("maxima.csv"), ["sx", "sy", "height"],
                    [(float(a), float(b), float(c)) for (a, b), c in zip(pos, hts)])
        return {"N": N, "samples": int(len(hts)), "mean_height": float(hts.mean()),
                "sd_height": float(hts.std(ddof=1)) if len(hts) > 1 else None}, []

    def _log_partitions(self, betas, count_key="samples"):
        from .extremes import field_batches, m_N
        from .glassy import log_partition

        N = self.cfg.domain["N"]
        D = discretize(self.cfg.spec, N)

        def work(i, seed, count):
            out = [[] for _ in betas]
            if count:
                for _, batch in field_batches(D, seed, count, self.cfg.kind):
                    v = np.atleast_2d(batch.values)
                    for j, b in enumerate(betas):
                        out[j].append(log_partition(v, b))
            return [np.concatenate(o) if o else np.zeros(0) for o in out]

        parts = self.map_replicas(work, _split(self.cfg.params[count_key], self.cfg.replicas))
        return [np.concatenate([pt[j] for pt in parts]) for j in range(len(betas))], m_N(N)

    def liouville(self):
        from scipy import stats

        from .glassy import BETA_C

        ratios = self.cfg.params["beta"]
        logz, mN = self._log_partitions([r * BETA_C for r in ratios])
        rows, summary = [], []
        for r, lz in zip(ratios, logz):
            lt = lz - r * BETA_C * mN
            rows.extend((float(r), n, float(v)) for n, v in enumerate(lt))
            summary.append({"beta_ratio": r, "mean_log_total": float(lt.mean()),
                            "sd_log_total": float(lt.std(ddof=1)) if len(lt) > 1 else None,
                            "kurtosis_total": float(stats.kurtosis(np.exp(lt - lt.max()), fisher=False))
                            if len(lt) > 3 else None})
        _write_rows(self.path("liouville.csv"), ["beta_ratio", "field", "log_total"], rows)
        return {"N": self.cfg.domain["N"], "betas": summary}, []

    def freezing(self):
        from .glassy import BETA_C, FreezingCurve, compare_freezing

        p = self.cfg.params
        N = self.cfg.domain["N"]
        betas = [r * BETA_C for r in p["beta"]]
        logz, mN = self._log_partitions(betas)
        c1, c2 = (FreezingCurve(b, N, lz) for b, lz in zip(betas, logz))
        win = (mN + p["window"][0], mN + p["window"][1])
        cmp = compare_freezing(c1, c2, win, points=p["points"])
        grid = cmp.grid
        g1, se1 = c1(grid), c1.stderr(grid)
        g2 = c2(grid + cmp.shift)
        _write_rows(self.path("freezing.csv"), ["t", "G1", "G1_stderr", "G2_shifted"],
                    [(float(t - mN), float(a), float(s), float(b)) for t, a, s, b in zip(grid, g1, se1, g2)])
        tol = self.cfg.tolerance["sup"]
        return ({"N": N, "beta_ratio": list(p["beta"]), "samples": p["samples"], "shift": cmp.shift,
                 "sup_distance": cmp.sup_distance, "window": list(p["window"]), "m_N": mN},
                [Check("freezing sup distance", cmp.sup_distance <= tol, f"{cmp.sup_distance:.4f} <= {tol}")])

    def curves_audit(self):
        from .curves import CLOSED_FORM_GRID, audit_bounds, closed_form_audit, default_audit_grid, write_audit_csv

        p = self.cfg.params
        k = self.cfg.tolerance["sigmas"]
        seed = self.cfg.seed
        jobs = [("closed", i, pt) for i, pt in enumerate(CLOSED_FORM_GRID)]
        jobs += [("bounds", i, pt) for i, pt in enumerate(default_audit_grid())]

        def work(job):
            what, i, pt = job
            rng = stream(seed, "curves-audit", what, i)
            if what == "closed":
                return closed_form_audit([pt], p["closed_steps"], p["closed_paths"], rng, k)
            return audit_bounds([pt], p["steps"], p["paths"], rng, k)

        if self.cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as ex:
                parts = list(ex.map(work, jobs))
        else:
            parts = [work(j) for j in jobs]
        rows = [r for part in parts for r in part]
        write_audit_csv(rows, self.path("audit.csv"))
        counts = {v: sum(r.verdict == v for r in rows) for v in ("ok", "violated", "vacuous")}
        return counts, [Check("no violated verdicts", counts["violated"] == 0, f"{counts}")]

    def concentric_audit(self):
        from .concentric import composed_covariance, control_variables, decomposition_stats, sample_concentric
        from .harmonic import green_matrix
        from .lattice import box_half_width

        n = self.cfg.domain["depth"]
        tol = self.cfg.tolerance
        st = decomposition_stats(n)
        g_log2 = 2 / math.pi * math.log(2)
        _write_rows(self.path("sigma2.csv"), ["k", "sigma2", "gap"],
                    [(k, float(s), float(abs(s - g_log2))) for k, s in enumerate(st.sigma2)])
        checks = []
        cov_err = None
        if n <= 4:
            cov_err = float(np.abs(composed_covariance(n) - green_matrix(concentric_box(n)).values).max())
            checks.append(Check("composed covariance", cov_err <= tol["covariance"],
                                f"{cov_err:.3e} <= {tol['covariance']:g}"))

        def work(i, seed, count):
            if not count:
                return None
            smp = sample_concentric(n, seed, size=count)
            err = 0.0
            for k in range(1, n + 2):
                c = box_half_width(k - 1)
                err = max(err, float(np.abs(smp.walk[:, k] - smp.partial_field(k - 1)[:, c, c]).max()))
            ctrl = [control_variables(smp, j) for j in range(count)]
            return smp.walk, err, [(c.K, c.Ktilde) for c in ctrl]

        parts = [x for x in self.map_replicas(work, _split(self.cfg.params["samples"], self.cfg.replicas)) if x]
        walk = np.concatenate([w for w, _, _ in parts])
        err = max(e for _, e, _ in parts)
        ctrl = [c for _, _, cs in parts for c in cs]
        _write_rows(self.path("walk.csv"), ["sample", "k", "S"],
                    [(i, k, float(walk[i, k])) for i in range(len(walk)) for k in range(walk.shape[1])])
        _write_rows(self.path("controls.csv"), ["sample", "K", "Ktilde"],
                    [(i, K, float(Kt)) for i, (K, Kt) in enumerate(ctrl)])
        checks.append(Check("walk identity", err <= tol["walk"], f"{err:.3e} <= {tol['walk']:g}"))
        return {"depth": n, "sigma2": [float(s) for s in st.sigma2], "covariance_error": cov_err,
                "walk_error": err, "samples": int(len(walk))}, checks

    # -------------------------------------------------------------- driver

    def run(self, style: str = "default") -> RunManifest:
        os.makedirs(self.out, exist_ok=True)
        started = _now()
        fn = getattr(self, self.cfg.kind.replace("-", "_"))
        payload, checks = fn()
        result = {"schema": RESULT_SCHEMA, "kind": self.cfg.kind, "seed": self.cfg.seed,
                  "replicas": self.cfg.replicas, "config_hash": self.cfg.digest(),
                  "checks": [asdict(c) for c in checks]}
        result.update(payload)
        _write_json(self.path("result.json"), result)
        with open(self.path("config.ini"), "w") as fh:
            fh.write(serialize(self.cfg, portable=True))
        plot(self.out, style)
        files = []
        for name in sorted(os.listdir(self.out)):
            full = self.path(name)
            if name != "manifest.json" and os.path.isfile(full):
                files.append({"path": name, "sha256": _sha256(full), "bytes": os.path.getsize(full)})
        man = RunManifest(self.cfg.digest(), __version__, self.cfg.kind, self.cfg.seed, started, _now(),
                          [str(s) for s in self.seeds], files, [asdict(c) for c in checks], serialize(self.cfg))
        man.write(self.path("manifest.json"))
        return man


def run(cfg: ExperimentConfig, style: str = "default") -> RunManifest:
    return Runner(cfg).run(style)


# ---------------------------------------------------------------- argument handling


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgff", description="Discrete Gaussian free field experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--replicas", type=int, metavar="N")
        p.add_argument("--threads", type=int, metavar="N")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config entry")
        p.add_argument("--style", default="default", choices=STYLES)
    p = sub.add_parser("plot", help="render SVG figures from a result directory")
    p.add_argument("directory")
    p.add_argument("--style", default="default", choices=STYLES)
    p = sub.add_parser("replay", help="re-run the configuration recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--threads", type=int, metavar="N")
    return ap


def _load(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError([(item, "expected section.key=value")])
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError([("--config", str(e))]) from None
        cfg = parse(text, overrides, kind=args.command)
        if cfg.kind != args.command:
            raise ConfigError([("run.kind", f"config is for {cfg.kind}, subcommand is {args.command}")])
    else:
        cfg = parse("", overrides, kind=args.command)
    return cfg.with_overrides(seed=args.seed, out=args.out, replicas=args.replicas, threads=args.threads)


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS
    try:
        if args.command == "plot":
            for p in plot(args.directory, args.style):
                print(p)
            return EXIT_PASS
        if args.command == "replay":
            man = RunManifest.read(args.manifest)
            cfg = parse(man.config).with_overrides(out=args.out, threads=args.threads)
            style = "default"
        else:
            cfg = _load(args)
            style = args.style
        man = run(cfg, style)
    except (ConfigError, DomainError) as e:
        problems = getattr(e, "problems", [("domain", str(e))])
        for k, m in problems:
            print(f"dgff: config error: {k}: {m}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as e:
        print(f"dgff: schema error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _numeric_errors() as e:
        print(f"dgff: numerical failure in {type(e).__module__}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    for c in man.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    print(f"wrote {len(man.files) + 1} files to {cfg.out}")
    return EXIT_PASS if man.passed else EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
