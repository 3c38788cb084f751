import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dgff.cli import RunManifest, main
from dgff.config import ConfigError, KINDS, default_config, parse, serialize
from dgff.harmonic import green_matrix
from dgff.lattice import concentric_box
from dgff.plotting import SchemaError, histogram_svg, plot, read_result

SMALL = {
    "green-table": ["domain.depth=2"],
    "sample-field": ["domain.N=16", "params.samples=2", "params.r=2"],
    "cluster-law": ["params.r=4", "params.budget=2000", "params.keep=5"],
    "intensity-fit": ["domain.N=32", "params.samples=4", "params.r=2", "params.bootstrap=50"],
    "max-histogram": ["domain.N=16", "params.samples=40", "params.bins=4"],
    "liouville": ["domain.N=16", "params.samples=8"],
    "freezing": ["domain.N=16", "params.samples=16", "params.points=41"],
    "curves-audit": ["params.paths=1000", "params.steps=64", "params.closed_paths=2000", "params.closed_steps=64"],
    "concentric-audit": ["domain.depth=2", "params.samples=20"],
}
SINGLE = ("green-table", "curves-audit")


def run_cli(kind, out, *extra):
    args = [kind, "--out", str(out), "--seed", "7"]
    for s in SMALL[kind]:
        args += ["--set", s]
    return main(args + list(extra))


def hashes(out):
    return RunManifest.read(out / "manifest.json").output_hashes()


@pytest.mark.parametrize("kind", KINDS)
def test_default_config_round_trip(kind):
    cfg = default_config(kind)
    text = serialize(cfg)
    again = parse(text)
    assert again == cfg
    assert serialize(again) == text
    assert again.digest() == cfg.digest()


def test_overrides_and_unknown_keys():
    cfg = parse("[run]\nkind = cluster-law\nseed = 3\n[params]\nr = 16\n")
    assert cfg.seed == 3 and cfg.params["r"] == 16.0
    with pytest.raises(ConfigError) as e:
        parse("[run]\nkind = cluster-law\n[params]\nradius = 4\n")
    assert e.value.problems[0][0] == "params.radius"
    with pytest.raises(ConfigError):
        parse("[run]\nkind = nope\n")
    with pytest.raises(ConfigError):
        parse("[run]\nkind = sample-field\nseed = -1\n")
    with pytest.raises(ConfigError):
        parse("[run]\nkind = green-table\nreplicas = 2\n")


def test_portable_digest_ignores_out_and_threads():
    a = default_config("freezing").with_overrides(out="x", threads=1)
    b = default_config("freezing").with_overrides(out="y", threads=4)
    assert a.digest() == b.digest()
    assert serialize(a, portable=True) == serialize(b, portable=True)


def test_unknown_key_exit_code(tmp_path, capsys):
    assert main(["cluster-law", "--out", str(tmp_path), "--set", "params.radius=3"]) == 2
    assert "params.radius" in capsys.readouterr().err
    assert main(["cluster-law", "--set", "noequals"]) == 2
    assert main(["no-such-command"]) == 2


def test_bad_domain_exit_code(tmp_path):
    assert main(["sample-field", "--out", str(tmp_path), "--set", "domain.spec=0,1,0"]) == 2


def test_green_table_bit_exact(tmp_path):
    out = tmp_path / "g"
    assert main(["green-table", "--out", str(out), "--set", "domain.depth=3"]) == 0
    green_matrix(concentric_box(3)).write_csv(tmp_path / "ref.csv")
    assert (out / "green.csv").read_bytes() == (tmp_path / "ref.csv").read_bytes()


def test_cluster_law_repeatable(tmp_path):
    args = ["--set", "params.r=8", "--set", "params.budget=100000", "--seed", "7"]
    assert main(["cluster-law", "--out", str(tmp_path / "a")] + args) == 0
    assert main(["cluster-law", "--out", str(tmp_path / "b")] + args) == 0
    assert hashes(tmp_path / "a") == hashes(tmp_path / "b")


def test_curves_audit_clean(tmp_path):
    out = tmp_path / "c"
    assert run_cli("curves-audit", out) == 0
    rows = (out / "audit.csv").read_text().splitlines()[1:]
    assert rows and not any(r.endswith(",violated") for r in rows)


@pytest.mark.parametrize("kind", KINDS)
def test_outputs_independent_of_threads(kind, tmp_path):
    extra = [] if kind in SINGLE else ["--replicas", "3"]
    a = run_cli(kind, tmp_path / "a", "--threads", "1", *extra)
    b = run_cli(kind, tmp_path / "b", "--threads", "3", *extra)
    assert a == b and a in (0, 1)
    ha, hb = hashes(tmp_path / "a"), hashes(tmp_path / "b")
    assert ha == hb
    assert "result.json" in ha and "config.ini" in ha
    res = read_result(tmp_path / "a")
    assert res["kind"] == kind
    for name in ha:
        if name.endswith(".svg"):
            text = (tmp_path / "a" / name).read_text()
            ET.fromstring(text)
            assert "<dc:date>" not in text


def test_replay_reproduces(tmp_path):
    assert run_cli("max-histogram", tmp_path / "a") == 0
    assert main(["replay", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    assert hashes(tmp_path / "a") == hashes(tmp_path / "b")


def test_style_changes_figures_only(tmp_path):
    run_cli("freezing", tmp_path / "a")
    run_cli("freezing", tmp_path / "b", "--style", "grayscale")
    ha, hb = hashes(tmp_path / "a"), hashes(tmp_path / "b")
    assert ha["freezing.csv"] == hb["freezing.csv"]
    assert ha["freezing.svg"] != hb["freezing.svg"]


def test_plot_subcommand(tmp_path, capsys):
    run_cli("concentric-audit", tmp_path / "a")
    assert main(["plot", str(tmp_path / "a")]) == 0
    assert "sigma2.svg" in capsys.readouterr().out


def test_empty_histogram_svg(tmp_path):
    p = tmp_path / "h.svg"
    histogram_svg(np.zeros(0), p, "empty")
    root = ET.fromstring(p.read_text())
    assert root.tag.endswith("svg")


def test_schema_errors(tmp_path, capsys):
    with pytest.raises(SchemaError):
        read_result(tmp_path)
    (tmp_path / "result.json").write_text(json.dumps({"schema": "other/9", "kind": "freezing"}))
    with pytest.raises(SchemaError):
        plot(tmp_path)
    assert main(["plot", str(tmp_path)]) == 2
    good = tmp_path / "g"
    run_cli("liouville", good)
    (good / "liouville.csv").write_text("beta_ratio\n1.5\n")
    with pytest.raises(SchemaError):
        plot(good)


def test_failed_check_exit_code(tmp_path):
    # an impossible tolerance turns the residual check into a failure
    assert main(["green-table", "--out", str(tmp_path), "--set", "domain.depth=2",
                 "--set", "tolerance.residual=1e-300"]) == 1
    man = RunManifest.read(tmp_path / "manifest.json")
    assert not man.passed
