"""Static SVG figures rendered from result files.

Output is byte-stable: the Agg backend, a fixed svg.hashsalt for element ids and
no Date metadata.
"""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RESULT_SCHEMA = "dgff-result/1"
STYLES = ("default", "grayscale", "classic")


class SchemaError(ValueError):
    """A result file does not have the expected layout."""


def read_table(path, columns) -> dict:
    """Read a CSV with a header containing `columns`; returns column -> list of strings."""
    if not os.path.exists(path):
        raise SchemaError(f"missing result file {os.path.basename(path)}")
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or any(c not in header for c in columns):
            raise SchemaError(f"{os.path.basename(path)}: expected columns {list(columns)}, got {header}")
        rows = list(r)
    idx = {c: header.index(c) for c in header}
    return {c: [row[idx[c]] for row in rows] for c in header}


def _num(col) -> np.ndarray:
    return np.array([float(v) for v in col], dtype=float)


def read_result(directory) -> dict:
    path = os.path.join(directory, "result.json")
    if not os.path.exists(path):
        raise SchemaError("no result.json in the result directory")
    with open(path) as fh:
        try:
            res = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"result.json does not parse: {e}") from None
    if res.get("schema") != RESULT_SCHEMA or "kind" not in res:
        raise SchemaError(f"result.json schema {res.get('schema')!r}, expected {RESULT_SCHEMA!r}")
    return res


def save_svg(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": "dgff", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _figure(style, **kw):
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
    with plt.style.context(style):
        fig, ax = plt.subplots(**kw)
    return fig, ax


# ---------------------------------------------------------------- generic panels


def histogram_svg(values, path, xlabel="", ylabel="count", bins=30, style="default", log=False):
    """Histogram of `values`; with no data the axes are drawn empty."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    fig, ax = _figure(style, figsize=(5, 3.5))
    if len(v):
        ax.hist(v, bins=bins, log=log, color="0.4")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    save_svg(fig, path)
    return path


def heatmap_svg(arr, path, extent=None, title="", cmap="viridis", style="default", points=None):
    fig, ax = _figure(style, figsize=(4.5, 4))
    arr = np.asarray(arr, dtype=float)
    if arr.size:
        im = ax.imshow(arr.T, origin="lower", extent=extent, cmap=cmap, interpolation="nearest")
        fig.colorbar(im, ax=ax, shrink=0.8)
    if points is not None and len(points):
        ax.scatter(points[:, 0], points[:, 1], s=8, c="red", marker="x")
    ax.set_title(title)
    fig.tight_layout()
    save_svg(fig, path)
    return path


# ---------------------------------------------------------------- per-kind figures


def _grid_from_xyv(tab):
    x = _num(tab["x"]).astype(int)
    y = _num(tab["y"]).astype(int)
    v = _num(tab["value"])
    if not len(x):
        return np.zeros((0, 0)), None
    arr = np.full((x.max() - x.min() + 1, y.max() - y.min() + 1), np.nan)
    arr[x - x.min(), y - y.min()] = v
    ext = (x.min() - 0.5, x.max() + 0.5, y.min() - 0.5, y.max() + 0.5)
    return arr, ext


def _plot_green(d, res, style):
    tab = read_table(os.path.join(d, "green.csv"), ("x1", "y1", "x2", "y2", "value"))
    pts = sorted({(int(a), int(b)) for a, b in zip(tab["x1"], tab["y1"])})
    n = len(pts)
    mat = _num(tab["value"]).reshape(n, n) if n else np.zeros((0, 0))
    return [heatmap_svg(mat.T, os.path.join(d, "green.svg"), title="Green matrix", style=style)]


def _plot_field(d, res, style):
    arr, ext = _grid_from_xyv(read_table(os.path.join(d, "field.csv"), ("x", "y", "value")))
    out = []
    lm = read_table(os.path.join(d, "local_maxima.csv"), ("x", "y", "height"))
    pts = np.column_stack([_num(lm["x"]), _num(lm["y"])]) if lm["x"] else None
    out.append(heatmap_svg(arr, os.path.join(d, "field.svg"), ext, "field and r-local maxima", style=style,
                           points=pts))
    ls = read_table(os.path.join(d, "level_set.csv"), ("sx", "sy"))
    fig, ax = _figure(style, figsize=(4.5, 4))
    if ls["sx"]:
        ax.scatter(_num(ls["sx"]), _num(ls["sy"]), s=4, c="k")
    ax.set_aspect("equal")
    ax.set_title(f"points with h >= m_N - {res.get('level', '')}")
    fig.tight_layout()
    out.append(os.path.join(d, "level_set.svg"))
    save_svg(fig, out[-1])
    return out


def _plot_cluster(d, res, style):
    tab = read_table(os.path.join(d, "shapes.csv"), ("shape", "x", "y", "value"))
    out = []
    if tab["shape"]:
        s = _num(tab["shape"]).astype(int)
        sel = {k: [c[i] for i in range(len(s)) if s[i] == 0] for k, c in tab.items()}
        arr, ext = _grid_from_xyv(sel)
    else:
        arr, ext = np.zeros((0, 0)), None
    out.append(heatmap_svg(arr, os.path.join(d, "cluster_shape.svg"), ext, "accepted shape", style=style))
    return out


def _plot_intensity(d, res, style):
    tab = read_table(os.path.join(d, "heights.csv"), ("height",))
    h = _num(tab["height"])
    path = os.path.join(d, "heights.svg")
    fig, ax = _figure(style, figsize=(5, 3.5))
    if len(h):
        edges = np.arange(np.floor(h.min()), np.ceil(h.max()) + 0.5, 0.5)
        c, _ = np.histogram(h, bins=edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        ok = c > 0
        ax.semilogy(mid[ok], c[ok], "o", ms=3, color="0.3")
        fit = res.get("fit") or {}
        if fit.get("slope") is not None:
            lo, hi = fit["window"]
            xs = np.linspace(lo, hi, 20)
            sel = (mid >= lo) & (mid <= hi) & ok
            if sel.any():
                ref = np.log(c[sel]).mean() + fit["slope"] * (mid[sel].mean())
                ax.semilogy(xs, np.exp(ref - fit["slope"] * xs), "-", label=f"slope {fit['slope']:.3f}")
                ax.legend()
    ax.set_xlabel("height - m_N")
    ax.set_ylabel("count")
    fig.tight_layout()
    save_svg(fig, path)
    return [path]


def _plot_max_histogram(d, res, style):
    tab = read_table(os.path.join(d, "max_histogram.csv"), ("x_lo", "x_hi", "y_lo", "y_hi", "h_lo", "h_hi", "mass"))
    out = []
    if tab["mass"]:
        xe = np.unique(np.concatenate([_num(tab["x_lo"]), _num(tab["x_hi"])]))
        ye = np.unique(np.concatenate([_num(tab["y_lo"]), _num(tab["y_hi"])]))
        he = np.unique(np.concatenate([_num(tab["h_lo"]), _num(tab["h_hi"])]))
        dens = _num(tab["mass"]).reshape(len(xe) - 1, len(ye) - 1, len(he) - 1)
        pos, hm = dens.sum(axis=2), dens.sum(axis=(0, 1))
        ext = (xe[0], xe[-1], ye[0], ye[-1])
    else:
        pos, hm, he, ext = np.zeros((0, 0)), np.zeros(0), np.zeros(1), None
    out.append(heatmap_svg(pos, os.path.join(d, "max_position.svg"), ext, "position of the maximum",
                           cmap="magma", style=style))
    fig, ax = _figure(style, figsize=(5, 3.5))
    if len(hm):
        ax.stairs(hm, he, color="0.3")
    ax.set_xlabel("max - m_N")
    ax.set_ylabel("mass")
    fig.tight_layout()
    out.append(os.path.join(d, "max_height.svg"))
    save_svg(fig, out[-1])
    return out


def _plot_liouville(d, res, style):
    tab = read_table(os.path.join(d, "liouville.csv"), ("beta_ratio", "field", "log_total"))
    b = _num(tab["beta_ratio"])
    v = _num(tab["log_total"])
    out = []
    for br in sorted(set(b.tolist())):
        p = os.path.join(d, f"liouville_{br!r}.svg")
        out.append(histogram_svg(v[b == br], p, xlabel="log total mass", style=style))
    if not out:
        out.append(histogram_svg([], os.path.join(d, "liouville.svg"), xlabel="log total mass", style=style))
    return out


def _plot_freezing(d, res, style):
    tab = read_table(os.path.join(d, "freezing.csv"), ("t", "G1", "G2_shifted"))
    t = _num(tab["t"])
    fig, ax = _figure(style, figsize=(5, 3.5))
    if len(t):
        ax.plot(t, _num(tab["G1"]), label="first beta")
        ax.plot(t, _num(tab["G2_shifted"]), "--", label="second beta, shifted")
        ax.legend()
    ax.set_xlabel("t - m_N")
    ax.set_ylabel("G(t)")
    fig.tight_layout()
    path = os.path.join(d, "freezing.svg")
    save_svg(fig, path)
    return [path]


def _plot_audit(d, res, style):
    tab = read_table(os.path.join(d, "audit.csv"), ("kind", "bound", "mc", "stderr", "verdict"))
    fig, ax = _figure(style, figsize=(4.5, 4))
    if tab["kind"]:
        b, m, se = _num(tab["bound"]), _num(tab["mc"]), _num(tab["stderr"])
        shown = np.clip(b, 0, 1)
        ax.errorbar(m, shown, xerr=3 * se, fmt="o", ms=3, color="0.2")
        ax.plot([0, 1], [0, 1], ":", color="0.5")
    ax.set_xlabel("Monte Carlo")
    ax.set_ylabel("bound or exact value (clipped to [0, 1])")
    fig.tight_layout()
    path = os.path.join(d, "audit.svg")
    save_svg(fig, path)
    return [path]


def _plot_concentric(d, res, style):
    tab = read_table(os.path.join(d, "sigma2.csv"), ("k", "sigma2"))
    walk = read_table(os.path.join(d, "walk.csv"), ("sample", "k", "S"))
    out = []
    fig, ax = _figure(style, figsize=(5, 3.5))
    if tab["k"]:
        ax.plot(_num(tab["k"]), _num(tab["sigma2"]), "o-", ms=3)
        ax.axhline(2 / np.pi * np.log(2), ls=":", color="0.5")
    ax.set_xlabel("k")
    ax.set_ylabel("sigma_k^2")
    fig.tight_layout()
    out.append(os.path.join(d, "sigma2.svg"))
    save_svg(fig, out[-1])
    fig, ax = _figure(style, figsize=(5, 3.5))
    if walk["sample"]:
        s = _num(walk["sample"]).astype(int)
        k, S = _num(walk["k"]), _num(walk["S"])
        for i in range(min(20, s.max() + 1)):
            ax.plot(k[s == i], S[s == i], lw=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel("S_k")
    fig.tight_layout()
    out.append(os.path.join(d, "walk.svg"))
    save_svg(fig, out[-1])
    return out


PLOTTERS = {
    "green-table": _plot_green,
    "sample-field": _plot_field,
    "cluster-law": _plot_cluster,
    "intensity-fit": _plot_intensity,
    "max-histogram": _plot_max_histogram,
    "liouville": _plot_liouville,
    "freezing": _plot_freezing,
    "curves-audit": _plot_audit,
    "concentric-audit": _plot_concentric,
}


def plot(directory, style: str = "default") -> list:
    """Render every figure for the result stored in `directory`; returns the SVG paths."""
    res = read_result(directory)
    fn = PLOTTERS.get(res["kind"])
    if fn is None:
        raise SchemaError(f"no figures for result kind {res['kind']!r}")
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; expected one of {STYLES}")
    return fn(directory, res, style)
