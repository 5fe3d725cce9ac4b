"""Static SVG figures rendered from run-directory CSV files alone.

Nothing here touches the simulation: every figure is a pure function of the
CSV it is drawn from, so ``selectlab plot RUN_DIR`` regenerates it exactly.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .artifacts import parse_vec, read_csv

# 64-step gradient interpolated between five anchor colors (dark blue to yellow)
_ANCHORS = np.array(
    [[0x44, 0x01, 0x54], [0x3B, 0x52, 0x8B], [0x21, 0x91, 0x8C], [0x5E, 0xC9, 0x62], [0xFD, 0xE7, 0x25]],
    dtype=float,
)
N_LEVELS = 64


def _gradient(n: int) -> list:
    out = []
    for i in range(n):
        t = 4.0 * i / (n - 1)
        a = min(int(t), 3)
        rgb = _ANCHORS[a] + (t - a) * (_ANCHORS[a + 1] - _ANCHORS[a])
        out.append("#%02x%02x%02x" % tuple(int(round(v)) for v in rgb))
    return out


GRADIENT = _gradient(N_LEVELS)

COLORS = {"rml": "#1f77b4", "thompson": "#d62728", "truth": "#222222", "band": "#1f77b4"}
MARKERS = {
    "prior_mean": ("triangle", "#ffffff"),
    "theta_true": ("square", "#ff4040"),
    "posterior_mean": ("circle", "#ff9f1c"),
    "mle": ("diamond", "#ff9f1c"),
}


def _n(v: float) -> str:
    s = "%.2f" % v
    return "0.00" if s == "-0.00" else s


def level(values, vmin: float, vmax: float) -> np.ndarray:
    """Index into :data:`GRADIENT` for a linear map of [vmin, vmax]."""
    v = np.asarray(values, dtype=float)
    if not vmax > vmin:
        return np.zeros(v.shape, dtype=int)
    return np.clip(np.floor((v - vmin) / (vmax - vmin) * N_LEVELS), 0, N_LEVELS - 1).astype(int)


def nice_ticks(lo: float, hi: float, target: int = 5) -> list:
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9)
    ticks = []
    t = first
    while t * step <= hi + 1e-9 * step:
        ticks.append(round(t * step, 10))
        t += 1
    return ticks


def _tick_label(v: float) -> str:
    return "%.4g" % v if v != 0 else "0"


class Panel:
    def __init__(self, x0, y0, w, h, xlim, ylim, title="", xlabel="", ylabel=""):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim = (float(xlim[0]), float(xlim[1]))
        self.ylim = (float(ylim[0]), float(ylim[1]))
        if not self.xlim[1] > self.xlim[0]:
            self.xlim = (self.xlim[0] - 0.5, self.xlim[0] + 0.5)
        if not self.ylim[1] > self.ylim[0]:
            self.ylim = (self.ylim[0] - 0.5, self.ylim[0] + 0.5)
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.body = []
        self.overlay = []
        self._cid = 0

    def sx(self, x):
        return self.x0 + (np.asarray(x, float) - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w

    def sy(self, y):
        return self.y0 + self.h - (np.asarray(y, float) - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h

    def _points(self, xs, ys):
        return " ".join(f"{_n(a)},{_n(b)}" for a, b in zip(self.sx(xs), self.sy(ys)))

    def line(self, xs, ys, color, width=1.5, dash=None):
        ok = np.isfinite(np.asarray(ys, float))
        xs, ys = np.asarray(xs, float)[ok], np.asarray(ys, float)[ok]
        if xs.size == 0:
            return
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.body.append(
            f'<polyline points="{self._points(xs, ys)}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>'
        )

    def band(self, xs, lo, hi, color, opacity=0.25):
        xs, lo, hi = (np.asarray(v, float) for v in (xs, lo, hi))
        ok = np.isfinite(lo) & np.isfinite(hi)
        if not ok.any():
            return
        xs, lo, hi = xs[ok], lo[ok], hi[ok]
        pts = self._points(np.concatenate([xs, xs[::-1]]), np.concatenate([hi, lo[::-1]]))
        self.body.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>')

    def bars(self, lefts, rights, heights, color):
        for a, b, hgt in zip(lefts, rights, heights):
            x, x2 = self.sx(a), self.sx(b)
            y, y0 = self.sy(hgt), self.sy(self.ylim[0])
            self.body.append(
                f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(x2 - x)}" height="{_n(y0 - y)}" '
                f'fill="{color}" stroke="#ffffff" stroke-width="0.3"/>'
            )

    def heat(self, ax1, ax2, values, vmin, vmax):
        """Cells centered on grid nodes; equal-color runs along a row share one rect."""
        lv = level(values, vmin, vmax)
        e1 = _edges(ax1)
        e2 = _edges(ax2)
        px = self.sx(e1)
        py = self.sy(e2)
        for j in range(len(ax2)):
            i = 0
            while i < len(ax1):
                c = lv[i, j]
                i2 = i
                while i2 + 1 < len(ax1) and lv[i2 + 1, j] == c:
                    i2 += 1
                self.body.append(
                    f'<rect x="{_n(px[i])}" y="{_n(py[j + 1])}" width="{_n(px[i2 + 1] - px[i])}" '
                    f'height="{_n(py[j] - py[j + 1])}" fill="{GRADIENT[c]}" shape-rendering="crispEdges"/>'
                )
                i = i2 + 1

    def marker(self, x, y, shape, color, size=6.0):
        cx, cy = float(self.sx(x)), float(self.sy(y))
        style = f'fill="{color}" stroke="#000000" stroke-width="1"'
        if shape == "square":
            el = f'<rect x="{_n(cx - size)}" y="{_n(cy - size)}" width="{_n(2 * size)}" height="{_n(2 * size)}" {style}/>'
        elif shape == "triangle":
            pts = f"{_n(cx)},{_n(cy - size * 1.2)} {_n(cx - size)},{_n(cy + size * 0.8)} {_n(cx + size)},{_n(cy + size * 0.8)}"
            el = f'<polygon points="{pts}" {style}/>'
        elif shape == "diamond":
            pts = f"{_n(cx)},{_n(cy - size)} {_n(cx + size)},{_n(cy)} {_n(cx)},{_n(cy + size)} {_n(cx - size)},{_n(cy)}"
            el = f'<polygon points="{pts}" {style}/>'
        else:
            el = f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="{_n(size)}" {style}/>'
        self.overlay.append(el)

    def vline(self, x, color, dash="4,3"):
        xx = float(self.sx(x))
        self.overlay.append(
            f'<line x1="{_n(xx)}" y1="{_n(self.y0)}" x2="{_n(xx)}" y2="{_n(self.y0 + self.h)}" '
            f'stroke="{color}" stroke-width="1.2" stroke-dasharray="{dash}"/>'
        )

    def text(self, x, y, s, anchor="start", size=11):
        self.overlay.append(
            f'<text x="{_n(x)}" y="{_n(y)}" font-size="{size}" text-anchor="{anchor}">{escape(s)}</text>'
        )

    def render(self) -> str:
        out = [f'<g clip-path="url(#clip{self._cid})">'] + self.body + ["</g>"]
        out.append(
            f'<rect x="{_n(self.x0)}" y="{_n(self.y0)}" width="{_n(self.w)}" height="{_n(self.h)}" '
            'fill="none" stroke="#000000" stroke-width="1"/>'
        )
        for t in nice_ticks(*self.xlim):
            x = float(self.sx(t))
            yb = self.y0 + self.h
            out.append(f'<line x1="{_n(x)}" y1="{_n(yb)}" x2="{_n(x)}" y2="{_n(yb + 4)}" stroke="#000000"/>')
            out.append(f'<text x="{_n(x)}" y="{_n(yb + 16)}" font-size="10" text-anchor="middle">{_tick_label(t)}</text>')
        for t in nice_ticks(*self.ylim):
            y = float(self.sy(t))
            out.append(f'<line x1="{_n(self.x0 - 4)}" y1="{_n(y)}" x2="{_n(self.x0)}" y2="{_n(y)}" stroke="#000000"/>')
            out.append(f'<text x="{_n(self.x0 - 6)}" y="{_n(y + 3)}" font-size="10" text-anchor="end">{_tick_label(t)}</text>')
        if self.title:
            out.append(
                f'<text x="{_n(self.x0 + self.w / 2)}" y="{_n(self.y0 - 8)}" font-size="12" '
                f'text-anchor="middle">{escape(self.title)}</text>'
            )
        if self.xlabel:
            out.append(
                f'<text x="{_n(self.x0 + self.w / 2)}" y="{_n(self.y0 + self.h + 32)}" font-size="11" '
                f'text-anchor="middle">{escape(self.xlabel)}</text>'
            )
        if self.ylabel:
            cx, cy = self.x0 - 42, self.y0 + self.h / 2
            out.append(
                f'<text x="{_n(cx)}" y="{_n(cy)}" font-size="11" text-anchor="middle" '
                f'transform="rotate(-90 {_n(cx)} {_n(cy)})">{escape(self.ylabel)}</text>'
            )
        return "\n".join(out + self.overlay)


def _edges(ax):
    ax = np.asarray(ax, float)
    mid = 0.5 * (ax[1:] + ax[:-1])
    return np.concatenate([[ax[0] - (mid[0] - ax[0])], mid, [ax[-1] + (ax[-1] - mid[-1])]])


def figure(width, height, panels, extra=()) -> str:
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        "<defs>",
    ]
    for i, p in enumerate(panels):
        p._cid = i
        parts.append(
            f'<clipPath id="clip{i}"><rect x="{_n(p.x0)}" y="{_n(p.y0)}" width="{_n(p.w)}" height="{_n(p.h)}"/></clipPath>'
        )
    parts.append("</defs>")
    parts.extend(p.render() for p in panels)
    parts.extend(extra)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _limits(*arrays, pad=0.05):
    v = np.concatenate([np.asarray(a, float).ravel() for a in arrays])
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    return lo - pad * span, hi + pad * span


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def trajectories_svg(aggregate_csv) -> str:
    """Posterior-mean trajectories with +-2 sd bands, one panel per coordinate."""
    _, c = read_csv(aggregate_csv)
    k = sum(1 for name in c if name.startswith("mean_"))
    steps = c["step"]
    panels = []
    for j in range(1, k + 1):
        m, sd, tr = c[f"mean_{j}"], c[f"sd_{j}"], c[f"truth_{j}"]
        lo, hi = m - 2 * sd, m + 2 * sd
        p = Panel(70 + (j - 1) * 380, 40, 300, 240, (steps[0], steps[-1]), _limits(lo, hi, tr),
                  title=f"coordinate {j}", xlabel="step", ylabel="posterior mean")
        p.band(steps, lo, hi, COLORS["band"])
        p.line(steps, m, COLORS["rml"])
        p.line(steps, lo, COLORS["rml"], width=1, dash="4,3")
        p.line(steps, hi, COLORS["rml"], width=1, dash="4,3")
        p.line(steps, tr, COLORS["truth"], width=1, dash="2,2")
        panels.append(p)
    return figure(70 + 380 * k, 330, panels)


def min_eig_svg(aggregate_csv) -> str:
    _, c = read_csv(aggregate_csv)
    steps, e = c["step"], c["min_eig_mean"]
    p = Panel(80, 40, 420, 260, (steps[0], steps[-1]), _limits(e, [0.0]),
              title="smallest eigenvalue of the second-moment matrix", xlabel="step", ylabel="mean over replications")
    p.line(steps, e, COLORS["rml"])
    return figure(540, 350, [p])


def _colorbar(x0, y0, h, vmin, vmax):
    els = []
    step = h / N_LEVELS
    for i, col in enumerate(GRADIENT):
        y = y0 + h - (i + 1) * step
        els.append(f'<rect x="{_n(x0)}" y="{_n(y)}" width="14" height="{_n(step + 0.3)}" fill="{col}" stroke="none"/>')
    els.append(f'<text x="{_n(x0 + 18)}" y="{_n(y0 + 4)}" font-size="10">{"%.4g" % vmax}</text>')
    els.append(f'<text x="{_n(x0 + 18)}" y="{_n(y0 + h)}" font-size="10">{"%.4g" % vmin}</text>')
    return els


def surface_svg(surface_csv, title: str) -> str:
    """Heatmap (two parameters) or curve (one parameter) with header markers."""
    meta, c = read_csv(surface_csv)
    vmin, vmax = float(meta["scale_min"]), float(meta["scale_max"])
    markers = {k.split(" ", 1)[1]: parse_vec(v) for k, v in meta.items() if k.startswith("marker ")}
    if "theta_2" not in c:
        t, v = c["theta_1"], c["value"]
        p = Panel(80, 40, 420, 260, (t[0], t[-1]), _limits(v), title=title, xlabel="theta_1")
        p.line(t, v, COLORS["rml"])
        for name, pos in markers.items():
            p.vline(pos[0], MARKERS.get(name, ("", "#000000"))[1])
        return figure(560, 350, [p], _legend(560 - 150, 60, markers))
    ax1 = np.unique(c["theta_1"])
    ax2 = np.unique(c["theta_2"])
    vals = c["value"].reshape(ax1.size, ax2.size)
    e1, e2 = _edges(ax1), _edges(ax2)
    p = Panel(70, 40, 360, 360, (e1[0], e1[-1]), (e2[0], e2[-1]), title=title, xlabel="theta_1", ylabel="theta_2")
    p.heat(ax1, ax2, vals, vmin, vmax)
    for name, pos in markers.items():
        shape, col = MARKERS.get(name, ("circle", "#ffffff"))
        p.marker(pos[0], pos[1], shape, col)
    extra = _colorbar(445, 40, 360, vmin, vmax) + _legend(500, 60, markers)
    return figure(680, 450, [p], extra)


def _legend(x0, y0, markers) -> list:
    els = []
    for i, name in enumerate(markers):
        shape, col = MARKERS.get(name, ("circle", "#ffffff"))
        y = y0 + 22 * i
        if shape == "square":
            els.append(f'<rect x="{_n(x0 - 5)}" y="{_n(y - 5)}" width="10" height="10" fill="{col}" stroke="#000000"/>')
        elif shape == "triangle":
            els.append(f'<polygon points="{_n(x0)},{_n(y - 6)} {_n(x0 - 5)},{_n(y + 4)} {_n(x0 + 5)},{_n(y + 4)}" fill="{col}" stroke="#000000"/>')
        elif shape == "diamond":
            els.append(f'<polygon points="{_n(x0)},{_n(y - 5)} {_n(x0 + 5)},{_n(y)} {_n(x0)},{_n(y + 5)} {_n(x0 - 5)},{_n(y)}" fill="{col}" stroke="#000000"/>')
        else:
            els.append(f'<circle cx="{_n(x0)}" cy="{_n(y)}" r="5" fill="{col}" stroke="#000000"/>')
        els.append(f'<text x="{_n(x0 + 10)}" y="{_n(y + 4)}" font-size="11">{escape(name)}</text>')
    return els


def compare_svg(curve_csvs) -> str:
    """Rows: RML and Thompson; columns: snapshot steps."""
    data = []
    for path in sorted(curve_csvs, key=lambda p: int(read_csv(p)[0]["step"])):
        meta, c = read_csv(path)
        data.append((int(meta["step"]), c))
    panels = []
    for col, (step, c) in enumerate(data):
        method = np.array(c["method"])
        for row, name in enumerate(("rml", "thompson")):
            sel = method == name
            x = c["x"][sel]
            label = "RML" if name == "rml" else "Thompson sampling"
            p = Panel(70 + 300 * col, 40 + 300 * row, 240, 220, (x.min(), x.max()), (0.0, 1.0),
                      title=f"{label}, n = {step}", xlabel="x", ylabel="fraud probability" if col == 0 else "")
            p.band(x, c["lower"][sel], c["upper"][sel], COLORS[name])
            p.line(x, c["mean"][sel], COLORS[name])
            p.line(x, c["truth"][sel], COLORS["truth"], width=1.2, dash="5,3")
            panels.append(p)
    return figure(70 + 300 * len(data), 600, panels)


def plays_svg(plays_csv) -> str:
    _, c = read_csv(plays_csv)
    p = Panel(80, 40, 420, 260, (c["lo"].min(), c["hi"].max()), (0.0, max(1.0, c["plays"].max() * 1.05)),
              title="Thompson sampling plays per arm", xlabel="x", ylabel="plays (all replications)")
    p.bars(c["lo"], c["hi"], c["plays"], COLORS["thompson"])
    return figure(540, 350, [p])


def render_run(run_dir) -> list:
    """(Re)write every figure a run directory's CSV files support."""
    run = Path(run_dir)
    fig_dir = run / "figures"
    fig_dir.mkdir(exist_ok=True)
    jobs = []
    agg = run / "aggregate.csv"
    if agg.is_file():
        _, c = read_csv(agg)
        if np.any(np.isfinite(c.get("mean_1", np.array([np.nan])))):
            jobs.append(("trajectories.svg", lambda: trajectories_svg(agg)))
        jobs.append(("min_eig.svg", lambda: min_eig_svg(agg)))
    surfaces = (("posterior_surface", "mean terminal posterior density"), ("loglik_surface", "average log-likelihood"))
    for name, title in surfaces:
        path = run / f"{name}.csv"
        if path.is_file():
            jobs.append((f"{name}.svg", lambda path=path, title=title: surface_svg(path, title)))
    curves = sorted(run.glob("curves_n*.csv"))
    if curves:
        jobs.append(("compare.svg", lambda: compare_svg(curves)))
    if (run / "plays.csv").is_file():
        jobs.append(("plays.svg", lambda: plays_svg(run / "plays.csv")))
    written = []
    for name, make in jobs:
        out = fig_dir / name
        out.write_bytes(make().encode("utf-8"))
        written.append(out)
    return written
