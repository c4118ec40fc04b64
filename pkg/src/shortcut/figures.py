"""Standalone SVG figures (800x800 canvas) written as plain text."""
from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH = HEIGHT = 800
MARGIN = 70
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _fmt_path(v: float) -> str:
    # paths keep near-full precision so their geometry can be checked exactly
    return f"{v:.12g}"


class _Panel:
    """Maps data coordinates into a pixel rectangle."""

    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, float) - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (np.asarray(y, float) - lo) / (hi - lo) * self.h


def _limits(arrays, pad=0.08):
    pts = np.concatenate([np.asarray(a, float).reshape(-1, 2) for a in arrays if len(a)]) \
        if any(len(a) for a in arrays) else np.zeros((1, 2))
    lo, hi = pts.min(0), pts.max(0)
    span = np.maximum(hi - lo, 1e-9)
    lo, hi = lo - pad * span, hi + pad * span
    # square aspect
    c, half = (lo + hi) / 2, (hi - lo).max() / 2
    return (c[0] - half, c[0] + half), (c[1] - half, c[1] + half)


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="30" font-size="20" text-anchor="middle">{escape(title)}</text>',
    ]


def _axes(p: _Panel, xlabel: str, ylabel: str, ticks: bool = True) -> list[str]:
    out = [
        f'<rect x="{_fmt(p.x0)}" y="{_fmt(p.y0)}" width="{_fmt(p.w)}" height="{_fmt(p.h)}" '
        'fill="none" stroke="black" stroke-width="1"/>',
        f'<text x="{_fmt(p.x0 + p.w / 2)}" y="{_fmt(p.y0 + p.h + 40)}" font-size="14" '
        f'text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="{_fmt(p.x0 - 45)}" y="{_fmt(p.y0 + p.h / 2)}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 {_fmt(p.x0 - 45)} {_fmt(p.y0 + p.h / 2)})">{escape(ylabel)}</text>',
    ]
    if ticks:
        for v in np.linspace(*p.xlim, 5):
            out.append(f'<text x="{_fmt(p.px(v))}" y="{_fmt(p.y0 + p.h + 18)}" font-size="11" '
                       f'text-anchor="middle">{v:.2g}</text>')
        for v in np.linspace(*p.ylim, 5):
            out.append(f'<text x="{_fmt(p.x0 - 8)}" y="{_fmt(p.py(v) + 4)}" font-size="11" '
                       f'text-anchor="end">{v:.2g}</text>')
    return out


def _legend(entries: Sequence[tuple[str, str]]) -> list[str]:
    out = ['<g class="legend">']
    for i, (label, color) in enumerate(entries):
        y = 55 + 18 * i
        out.append(f'<rect x="{WIDTH - 190}" y="{y - 10}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - 172}" y="{y}" font-size="13">{escape(label)}</text>')
    out.append("</g>")
    return out


def _circles(p: _Panel, pts, cls: str, color: str, r: float = 1.6, opacity: float = 0.6) -> list[str]:
    pts = np.asarray(pts, float).reshape(-1, 2)
    xs, ys = p.px(pts[:, 0]), p.py(pts[:, 1])
    return [
        f'<circle class="{cls}" cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{color}" '
        f'fill-opacity="{opacity}"/>'
        for x, y in zip(xs, ys)
    ]


def _grid_layout(n: int):
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    size = min((WIDTH - MARGIN - 30) / cols, (HEIGHT - MARGIN - 60) / rows)
    return cols, rows, size


def scatter_svg(data, samples: Mapping[str, np.ndarray], title: str = "Samples vs data") -> str:
    """One panel per entry of ``samples`` (e.g. per step budget) over the data cloud."""
    data = np.asarray(data, float).reshape(-1, 2)
    names = list(samples)
    xlim, ylim = _limits([data] + [samples[k] for k in names])
    cols, rows, size = _grid_layout(max(1, len(names)))
    out = _header(title)
    for i, name in enumerate(names):
        r, c = divmod(i, cols)
        p = _Panel(MARGIN + c * size + 5, 50 + r * size + 5, size - 20, size - 30, xlim, ylim)
        out += _axes(p, "x", "y", ticks=len(names) == 1)
        out += _circles(p, data, "data", "#bbbbbb", r=1.2, opacity=0.5)
        out += _circles(p, samples[name], "sample", PALETTE[i % len(PALETTE)])
        out.append(f'<text x="{_fmt(p.x0 + 6)}" y="{_fmt(p.y0 + 16)}" font-size="13">'
                   f'{escape(str(name))}</text>')
    out += _legend([("data", "#bbbbbb")] + [(str(n), PALETTE[i % len(PALETTE)])
                                            for i, n in enumerate(names)])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def trajectories_svg(traj, data=None, title: str = "Sampling trajectories") -> str:
    """Polylines for trajectories shaped (steps + 1, n, 2)."""
    traj = np.asarray(traj, float)
    arrays = [traj.reshape(-1, 2)] + ([np.asarray(data)] if data is not None else [])
    xlim, ylim = _limits(arrays)
    p = _Panel(MARGIN, 60, WIDTH - MARGIN - 40, HEIGHT - 130, xlim, ylim)
    out = _header(title) + _axes(p, "x", "y")
    if data is not None:
        out += _circles(p, data, "data", "#bbbbbb", r=1.2, opacity=0.5)
    for j in range(traj.shape[1]):
        xs, ys = p.px(traj[:, j, 0]), p.py(traj[:, j, 1])
        pts = " ".join(f"{_fmt_path(x)},{_fmt_path(y)}" for x, y in zip(xs, ys))
        out.append(f'<polyline class="path" points="{pts}" fill="none" stroke="#1f77b4" '
                   'stroke-width="0.8" stroke-opacity="0.6"/>')
    out += _circles(p, traj[0], "start", "#2ca02c", r=2.0, opacity=0.8)
    out += _circles(p, traj[-1], "end", "#d62728", r=2.0, opacity=0.8)
    out += _legend([("noise x0", "#2ca02c"), ("endpoint", "#d62728"), ("path", "#1f77b4")]
                   + ([("data", "#bbbbbb")] if data is not None else []))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def metric_vs_budget_svg(series: Mapping[str, Mapping[int, float]], metric: str = "sliced_w2",
                         title: str | None = None) -> str:
    """Line chart of ``metric`` against step budget (log2 axis), one line per run."""
    budgets = sorted({b for s in series.values() for b in s})
    vals = [v for s in series.values() for v in s.values() if np.isfinite(v)]
    ymax = max(vals) if vals else 1.0
    xlo, xhi = (math.log2(budgets[0]), math.log2(budgets[-1])) if budgets else (0.0, 1.0)
    if xhi == xlo:
        xhi = xlo + 1
    p = _Panel(MARGIN + 10, 60, WIDTH - MARGIN - 60, HEIGHT - 140, (xlo, xhi), (0.0, ymax * 1.1 or 1.0))
    out = _header(title or f"{metric} vs sampling steps")
    out += _axes(p, "sampling steps", metric, ticks=False)
    for b in budgets:
        out.append(f'<text x="{_fmt(p.px(math.log2(b)))}" y="{_fmt(p.y0 + p.h + 18)}" '
                   f'font-size="11" text-anchor="middle">{b}</text>')
    for v in np.linspace(0, ymax * 1.1, 5):
        out.append(f'<text x="{_fmt(p.x0 - 8)}" y="{_fmt(p.py(v) + 4)}" font-size="11" '
                   f'text-anchor="end">{v:.2g}</text>')
    legend = []
    for i, (name, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        bs = sorted(s)
        pts = " ".join(f"{_fmt(p.px(math.log2(b)))},{_fmt(p.py(s[b]))}" for b in bs)
        out.append(f'<polyline class="series" points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="2"/>')
        for b in bs:
            out.append(f'<circle class="marker" cx="{_fmt(p.px(math.log2(b)))}" '
                       f'cy="{_fmt(p.py(s[b]))}" r="3.5" fill="{color}"/>')
        legend.append((str(name), color))
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def interpolation_svg(rows: Sequence[tuple[float, np.ndarray, np.ndarray]], data=None,
                      title: str = "One-step generations along a noise interpolation") -> str:
    """Strip of cells, one per interpolation weight n, each showing its generation(s)."""
    n_cells = max(1, len(rows))
    arrays = [np.asarray(r[2]).reshape(-1, 2) for r in rows]
    if data is not None:
        arrays.append(np.asarray(data))
    xlim, ylim = _limits(arrays)
    cell = (WIDTH - 2 * 20) / n_cells
    out = _header(title)
    y0 = HEIGHT / 2 - cell / 2
    for i, (n, _x0, gen) in enumerate(rows):
        p = _Panel(20 + i * cell + 2, y0, cell - 4, cell - 4, xlim, ylim)
        out.append(f'<rect class="cell" x="{_fmt(p.x0)}" y="{_fmt(p.y0)}" width="{_fmt(p.w)}" '
                   f'height="{_fmt(p.h)}" fill="none" stroke="black" stroke-width="0.8"/>')
        if data is not None:
            out += _circles(p, data, "data", "#cccccc", r=0.6, opacity=0.4)
        out += _circles(p, gen, "generation", "#d62728", r=3.0, opacity=0.9)
        out.append(f'<text x="{_fmt(p.x0 + p.w / 2)}" y="{_fmt(p.y0 + p.h + 16)}" font-size="11" '
                   f'text-anchor="middle">n={n:.3g}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{_fmt(y0 + cell + 50)}" font-size="14" '
               'text-anchor="middle">interpolation weight n</text>')
    out += _legend([("generation", "#d62728")] + ([("data", "#cccccc")] if data is not None else []))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
