"""Small SVG emitters for line plots, bar charts and grid choropleths."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import FormatError

PALETTE = ["#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad", "#d68910"]
W, H, PAD = 640, 360, 48


def _save(path, body, width=W, height=H):
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
           f'<rect width="100%" height="100%" fill="white"/>\n{body}</svg>\n')
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def _scale(lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (np.asarray(v, float) - lo) / span * (b - a)


def _frame(title, xlabel, ylabel, xlim, ylim):
    parts = [f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
             f'<rect x="{PAD}" y="{PAD - 16}" width="{W - 2 * PAD}" height="{H - 2 * PAD + 16}" '
             'fill="none" stroke="#444"/>',
             f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
             f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" '
             f'text-anchor="middle">{escape(ylabel)}</text>']
    for v, y in ((ylim[0], H - PAD), (ylim[1], PAD - 16)):
        parts.append(f'<text x="{PAD - 4}" y="{y + 4}" text-anchor="end">{v:.3g}</text>')
    for v, x in ((xlim[0], PAD), (xlim[1], W - PAD)):
        parts.append(f'<text x="{x}" y="{H - PAD + 14}" text-anchor="middle">{v:.3g}</text>')
    return parts


def line_plot(path, x, series, title="", xlabel="", ylabel="", step=None):
    """``series`` maps a label to y values over ``x``. Labels listed in
    ``step`` are drawn as step functions."""
    x = np.asarray(x, float)
    ys = [np.asarray(v, float) for v in series.values()]
    ylo = min(float(np.nanmin(y)) for y in ys)
    yhi = max(float(np.nanmax(y)) for y in ys)
    sx = _scale(x.min(), x.max(), PAD, W - PAD)
    sy = _scale(ylo, yhi, H - PAD, PAD - 16)
    parts = _frame(title, xlabel, ylabel, (x.min(), x.max()), (ylo, yhi))
    for i, (label, y) in enumerate(series.items()):
        col = PALETTE[i % len(PALETTE)]
        if step and label in step:
            xx = np.repeat(x, 2)[1:]
            yy = np.repeat(np.asarray(y, float), 2)[:-1]
        else:
            xx, yy = x, np.asarray(y, float)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(xx), sy(yy)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.4"/>')
        parts.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 * i}" text-anchor="end" '
                     f'fill="{col}">{escape(str(label))}</text>')
    _save(path, "\n".join(parts) + "\n")


def bar_chart(path, values, title="", xlabel="unit", ylabel="value"):
    v = np.asarray(values, float)
    top = float(v.max()) if v.size and v.max() > 0 else 1.0
    sy = _scale(0.0, top, H - PAD, PAD - 16)
    bw = (W - 2 * PAD) / max(len(v), 1)
    parts = _frame(title, xlabel, ylabel, (0, len(v)), (0.0, top))
    for i, val in enumerate(v):
        y = float(sy(max(val, 0.0)))
        parts.append(f'<rect x="{PAD + i * bw:.2f}" y="{y:.2f}" width="{max(bw - 1, 0.5):.2f}" '
                     f'height="{H - PAD - y:.2f}" fill="{PALETTE[0]}"/>')
    _save(path, "\n".join(parts) + "\n")


def _color(t):
    # white to dark blue
    t = float(np.clip(t, 0, 1))
    r = int(255 - t * (255 - 20))
    g = int(255 - t * (255 - 60))
    b = int(255 - t * (255 - 140))
    return f"#{r:02x}{g:02x}{b:02x}"


def choropleth(path, grid, part, values, title=""):
    """Unit values painted on a regular 2-D grid (cells shaded by their unit)."""
    bounds = grid.cell_bounds()
    if bounds is None or grid.dim != 2:
        raise FormatError("choropleth needs a regular 2-D grid")
    v = np.asarray(values, float)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    (x0, x1), (y0, y1) = grid.bbox
    side = H - 2 * PAD
    s = side / max(x1 - x0, y1 - y0)
    parts = [f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for c, b in enumerate(bounds):
        col = _color((v[part.labels[c]] - lo) / span)
        px = PAD + (b[0, 0] - x0) * s
        py = PAD + (y1 - b[1, 1]) * s
        parts.append(f'<rect x="{px:.2f}" y="{py:.2f}" width="{(b[0, 1] - b[0, 0]) * s:.2f}" '
                     f'height="{(b[1, 1] - b[1, 0]) * s:.2f}" fill="{col}"/>')
    parts.append(f'<text x="{PAD + side + 12}" y="{PAD + 10}">max {hi:.3g}</text>')
    parts.append(f'<text x="{PAD + side + 12}" y="{PAD + side}">min {lo:.3g}</text>')
    _save(path, "\n".join(parts) + "\n")


def trace_plot(path, trace, title="criterion by unit count"):
    t = np.asarray(trace, float).reshape(-1, 4)
    line_plot(path, t[:, 0], {"total": t[:, 2]}, title, "j", "total")
