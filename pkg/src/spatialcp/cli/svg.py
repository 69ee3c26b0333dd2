"""Minimal hand-written SVG charts (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _fmt(v):
    return f"{v:.2f}"


class Canvas:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.items = []

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                          f'stroke="{stroke}" stroke-width="{width}"{d}/>')

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.items.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(max(w, 0))}" '
                          f'height="{_fmt(max(h, 0))}" fill="{fill}" stroke="{stroke}"/>')

    def circle(self, x, y, r, fill):
        self.items.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{fill}"/>')

    def text(self, x, y, s, size=11, anchor="start", rotate=None):
        rot = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate else ""
        self.items.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'font-family="sans-serif" text-anchor="{anchor}"{rot}>{escape(str(s))}</text>')

    def render(self):
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def _nice_range(lo, hi):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.08 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    step = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(step))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= step), default=step)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12:
        out.append(round(v, 10))
        v += step
    return out


def grouped_points(panels, title, ylabel, hlines=(), width=None, height=360):
    """Panels of categorical x positions with one coloured point per series.

    ``panels`` is ``[(panel_name, [category, ...], {series: [value, ...]})]``.
    ``hlines`` are ``(y, label)`` dotted reference lines shared by all panels.
    """
    n_cat = sum(len(c) for _, c, _ in panels)
    width = width or max(480, 70 + 34 * n_cat + 40 * len(panels))
    left, right, top, bottom = 60, 130, 40, 90
    vals = [v for _, _, s in panels for vs in s.values() for v in vs if v is not None and math.isfinite(v)]
    vals += [y for y, _ in hlines]
    lo, hi = _nice_range(min(vals, default=0.0), max(vals, default=1.0))
    c = Canvas(width, height)
    plot_h = height - top - bottom
    def ypos(v):
        return top + plot_h * (hi - v) / (hi - lo)
    c.text(width / 2, 22, title, size=14, anchor="middle")
    c.text(16, top + plot_h / 2, ylabel, anchor="middle", rotate=-90)
    for t in _ticks(lo, hi):
        c.line(left - 4, ypos(t), width - right, ypos(t), stroke="#ddd")
        c.text(left - 6, ypos(t) + 4, f"{t:g}", size=10, anchor="end")
    c.line(left, top, left, top + plot_h)
    for y, label in hlines:
        c.line(left, ypos(y), width - right, ypos(y), stroke="#555", dash="4,3")
        c.text(width - right + 4, ypos(y) + 4, label, size=10)
    series_names = []
    for _, _, s in panels:
        for k in s:
            if k not in series_names:
                series_names.append(k)
    slot = (width - left - right) / max(n_cat + len(panels), 1)
    x = left + slot / 2
    for pname, cats, series in panels:
        x0 = x
        for i, cat in enumerate(cats):
            for j, name in enumerate(series_names):
                vs = series.get(name)
                if vs is None or vs[i] is None or not math.isfinite(vs[i]):
                    continue
                off = (j - (len(series_names) - 1) / 2) * min(5.0, slot / (len(series_names) + 1))
                c.circle(x + off, ypos(vs[i]), 3.5, PALETTE[j % len(PALETTE)])
            c.text(x, top + plot_h + 14, cat, size=10, anchor="end", rotate=-45)
            x += slot
        c.text((x0 + x - slot) / 2, height - 8, pname, size=11, anchor="middle")
        c.line(x, top, x, top + plot_h, stroke="#eee")
        x += slot
    for j, name in enumerate(series_names):
        c.circle(width - right + 10, top + 40 + 16 * j, 4, PALETTE[j % len(PALETTE)])
        c.text(width - right + 18, top + 44 + 16 * j, name, size=10)
    return c.render()


def boxplots(boxes, title, ylabel, hlines=(), height=380):
    """``boxes``: ``[(label, {min, q1, median, q3, max})]``."""
    width = max(480, 90 + 28 * len(boxes) + 130)
    left, right, top, bottom = 60, 130, 40, 120
    vals = [b[k] for _, b in boxes for k in ("min", "max")] + [y for y, _ in hlines]
    lo, hi = _nice_range(min(vals, default=0.0), max(vals, default=1.0))
    c = Canvas(width, height)
    plot_h = height - top - bottom
    def ypos(v):
        return top + plot_h * (hi - v) / (hi - lo)
    c.text(width / 2, 22, title, size=14, anchor="middle")
    c.text(16, top + plot_h / 2, ylabel, anchor="middle", rotate=-90)
    for t in _ticks(lo, hi):
        c.line(left - 4, ypos(t), width - right, ypos(t), stroke="#ddd")
        c.text(left - 6, ypos(t) + 4, f"{t:g}", size=10, anchor="end")
    for y, label in hlines:
        c.line(left, ypos(y), width - right, ypos(y), stroke="#555", dash="4,3")
        c.text(width - right + 4, ypos(y) + 4, label, size=10)
    slot = (width - left - right) / max(len(boxes), 1)
    for i, (label, b) in enumerate(boxes):
        xc = left + slot * (i + 0.5)
        w = slot * 0.6
        c.line(xc, ypos(b["min"]), xc, ypos(b["max"]), stroke="#333")
        c.rect(xc - w / 2, ypos(b["q3"]), w, ypos(b["q1"]) - ypos(b["q3"]), fill="#9ecae1", stroke="#333")
        c.line(xc - w / 2, ypos(b["median"]), xc + w / 2, ypos(b["median"]), stroke="#000", width=1.5)
        c.text(xc, top + plot_h + 14, label, size=9, anchor="end", rotate=-60)
    return c.render()
