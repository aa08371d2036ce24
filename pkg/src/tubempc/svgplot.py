"""Dependency-free SVG line charts for traces and batch envelopes."""
from __future__ import annotations

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo: float, hi: float, n: int = 6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (1 * mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    t0 = np.ceil(lo / step) * step
    return np.arange(t0, hi + 0.5 * step, step)


class LineChart:
    """Accumulates series/bands/guide lines, renders one SVG string."""

    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = "",
                 width: int = 760, height: int = 420):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.series = []        # (x, y, label, color, dash)
        self.bands = []         # (x, ylo, yhi, color)
        self.hlines = []        # (y, color, dash)

    def add_series(self, x, y, label: str = "", color: str | None = None,
                   dash: str | None = None):
        c = color or PALETTE[len(self.series) % len(PALETTE)]
        self.series.append((np.asarray(x, float), np.asarray(y, float), label, c, dash))

    def add_band(self, x, y_lo, y_hi, color: str = "#1f77b4"):
        self.bands.append((np.asarray(x, float), np.asarray(y_lo, float),
                           np.asarray(y_hi, float), color))

    def add_hline(self, y: float, color: str = "#888888", dash: str = "4,3"):
        self.hlines.append((float(y), color, dash))

    def render(self) -> str:
        ml, mr, mt, mb = 62, 16, 34, 46
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs = [s[0] for s in self.series] + [b[0] for b in self.bands]
        ys = [s[1] for s in self.series] + [b[1] for b in self.bands] + \
             [b[2] for b in self.bands]
        if not xs:
            xs, ys = [np.array([0.0, 1.0])], [np.array([0.0, 1.0])]
        x_lo = min(float(np.min(a)) for a in xs)
        x_hi = max(float(np.max(a)) for a in xs)
        y_lo = min([float(np.min(a)) for a in ys] + [h for h, _, _ in self.hlines])
        y_hi = max([float(np.max(a)) for a in ys] + [h for h, _, _ in self.hlines])
        pad = 0.05 * (y_hi - y_lo if y_hi > y_lo else 1.0)
        y_lo, y_hi = y_lo - pad, y_hi + pad
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0

        def X(v):
            return ml + (v - x_lo) / (x_hi - x_lo) * pw

        def Y(v):
            return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               '<g font-family="Helvetica,Arial,sans-serif" font-size="12">']
        if self.title:
            out.append(f'<text x="{self.width/2:.1f}" y="20" text-anchor="middle" '
                       f'font-size="14">{self.title}</text>')
        for tx in _ticks(x_lo, x_hi):
            px = X(tx)
            out.append(f'<line x1="{px:.1f}" y1="{mt}" x2="{px:.1f}" y2="{mt+ph}" '
                       'stroke="#e5e5e5"/>')
            out.append(f'<text x="{px:.1f}" y="{mt+ph+16}" text-anchor="middle">'
                       f'{tx:g}</text>')
        for ty in _ticks(y_lo, y_hi):
            py = Y(ty)
            out.append(f'<line x1="{ml}" y1="{py:.1f}" x2="{ml+pw}" y2="{py:.1f}" '
                       'stroke="#e5e5e5"/>')
            out.append(f'<text x="{ml-6}" y="{py+4:.1f}" text-anchor="end">{ty:g}</text>')
        out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
                   'stroke="#333"/>')
        if self.xlabel:
            out.append(f'<text x="{ml+pw/2:.1f}" y="{self.height-10}" '
                       f'text-anchor="middle">{self.xlabel}</text>')
        if self.ylabel:
            out.append(f'<text x="16" y="{mt+ph/2:.1f}" text-anchor="middle" '
                       f'transform="rotate(-90 16 {mt+ph/2:.1f})">{self.ylabel}</text>')
        for x, lo, hi, color in self.bands:
            pts = [f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, hi)]
            pts += [f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x[::-1], lo[::-1])]
            out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" '
                       'fill-opacity="0.25" stroke="none"/>')
        for yv, color, dash in self.hlines:
            out.append(f'<line x1="{ml}" y1="{Y(yv):.2f}" x2="{ml+pw}" y2="{Y(yv):.2f}" '
                       f'stroke="{color}" stroke-dasharray="{dash}"/>')
        legend_y = mt + 14
        for x, y, label, color, dash in self.series:
            pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, y))
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"{dash_attr}/>')
            if label:
                out.append(f'<line x1="{ml+pw-120}" y1="{legend_y}" x2="{ml+pw-98}" '
                           f'y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
                out.append(f'<text x="{ml+pw-92}" y="{legend_y+4}">{label}</text>')
                legend_y += 16
        out.append("</g></svg>")
        return "\n".join(out) + "\n"

    def save(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.render())
