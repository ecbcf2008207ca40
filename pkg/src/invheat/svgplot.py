"""Minimal SVG line plots for the benchmark studies.

Hand-rolled on purpose: the study outputs are small (tens of points per
series), the CSV is the contract, and a plot that needs no plotting
dependency can be regenerated anywhere.  Log axes show decade ticks,
linear axes pick a step from the 1-2-5 ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

__all__ = ["Series", "line_plot"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
MARKERS = ("circle", "square", "diamond", "triangle")

WIDTH, HEIGHT = 640, 460
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 18, 40, 54
FONT = "font-family=\"Helvetica, Arial, sans-serif\""


@dataclass(frozen=True)
class Series:
    """One polyline with markers; style indices cycle through the palette."""

    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    color: str | None = None
    dash: str | None = None
    marker: str | None = None

    def points(self, xlog: bool, ylog: bool) -> list[tuple[float, float]]:
        pts = []
        for x, y in zip(self.xs, self.ys):
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if (xlog and x <= 0) or (ylog and y <= 0):
                continue
            pts.append((float(x), float(y)))
        return pts


def _nice_step(span: float) -> float:
    raw = span / 5.0
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0):
        if raw <= mult * mag:
            return mult * mag
    return 10.0 * mag


def _linear_ticks(lo: float, hi: float) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = _nice_step(hi - lo)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _decade_ticks(lo: float, hi: float) -> list[float]:
    e0 = math.floor(math.log10(lo))
    e1 = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(int(e0), int(e1) + 1)]


def _fmt_tick(v: float, log: bool) -> str:
    if log:
        e = round(math.log10(v))
        return f"1e{e:+d}" if e else "1"
    return f"{v:g}"


class _Axis:
    """Maps one data coordinate to pixels, linear or logarithmic."""

    def __init__(self, lo: float, hi: float, px0: float, px1: float,
                 log: bool):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            pad = max(abs(lo), 1.0) * 0.5
            lo, hi = lo - pad, hi + pad
        else:
            pad = (hi - lo) * 0.06
            lo, hi = lo - pad, hi + pad
        self.lo, self.hi = lo, hi
        self.px0, self.px1 = px0, px1
        self.log = log

    def to_px(self, v: float) -> float:
        t = math.log10(v) if self.log else v
        frac = (t - self.lo) / (self.hi - self.lo)
        return self.px0 + frac * (self.px1 - self.px0)

    def ticks(self) -> list[float]:
        if self.log:
            return [t for t in _decade_ticks(10 ** self.lo, 10 ** self.hi)
                    if self.lo <= math.log10(t) <= self.hi]
        return _linear_ticks(self.lo, self.hi)


def _marker_svg(kind: str, x: float, y: float, color: str) -> str:
    r = 3.2
    if kind == "square":
        return (f"<rect x=\"{x - r:.1f}\" y=\"{y - r:.1f}\" width=\"{2 * r:.1f}\" "
                f"height=\"{2 * r:.1f}\" fill=\"{color}\"/>")
    if kind == "diamond":
        pts = f"{x:.1f},{y - r - 1:.1f} {x + r + 1:.1f},{y:.1f} {x:.1f},{y + r + 1:.1f} {x - r - 1:.1f},{y:.1f}"
        return f"<polygon points=\"{pts}\" fill=\"{color}\"/>"
    if kind == "triangle":
        pts = f"{x:.1f},{y - r - 1:.1f} {x + r + 1:.1f},{y + r:.1f} {x - r - 1:.1f},{y + r:.1f}"
        return f"<polygon points=\"{pts}\" fill=\"{color}\"/>"
    return f"<circle cx=\"{x:.1f}\" cy=\"{y:.1f}\" r=\"{r:.1f}\" fill=\"{color}\"/>"


def line_plot(series: Sequence[Series], title: str, xlabel: str,
              ylabel: str, path: str | None = None, xlog: bool = True,
              ylog: bool = True, note: str = "") -> str:
    """Render series into one SVG document; write it when a path is given."""
    usable = [(s, s.points(xlog, ylog)) for s in series]
    usable = [(s, pts) for s, pts in usable if pts]
    if not usable:
        raise ValueError("nothing plottable: every point is off-scale")

    xs = [x for _, pts in usable for x, _ in pts]
    ys = [y for _, pts in usable for _, y in pts]
    ax = _Axis(min(xs), max(xs), MARGIN_L, WIDTH - MARGIN_R, xlog)
    ay = _Axis(min(ys), max(ys), HEIGHT - MARGIN_B, MARGIN_T, ylog)

    parts = [
        f"<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" "
        f"height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">",
        f"<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>",
        f"<text x=\"{WIDTH / 2:.0f}\" y=\"22\" text-anchor=\"middle\" "
        f"{FONT} font-size=\"14\" font-weight=\"bold\">{escape(title)}</text>",
    ]

    for t in ax.ticks():
        px = ax.to_px(t)
        parts.append(f"<line x1=\"{px:.1f}\" y1=\"{MARGIN_T}\" x2=\"{px:.1f}\" "
                     f"y2=\"{HEIGHT - MARGIN_B}\" stroke=\"#dddddd\"/>")
        parts.append(f"<text x=\"{px:.1f}\" y=\"{HEIGHT - MARGIN_B + 16}\" "
                     f"text-anchor=\"middle\" {FONT} font-size=\"11\">"
                     f"{_fmt_tick(t, xlog)}</text>")
    for t in ay.ticks():
        py = ay.to_px(t)
        parts.append(f"<line x1=\"{MARGIN_L}\" y1=\"{py:.1f}\" "
                     f"x2=\"{WIDTH - MARGIN_R}\" y2=\"{py:.1f}\" "
                     f"stroke=\"#dddddd\"/>")
        parts.append(f"<text x=\"{MARGIN_L - 6}\" y=\"{py + 4:.1f}\" "
                     f"text-anchor=\"end\" {FONT} font-size=\"11\">"
                     f"{_fmt_tick(t, ylog)}</text>")

    parts.append(f"<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" "
                 f"width=\"{WIDTH - MARGIN_L - MARGIN_R}\" "
                 f"height=\"{HEIGHT - MARGIN_T - MARGIN_B}\" fill=\"none\" "
                 f"stroke=\"#333333\"/>")
    parts.append(f"<text x=\"{(MARGIN_L + WIDTH - MARGIN_R) / 2:.0f}\" "
                 f"y=\"{HEIGHT - 14}\" text-anchor=\"middle\" {FONT} "
                 f"font-size=\"12\">{escape(xlabel)}</text>")
    parts.append(f"<text x=\"18\" y=\"{(MARGIN_T + HEIGHT - MARGIN_B) / 2:.0f}\" "
                 f"text-anchor=\"middle\" {FONT} font-size=\"12\" "
                 f"transform=\"rotate(-90 18 "
                 f"{(MARGIN_T + HEIGHT - MARGIN_B) / 2:.0f})\">"
                 f"{escape(ylabel)}</text>")

    for i, (s, pts) in enumerate(usable):
        color = s.color or PALETTE[i % len(PALETTE)]
        marker = s.marker or MARKERS[i % len(MARKERS)]
        coords = [(ax.to_px(x), ay.to_px(y)) for x, y in pts]
        if len(coords) > 1:
            d = "M " + " L ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
            dash = f" stroke-dasharray=\"{s.dash}\"" if s.dash else ""
            parts.append(f"<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" "
                         f"stroke-width=\"1.6\"{dash}/>")
        for x, y in coords:
            parts.append(_marker_svg(marker, x, y, color))

    lx, ly = WIDTH - MARGIN_R - 210, MARGIN_T + 10
    parts.append(f"<rect x=\"{lx - 8}\" y=\"{ly - 14}\" width=\"210\" "
                 f"height=\"{len(usable) * 17 + 10}\" fill=\"white\" "
                 f"fill-opacity=\"0.85\" stroke=\"#999999\"/>")
    for i, (s, _) in enumerate(usable):
        color = s.color or PALETTE[i % len(PALETTE)]
        y = ly + i * 17
        dash = f" stroke-dasharray=\"{s.dash}\"" if s.dash else ""
        parts.append(f"<line x1=\"{lx}\" y1=\"{y - 4}\" x2=\"{lx + 26}\" "
                     f"y2=\"{y - 4}\" stroke=\"{color}\" stroke-width=\"1.6\"{dash}/>")
        parts.append(_marker_svg(s.marker or MARKERS[i % len(MARKERS)],
                                 lx + 13, y - 4, color))
        parts.append(f"<text x=\"{lx + 32}\" y=\"{y}\" {FONT} "
                     f"font-size=\"11\">{escape(s.label)}</text>")
    if note:
        parts.append(f"<text x=\"{MARGIN_L + 6}\" y=\"{MARGIN_T + 14}\" {FONT} "
                     f"font-size=\"11\" fill=\"#555555\">{escape(note)}</text>")

    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(svg)
    return svg
