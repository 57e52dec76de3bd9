"""Standalone SVG line plot of the sliding mean, with band and event markers."""
from __future__ import annotations

import math
from typing import Optional, Sequence

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 720, 360
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 24, 44


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def trace_svg(index: Sequence[int], mu_hat: Sequence[float], mu_nominal: float, threshold: float,
              onset: Optional[int] = None, recognition: Optional[int] = None,
              title: str = "estimated mean over raw-key bits") -> str:
    pts = [(i, m) for i, m in zip(index, mu_hat) if m is not None and not math.isnan(m)]
    x_max = max(index[-1] if len(index) else 1, 1)
    lo = min([m for _, m in pts] + [mu_nominal - 2 * threshold])
    hi = max([m for _, m in pts] + [mu_nominal + 2 * threshold])
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + pw * x / x_max

    def sy(y):
        return TOP + ph * (hi - y) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="16" text-anchor="middle">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']

    def hline(y, colour, label):
        out.append(f'<line x1="{LEFT}" x2="{LEFT + pw}" y1="{_fmt(sy(y))}" y2="{_fmt(sy(y))}" '
                   f'stroke="{colour}" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{LEFT - 4}" y="{_fmt(sy(y) + 4)}" text-anchor="end">{label}</text>')

    hline(mu_nominal, "blue", f"{mu_nominal:.3g}")
    hline(mu_nominal - threshold, "red", f"{mu_nominal - threshold:.3g}")
    hline(mu_nominal + threshold, "red", f"{mu_nominal + threshold:.3g}")
    for x, name in ((onset, "onset"), (recognition, "recognised")):
        if x is None:
            continue
        out.append(f'<line x1="{_fmt(sx(x))}" x2="{_fmt(sx(x))}" y1="{TOP}" y2="{TOP + ph}" '
                   f'stroke="orange" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{_fmt(sx(x) + 3)}" y="{TOP + 12}">{name}</text>')
    if pts:
        path = " ".join(f"{_fmt(sx(i))},{_fmt(sy(m))}" for i, m in pts)
        out.append(f'<polyline fill="none" stroke="black" stroke-width="1" points="{path}"/>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">raw-key bit index '
               f'(0 to {x_max})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_trace(path, *args, **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write(trace_svg(*args, **kwargs))
