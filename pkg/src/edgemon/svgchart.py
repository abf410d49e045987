"""Minimal self-contained SVG line charts.

Experiment outputs need exactly one kind of figure: numeric x values, a few
series with symmetric error bars, axes, legend. Writing the ~60 SVG elements
directly keeps the artifact dependency-free and byte-deterministic, which
the experiment harness relies on (identical inputs must reproduce identical
files).
"""

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ValidationError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 78, 24, 46, 58


@dataclass
class Series:
    label: str
    y: Sequence[float]
    y_err: Sequence[float] = field(default_factory=tuple)  # 95% half-widths, optional


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if "." in f"{v:.3f}" else f"{v:.3f}"


def line_chart(
    x_values: Sequence[float],
    series: Sequence[Series],
    x_label: str,
    y_label: str,
    title: str = "",
) -> str:
    """Render one figure as an SVG string."""
    if not x_values:
        raise ValidationError("a chart needs at least one x value")
    if not series:
        raise ValidationError("a chart needs at least one series")
    for s in series:
        if len(s.y) != len(x_values):
            raise ValidationError(f"series {s.label!r} has {len(s.y)} points, expected {len(x_values)}")
        if s.y_err and len(s.y_err) != len(x_values):
            raise ValidationError(f"series {s.label!r} error bars do not match its points")

    lo = min(min(s.y[i] - (s.y_err[i] if s.y_err else 0.0) for i in range(len(s.y))) for s in series)
    hi = max(max(s.y[i] + (s.y_err[i] if s.y_err else 0.0) for i in range(len(s.y))) for s in series)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    x_lo, x_hi = min(x_values), max(x_values)
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return MARGIN_T + (hi - y) / (hi - lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333333" stroke-width="1"/>',
    ]
    if title:
        out.append(
            f'<text x="{WIDTH // 2}" y="26" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )

    n_ticks = 6
    for i in range(n_ticks):
        y_val = lo + (hi - lo) * i / (n_ticks - 1)
        y_pix = py(y_val)
        out.append(
            f'<line x1="{MARGIN_L}" y1="{_fmt(y_pix)}" x2="{WIDTH - MARGIN_R}" y2="{_fmt(y_pix)}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{MARGIN_L - 8}" y="{_fmt(y_pix + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_tick_label(y_val)}</text>'
        )
    for x in x_values:
        x_pix = px(x)
        out.append(
            f'<line x1="{_fmt(x_pix)}" y1="{HEIGHT - MARGIN_B}" x2="{_fmt(x_pix)}" '
            f'y2="{HEIGHT - MARGIN_B + 5}" stroke="#333333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_fmt(x_pix)}" y="{HEIGHT - MARGIN_B + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{x:g}</text>'
        )
    out.append(
        f'<text x="{MARGIN_L + plot_w // 2}" y="{HEIGHT - 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{x_label}</text>'
    )
    out.append(
        f'<text x="20" y="{MARGIN_T + plot_h // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 20 {MARGIN_T + plot_h // 2})">{y_label}</text>'
    )

    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(x_values, s.y))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for i, (x, y) in enumerate(zip(x_values, s.y)):
            cx, cy = px(x), py(y)
            if s.y_err and s.y_err[i] > 0.0:
                y0, y1 = py(y - s.y_err[i]), py(y + s.y_err[i])
                out.append(
                    f'<line x1="{_fmt(cx)}" y1="{_fmt(y0)}" x2="{_fmt(cx)}" y2="{_fmt(y1)}" '
                    f'stroke="{color}" stroke-width="1"/>'
                )
                for yy in (y0, y1):
                    out.append(
                        f'<line x1="{_fmt(cx - 3)}" y1="{_fmt(yy)}" x2="{_fmt(cx + 3)}" '
                        f'y2="{_fmt(yy)}" stroke="{color}" stroke-width="1"/>'
                    )
            out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="{color}"/>')

    legend_x = MARGIN_L + 12
    legend_y = MARGIN_T + 14
    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        yy = legend_y + 18 * idx
        out.append(
            f'<line x1="{legend_x}" y1="{yy}" x2="{legend_x + 22}" y2="{yy}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{legend_x + 28}" y="{yy + 4}" font-family="sans-serif" '
            f'font-size="12">{s.label}</text>'
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"
