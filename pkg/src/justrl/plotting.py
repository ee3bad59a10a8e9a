"""Three-panel training-dynamics figure drawn directly as SVG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .trainer import TelemetryRecord

PANELS = (
    ("mean_entropy", "Policy entropy (nats)"),
    ("mean_reward", "Mean reward"),
    ("mean_response_len", "Mean response length (tokens)"),
)

PANEL_W, PANEL_H = 320, 240
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56, 16, 32, 40


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        pad = max(abs(lo) * 0.05, 0.5)
    else:
        pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _panel(i: int, column: str, title: str, steps: list[float], ys: list[float]) -> list[str]:
    x0 = i * PANEL_W
    xmin, xmax = _axis_range(steps)
    ymin, ymax = _axis_range(ys)
    pw = PANEL_W - MARGIN_L - MARGIN_R
    ph = PANEL_H - MARGIN_T - MARGIN_B

    def sx(x: float) -> float:
        return x0 + MARGIN_L + (x - xmin) / (xmax - xmin) * pw

    def sy(y: float) -> float:
        return MARGIN_T + (ymax - y) / (ymax - ymin) * ph

    left, right, top, bottom = x0 + MARGIN_L, x0 + MARGIN_L + pw, MARGIN_T, MARGIN_T + ph
    out = [
        f'<g class="panel" data-column="{column}" data-xmin="{_fmt(xmin)}" data-xmax="{_fmt(xmax)}" '
        f'data-ymin="{_fmt(ymin)}" data-ymax="{_fmt(ymax)}">',
        f'<text x="{x0 + PANEL_W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{left:.1f}" y="{top:.1f}" width="{pw:.1f}" height="{ph:.1f}" fill="none" stroke="#444"/>',
        f'<text class="ytick" x="{left - 4:.1f}" y="{bottom:.1f}" text-anchor="end" font-size="10">{_fmt(ymin)}</text>',
        f'<text class="ytick" x="{left - 4:.1f}" y="{top + 10:.1f}" text-anchor="end" font-size="10">{_fmt(ymax)}</text>',
        f'<text class="xtick" x="{left:.1f}" y="{bottom + 14:.1f}" text-anchor="start" font-size="10">{_fmt(xmin)}</text>',
        f'<text class="xtick" x="{right:.1f}" y="{bottom + 14:.1f}" text-anchor="end" font-size="10">{_fmt(xmax)}</text>',
        f'<text x="{(left + right) / 2:.1f}" y="{bottom + 30:.1f}" text-anchor="middle" font-size="11">step</text>',
    ]
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(steps, ys))
    if len(steps) > 1:
        out.append(f'<polyline class="series" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{pts}"/>')
    for x, y in zip(steps, ys):
        out.append(f'<circle class="point" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="1.8" fill="#1f77b4"/>')
    out.append("</g>")
    return out


def render_svg(records: Sequence[TelemetryRecord]) -> str:
    if not records:
        raise ValueError("no telemetry rows to plot")
    steps = [float(r.step) for r in records]
    width = PANEL_W * len(PANELS)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
        f'viewBox="0 0 {width} {PANEL_H}">',
        f'<rect width="{width}" height="{PANEL_H}" fill="white"/>',
    ]
    for i, (column, title) in enumerate(PANELS):
        parts.extend(_panel(i, column, title, steps, [float(getattr(r, column)) for r in records]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(records: Sequence[TelemetryRecord], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(render_svg(records))
    return path
