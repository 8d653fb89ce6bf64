"""Dependency-free SVG emission for rejection-rate curves.

One plot shows rate against block count for a fixed (2n, p, effect size):
connected points with 95% error bars for the blocking designs, and the
pairwise-matching cell as a detached dot at B = n. CSV remains the
canonical output; these plots are a visual companion.
"""

from __future__ import annotations

import math

from blockpower.harness import DesignKind, PowerCellResult

__all__ = ["power_curve_svg"]

_WIDTH, _HEIGHT = 640, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 20, 40, 50


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def power_curve_svg(results: list[PowerCellResult], path, title: str | None = None,
                    reference: float | None = None) -> None:
    """Write rate-vs-B with error bars for one (2n, p, beta_t) group.

    ``reference`` draws a horizontal dashed line (e.g. the nominal size).
    """
    results = sorted((r for r in results if not math.isnan(r.rate)), key=lambda r: r.spec.B)
    if not results:
        raise ValueError("no plottable results")
    bs = [r.spec.B for r in results]
    lo = min(min(r.ci_low for r in results), reference or 1.0)
    hi = max(max(r.ci_high for r in results), reference or 0.0)
    pad = max(0.02, (hi - lo) * 0.15)
    y0, y1 = max(0.0, lo - pad), min(1.0, hi + pad)
    x0, x1 = 0.5, max(bs) * 1.1

    def sx(b: float) -> float:
        # log scale: admissible B span two orders of magnitude
        return _MARGIN_L + (math.log(b) - math.log(x0)) / (math.log(x1) - math.log(x0)) * (
            _WIDTH - _MARGIN_L - _MARGIN_R
        )

    def sy(rate: float) -> float:
        return _HEIGHT - _MARGIN_B - (rate - y0) / (y1 - y0) * (_HEIGHT - _MARGIN_T - _MARGIN_B)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{_esc(title)}</text>'
        )
    # axes
    ax_y = _HEIGHT - _MARGIN_B
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{ax_y}" x2="{_WIDTH - _MARGIN_R}" y2="{ax_y}" '
        'stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" y2="{ax_y}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 12}" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">number of blocks B (log scale)</text>'
    )
    parts.append(
        f'<text x="16" y="{_HEIGHT / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {_HEIGHT / 2})">rejection rate</text>'
    )
    # y ticks
    for k in range(5):
        val = y0 + (y1 - y0) * k / 4
        y = sy(val)
        parts.append(f'<line x1="{_MARGIN_L - 4}" y1="{y:.1f}" x2="{_MARGIN_L}" y2="{y:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{val:.3f}</text>'
        )
    # x ticks at the observed B values
    for b in bs:
        x = sx(b)
        parts.append(f'<line x1="{x:.1f}" y1="{ax_y}" x2="{x:.1f}" y2="{ax_y + 4}" stroke="black"/>')
        parts.append(
            f'<text x="{x:.1f}" y="{ax_y + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{b}</text>'
        )
    if reference is not None:
        y = sy(reference)
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{y:.1f}" x2="{_WIDTH - _MARGIN_R}" y2="{y:.1f}" '
            'stroke="gray" stroke-dasharray="5,4"/>'
        )

    connected = [r for r in results if r.spec.design_kind is not DesignKind.PAIRWISE]
    detached = [r for r in results if r.spec.design_kind is DesignKind.PAIRWISE]
    if len(connected) > 1:
        points = " ".join(f"{sx(r.spec.B):.1f},{sy(r.rate):.1f}" for r in connected)
        parts.append(f'<polyline points="{points}" fill="none" stroke="steelblue"/>')
    for r in connected + detached:
        x = sx(r.spec.B)
        color = "crimson" if r.spec.design_kind is DesignKind.PAIRWISE else "steelblue"
        parts.append(
            f'<line x1="{x:.1f}" y1="{sy(r.ci_low):.1f}" x2="{x:.1f}" y2="{sy(r.ci_high):.1f}" '
            f'stroke="{color}"/>'
        )
        parts.append(f'<circle cx="{x:.1f}" cy="{sy(r.rate):.1f}" r="3.5" fill="{color}"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
