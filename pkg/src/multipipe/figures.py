"""SVG rendering for the correlation heatmap and the forest plot.

Figures are emitted as plain SVG 1.1 text built by string assembly: output
is a pure function of the inputs (no timestamps, no library-version
artifacts), so rendered documents are byte-stable and can be golden-tested
and diffed.  Coordinates are formatted to fixed precision; colors come from
a fixed blue-white-red diverging map anchored at correlations -1, 0, +1.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError

_BLUE = (33, 102, 172)
_WHITE = (247, 247, 247)
_RED = (178, 24, 43)

_FONT = 'font-family="Menlo, Consolas, monospace"'


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _color(r: float) -> str:
    r = min(max(float(r), -1.0), 1.0)
    base, t = (_BLUE, -r) if r < 0.0 else (_RED, r)
    rgb = tuple(round(w + (b - w) * t) for w, b in zip(_WHITE, base))
    return "#%02x%02x%02x" % rgb


def _svg_open(width: float, height: float) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">\n'
    )


def _text(x: float, y: float, s: str, size: int = 12, anchor: str = "start", extra: str = "") -> str:
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" {_FONT} font-size="{size}" '
        f'text-anchor="{anchor}"{extra}>{_escape(s)}</text>\n'
    )


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _check_order(order, j: int) -> List[int]:
    order = [int(i) for i in order]
    if sorted(order) != list(range(j)):
        raise InvalidInputError(f"order must be a permutation of 0..{j - 1}, got {order}")
    return order


def render_heatmap(
    correlation, order, labels: Optional[Sequence[str]] = None
) -> str:
    """Clustered correlation heatmap as an SVG document string.

    Cells follow the given display ``order`` (a permutation of pipeline
    indices) on both axes; each cell is colored on the diverging scale and,
    for 12 or fewer pipelines, annotated with the correlation to two
    decimals.  A vertical legend maps the scale back to [-1, 1].
    """
    corr = np.asarray(correlation, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise InvalidInputError(f"correlation must be square, got shape {corr.shape}")
    j = corr.shape[0]
    order = _check_order(order, j)
    if labels is None:
        labels = [str(i + 1) for i in range(j)]
    labels = [str(s) for s in labels]
    if len(labels) != j:
        raise InvalidInputError("one label per pipeline required")

    cell = 36.0 if j <= 12 else max(432.0 / j, 6.0)
    label_px = max(len(labels[i]) for i in range(j)) * 7.2 + 12.0
    left = label_px
    top = label_px
    grid = cell * j
    legend_w, legend_gap = 16.0, 24.0
    width = left + grid + legend_gap + legend_w + 40.0
    height = top + grid + 16.0

    parts = [_svg_open(width, height)]
    parts.append(f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>\n')
    for row, a in enumerate(order):
        y = top + row * cell
        parts.append(
            _text(left - 6.0, y + cell / 2.0 + 4.0, labels[a], anchor="end")
        )
        for col, b in enumerate(order):
            x = left + col * cell
            r = float(corr[a, b])
            parts.append(
                f'<rect class="cell" x="{_fmt(x)}" y="{_fmt(y)}" '
                f'width="{_fmt(cell)}" height="{_fmt(cell)}" fill="{_color(r)}"/>\n'
            )
            if j <= 12:
                fill = "#f5f5f5" if abs(r) > 0.55 else "#1a1a1a"
                parts.append(
                    f'<text x="{_fmt(x + cell / 2.0)}" y="{_fmt(y + cell / 2.0 + 3.5)}" '
                    f'{_FONT} font-size="10" text-anchor="middle" '
                    f'fill="{fill}">{r:.2f}</text>\n'
                )
    for col, b in enumerate(order):
        x = left + col * cell + cell / 2.0
        parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(top - 6.0)}" {_FONT} font-size="12" '
            f'text-anchor="start" transform="rotate(-60 {_fmt(x)} {_fmt(top - 6.0)})">'
            f"{_escape(labels[b])}</text>\n"
        )
    # legend: discrete gradient from +1 (top) to -1 (bottom)
    lx = left + grid + legend_gap
    steps = 64
    step_h = grid / steps
    for k in range(steps):
        r = 1.0 - 2.0 * (k + 0.5) / steps
        parts.append(
            f'<rect x="{_fmt(lx)}" y="{_fmt(top + k * step_h)}" width="{_fmt(legend_w)}" '
            f'height="{_fmt(step_h + 0.3)}" fill="{_color(r)}"/>\n'
        )
    for val in (1.0, 0.0, -1.0):
        ly = top + (1.0 - val) / 2.0 * grid
        parts.append(_text(lx + legend_w + 4.0, ly + 4.0, f"{val:+.0f}", size=11))
    parts.append("</svg>\n")
    return "".join(parts)


def _x_scale(
    lows: np.ndarray, highs: np.ndarray, reference: Optional[float], x0: float, x1: float
):
    vmin = float(np.min(lows))
    vmax = float(np.max(highs))
    if reference is not None:
        vmin = min(vmin, float(reference))
        vmax = max(vmax, float(reference))
    span = vmax - vmin
    if span <= 0.0:
        span = max(abs(vmin), 1.0)
        vmin -= span / 2.0
        vmax += span / 2.0
        span = vmax - vmin
    pad = 0.08 * span
    vmin -= pad
    vmax += pad

    def to_x(v: float) -> float:
        return x0 + (v - vmin) / (vmax - vmin) * (x1 - x0)

    return to_x, vmin, vmax


def render_forest(
    joint,
    pooled: Sequence,
    t_c: float,
    reference: Optional[float] = None,
    order: Optional[Sequence[int]] = None,
) -> str:
    """Forest plot: per-pipeline estimates with simultaneous intervals.

    Pipeline rows (in the given display order) show the estimate and the
    ``t_c``-adjusted interval; the pooled estimators follow below with
    their own unadjusted intervals and square markers.  A dashed vertical
    line marks the reference value when one is given.  Interval lines carry
    ``class="ci"`` and the reference ``class="ref"`` so geometry is easy to
    assert on.
    """
    if not t_c >= 0.0:
        raise InvalidInputError(f"t_c must be nonnegative, got {t_c}")
    j = joint.j
    order = _check_order(order if order is not None else range(j), j)
    names = [str(joint.pipelines[a]) for a in order] + [p.method.value for p in pooled]
    lows = np.concatenate(
        [
            (joint.psi_hat - t_c * joint.se)[order],
            np.array([p.ci[0] for p in pooled], dtype=np.float64),
        ]
    )
    highs = np.concatenate(
        [
            (joint.psi_hat + t_c * joint.se)[order],
            np.array([p.ci[1] for p in pooled], dtype=np.float64),
        ]
    )
    points = np.concatenate(
        [joint.psi_hat[order], np.array([p.estimate for p in pooled], dtype=np.float64)]
    )

    row_h = 22.0
    label_px = max(len(s) for s in names) * 7.2 + 16.0
    x0 = label_px
    plot_w = 430.0
    x1 = x0 + plot_w
    top = 18.0
    n_rows = len(names)
    gap = 10.0  # extra space between pipeline block and pooled block
    height = top + n_rows * row_h + gap + 34.0
    width = x1 + 20.0

    to_x, vmin, vmax = _x_scale(lows, highs, reference, x0, x1)

    parts = [_svg_open(width, height)]
    parts.append(f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>\n')

    axis_y = top + n_rows * row_h + gap + 8.0
    if reference is not None:
        xr = to_x(float(reference))
        parts.append(
            f'<line class="ref" x1="{_fmt(xr)}" y1="{_fmt(top - 6.0)}" '
            f'x2="{_fmt(xr)}" y2="{_fmt(axis_y)}" stroke="#555555" '
            f'stroke-dasharray="5,4" stroke-width="1"/>\n'
        )

    for row, name in enumerate(names):
        is_pooled = row >= j
        y = top + row * row_h + (gap if is_pooled else 0.0) + row_h / 2.0
        xl, xh, xp = to_x(float(lows[row])), to_x(float(highs[row])), to_x(float(points[row]))
        color = "#00441b" if is_pooled else "#08306b"
        parts.append(_text(x0 - 8.0, y + 4.0, name, anchor="end"))
        parts.append(
            f'<line class="ci" x1="{_fmt(xl)}" y1="{_fmt(y)}" x2="{_fmt(xh)}" '
            f'y2="{_fmt(y)}" stroke="{color}" stroke-width="1.4"/>\n'
        )
        for xc in (xl, xh):
            parts.append(
                f'<line x1="{_fmt(xc)}" y1="{_fmt(y - 4.0)}" x2="{_fmt(xc)}" '
                f'y2="{_fmt(y + 4.0)}" stroke="{color}" stroke-width="1.4"/>\n'
            )
        if is_pooled:
            parts.append(
                f'<rect class="pt" x="{_fmt(xp - 4.0)}" y="{_fmt(y - 4.0)}" '
                f'width="8.00" height="8.00" fill="{color}"/>\n'
            )
        else:
            parts.append(
                f'<circle class="pt" cx="{_fmt(xp)}" cy="{_fmt(y)}" r="3.60" '
                f'fill="{color}"/>\n'
            )

    sep_y = top + j * row_h + gap / 2.0
    parts.append(
        f'<line x1="{_fmt(x0)}" y1="{_fmt(sep_y)}" x2="{_fmt(x1)}" y2="{_fmt(sep_y)}" '
        f'stroke="#bbbbbb" stroke-width="0.8"/>\n'
    )
    parts.append(
        f'<line x1="{_fmt(x0)}" y1="{_fmt(axis_y)}" x2="{_fmt(x1)}" y2="{_fmt(axis_y)}" '
        f'stroke="#333333" stroke-width="1"/>\n'
    )
    for v in np.linspace(vmin, vmax, 5):
        xt = to_x(float(v))
        parts.append(
            f'<line x1="{_fmt(xt)}" y1="{_fmt(axis_y)}" x2="{_fmt(xt)}" '
            f'y2="{_fmt(axis_y + 4.0)}" stroke="#333333" stroke-width="1"/>\n'
        )
        parts.append(_text(xt, axis_y + 16.0, f"{v:.3g}", size=10, anchor="middle"))
    parts.append("</svg>\n")
    return "".join(parts)
