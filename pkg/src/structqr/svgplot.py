"""Minimal native SVG line charts (axes, optional log scales, legend).

Deliberately small: the CLI emits convergence and sweep plots without
pulling in a plotting dependency.  Output is deterministic for fixed data.
"""

import math

_COLORS = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


class Chart:
    """One panel: series of (x, y) arrays with a title and axis labels."""

    def __init__(self, title="", xlabel="", ylabel="", xlog=False, ylog=False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.xlog = xlog
        self.ylog = ylog
        self.series = []

    def add(self, label, xs, ys):
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)]
        self.series.append((str(label), pts))
        return self


def _finite(values, log):
    out = [v for v in values if math.isfinite(v) and (not log or v > 0)]
    return out


def _axis_range(values, log):
    if not values:
        return (0.1, 1.0) if log else (0.0, 1.0)
    lo, hi = min(values), max(values)
    if log:
        if lo == hi:
            return lo / 10.0, hi * 10.0
        return lo, hi
    if lo == hi:
        pad = abs(lo) or 1.0
        return lo - 0.1 * pad, hi + 0.1 * pad
    return lo, hi


def _lin_ticks(lo, hi, target=5):
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / max(target, 1)))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= target:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks


def _log_ticks(lo, hi):
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    step = max(1, (hi_e - lo_e) // 8)
    return [10.0**e for e in range(lo_e, hi_e + 1, step)]


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"


def _render_panel(chart, ox, oy, width, height):
    left, right, top, bottom = 64, 16, 28, 44
    pw = width - left - right
    ph = height - top - bottom
    xs_all = _finite([p[0] for _, pts in chart.series for p in pts], chart.xlog)
    ys_all = _finite([p[1] for _, pts in chart.series for p in pts], chart.ylog)
    xlog = chart.xlog and bool(xs_all)
    ylog = chart.ylog and bool(ys_all)
    if chart.xlog and not xs_all:
        xs_all = _finite([p[0] for _, pts in chart.series for p in pts], False)
    if chart.ylog and not ys_all:
        ys_all = _finite([p[1] for _, pts in chart.series for p in pts], False)
    x0, x1 = _axis_range(xs_all, xlog)
    y0, y1 = _axis_range(ys_all, ylog)

    def sx(v):
        if xlog:
            f = (math.log10(v) - math.log10(x0)) / (math.log10(x1) - math.log10(x0))
        else:
            f = (v - x0) / (x1 - x0)
        return ox + left + f * pw

    def sy(v):
        if ylog:
            f = (math.log10(v) - math.log10(y0)) / (math.log10(y1) - math.log10(y0))
        else:
            f = (v - y0) / (y1 - y0)
        return oy + top + (1.0 - f) * ph

    out = []
    out.append(
        f'<rect x="{ox + left}" y="{oy + top}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#333" stroke-width="1"/>'
    )
    if chart.title:
        out.append(
            f'<text x="{ox + left + pw / 2:.1f}" y="{oy + top - 10}" '
            f'text-anchor="middle" font-size="13" font-weight="bold">{chart.title}</text>'
        )
    xticks = _log_ticks(x0, x1) if xlog else _lin_ticks(x0, x1)
    for t in xticks:
        if not (x0 <= t <= x1 * (1 + 1e-12)):
            continue
        px = sx(t)
        out.append(
            f'<line x1="{px:.1f}" y1="{oy + top}" x2="{px:.1f}" '
            f'y2="{oy + top + ph}" stroke="#ddd" stroke-width="0.5"/>'
        )
        out.append(
            f'<text x="{px:.1f}" y="{oy + top + ph + 16}" text-anchor="middle" '
            f'font-size="10">{_fmt(t)}</text>'
        )
    yticks = _log_ticks(y0, y1) if ylog else _lin_ticks(y0, y1)
    for t in yticks:
        if not (y0 <= t <= y1 * (1 + 1e-12) or (not ylog and y0 <= t <= y1)):
            continue
        py = sy(t)
        out.append(
            f'<line x1="{ox + left}" y1="{py:.1f}" x2="{ox + left + pw}" '
            f'y2="{py:.1f}" stroke="#ddd" stroke-width="0.5"/>'
        )
        out.append(
            f'<text x="{ox + left - 6}" y="{py + 3:.1f}" text-anchor="end" '
            f'font-size="10">{_fmt(t)}</text>'
        )
    if chart.xlabel:
        out.append(
            f'<text x="{ox + left + pw / 2:.1f}" y="{oy + top + ph + 34}" '
            f'text-anchor="middle" font-size="11">{chart.xlabel}</text>'
        )
    if chart.ylabel:
        cx, cy = ox + 16, oy + top + ph / 2
        out.append(
            f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {cx} {cy:.1f})">{chart.ylabel}</text>'
        )
    for i, (label, pts) in enumerate(chart.series):
        color = _COLORS[i % len(_COLORS)]
        good = [
            (x, y)
            for x, y in pts
            if math.isfinite(x)
            and math.isfinite(y)
            and (not xlog or x > 0)
            and (not ylog or y > 0)
        ]
        if good:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in good)
            out.append(
                f'<polyline points="{path}" fill="none" stroke="{color}" '
                'stroke-width="1.5"/>'
            )
        ly = oy + top + 14 + 14 * i
        lx = ox + left + pw - 150
        out.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{lx + 24}" y="{ly}" font-size="10">{label}</text>')
    return "\n".join(out)


def render(charts, target, panel_size=(460, 340)):
    """Write charts side by side into one SVG file (or file-like)."""
    pw, ph = panel_size
    width = pw * len(charts)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{ph}" '
        f'viewBox="0 0 {width} {ph}" font-family="sans-serif">',
        f'<rect width="{width}" height="{ph}" fill="white"/>',
    ]
    for i, chart in enumerate(charts):
        parts.append(_render_panel(chart, i * pw, 0, pw, ph))
    parts.append("</svg>\n")
    text = "\n".join(parts)
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w") as fh:
            fh.write(text)
