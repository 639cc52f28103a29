"""Headless SVG charts: per-area bar charts with standard-error bars, and line plots."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .errors import OutputError

_W, _H = 480, 300
_LEFT, _RIGHT, _TOP, _BOTTOM = 56, 16, 32, 48


def _num(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def bar_chart_svg(labels, values, errors, title: str = "", ylabel: str = "score",
                  ymin: float | None = None, ymax: float | None = None) -> str:
    """Vertical bars with symmetric error bars.  Each bar and error bar carries its value as data attributes."""
    labels, values, errors = list(labels), [float(v) for v in values], [float(e) for e in errors]
    if not (len(labels) == len(values) == len(errors)) or not labels:
        raise ValueError("labels, values and errors must be non-empty and of equal length")
    lo = min(0.0, min(v - e for v, e in zip(values, errors))) if ymin is None else ymin
    hi = max(1.0, max(v + e for v, e in zip(values, errors))) if ymax is None else ymax
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def y(v):
        return _TOP + ph * (hi - v) / (hi - lo)

    slot = pw / len(labels)
    bw = slot * 0.6
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_TOP + ph}" stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{_num(y(0.0))}" x2="{_LEFT + pw}" y2="{_num(y(0.0))}" stroke="black"/>',
        f'<text x="14" y="{_TOP + ph / 2}" transform="rotate(-90 14 {_TOP + ph / 2})" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(ylabel)}</text>',
    ]
    for t in range(5):
        v = lo + (hi - lo) * t / 4
        parts.append(f'<text x="{_LEFT - 6}" y="{_num(y(v) + 4)}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_num(v)}</text>')
    for i, (lab, v, e) in enumerate(zip(labels, values, errors)):
        cx = _LEFT + slot * (i + 0.5)
        top, base = min(y(v), y(0.0)), max(y(v), y(0.0))
        parts.append(f'<rect class="bar" data-label="{escape(str(lab))}" data-value="{v!r}" x="{_num(cx - bw / 2)}" '
                     f'y="{_num(top)}" width="{_num(bw)}" height="{_num(base - top)}" fill="#4a72b0"/>')
        parts.append(f'<line class="err" data-label="{escape(str(lab))}" data-se="{e!r}" x1="{_num(cx)}" '
                     f'y1="{_num(y(v - e))}" x2="{_num(cx)}" y2="{_num(y(v + e))}" stroke="black"/>')
        for yy in (y(v - e), y(v + e)):
            parts.append(f'<line x1="{_num(cx - 5)}" y1="{_num(yy)}" x2="{_num(cx + 5)}" y2="{_num(yy)}" stroke="black"/>')
        parts.append(f'<text x="{_num(cx)}" y="{_TOP + ph + 16}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{escape(str(lab))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart_svg(xs, series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Polylines sharing an x axis; ``series`` maps a name to y values."""
    xs = [float(x) for x in xs]
    if not xs or not series:
        raise ValueError("need at least one point and one series")
    ys = [float(v) for vals in series.values() for v in vals if v == v]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM
    colors = ("#4a72b0", "#c0504d", "#4f9a4f", "#8064a2")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{_LEFT + pw / 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">'
        f'{escape(xlabel)}</text>',
        f'<text x="{_LEFT - 6}" y="{_TOP + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{_num(y1)}</text>',
        f'<text x="{_LEFT - 6}" y="{_TOP + ph}" text-anchor="end" font-family="sans-serif" font-size="10">{_num(y0)}</text>',
        f'<text x="14" y="{_TOP + ph / 2}" transform="rotate(-90 14 {_TOP + ph / 2})" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(ylabel)}</text>',
    ]
    for n, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{_num(_LEFT + pw * (x - x0) / (x1 - x0))},{_num(_TOP + ph * (y1 - float(v)) / (y1 - y0))}"
                       for x, v in zip(xs, vals) if v == v)
        color = colors[n % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{_LEFT + 8}" y="{_TOP + 14 + 14 * n}" font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report_charts(report, out) -> list[Path]:
    """One ``chart_<area>.svg`` per area: score per layer with SE bars."""
    out = Path(out)
    paths = []
    for area in report.areas:
        rows = [r for r in report.rows if r["area"] == area]
        svg = bar_chart_svg([r["layer"] for r in rows], [r["score"] for r in rows], [r["se"] for r in rows],
                            title=f"Predictivity, {area}", ylabel="median held-out r")
        path = out / f"chart_{area}.svg"
        try:
            path.write_text(svg)
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths
