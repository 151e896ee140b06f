"""Minimal self-contained SVG line charts for phase-transition results."""
import math
from xml.sax.saxutils import escape

import numpy as np

from .bench import median_error, success_probability
from .errors import InvalidArgument

__all__ = ["render_svg", "emit_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 150, 40, 60


def _num(x):
    return "%.2f" % x


def render_svg(series, title, xlabel, ylabel, ylim, log_y=False):
    """SVG 1.1 document with one polyline per entry of ``series``.

    ``series`` maps a label to a list of ``(x, y)`` points. The x axis is
    logarithmic; ``ylim`` bounds the y axis and points outside it are clipped.
    """
    xs = sorted({x for pts in series.values() for x, _ in pts})
    if not xs:
        raise InvalidArgument("nothing to plot")
    x0, x1 = math.log(xs[0]), math.log(xs[-1])
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    y0, y1 = (math.log10(ylim[0]), math.log10(ylim[1])) if log_y else ylim
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(x):
        return _LEFT + pw * (math.log(x) - x0) / (x1 - x0)

    def py(y):
        y = min(max(y, ylim[0]), ylim[1])
        y = math.log10(y) if log_y else y
        return _TOP + ph * (1 - (y - y0) / (y1 - y0))

    out = ['<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
           '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="%d" height="%d" '
           'viewBox="0 0 %d %d" font-family="sans-serif" font-size="12">' % (_W, _H, _W, _H),
           '<title>%s</title>' % escape(title),
           '<rect x="0" y="0" width="%d" height="%d" fill="white"/>' % (_W, _H),
           '<text x="%s" y="22" text-anchor="middle" font-size="14">%s</text>'
           % (_num(_LEFT + pw / 2), escape(title)),
           '<rect x="%d" y="%d" width="%d" height="%d" fill="none" stroke="black"/>'
           % (_LEFT, _TOP, pw, ph)]
    for x in xs:
        out.append('<line x1="%s" y1="%d" x2="%s" y2="%d" stroke="black"/>'
                   % (_num(px(x)), _TOP + ph, _num(px(x)), _TOP + ph + 5))
        out.append('<text x="%s" y="%d" text-anchor="middle">%d</text>'
                   % (_num(px(x)), _TOP + ph + 18, x))
    if log_y:
        ticks = [10.0 ** k for k in range(int(math.floor(y0)), int(math.ceil(y1)) + 1)]
        labels = ["1e%d" % round(math.log10(t)) for t in ticks]
    else:
        ticks = list(np.linspace(ylim[0], ylim[1], 6))
        labels = ["%.1f" % t for t in ticks]
    for t, lab in zip(ticks, labels):
        out.append('<line x1="%d" y1="%s" x2="%d" y2="%s" stroke="#dddddd"/>'
                   % (_LEFT, _num(py(t)), _LEFT + pw, _num(py(t))))
        out.append('<text x="%d" y="%s" text-anchor="end">%s</text>'
                   % (_LEFT - 6, _num(py(t) + 4), lab))
    out.append('<text x="%s" y="%d" text-anchor="middle">%s</text>'
               % (_num(_LEFT + pw / 2), _H - 15, escape(xlabel)))
    out.append('<text x="18" y="%s" text-anchor="middle" transform="rotate(-90 18 %s)">%s</text>'
               % (_num(_TOP + ph / 2), _num(_TOP + ph / 2), escape(ylabel)))
    for i, (label, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join("%s,%s" % (_num(px(x)), _num(py(y))) for x, y in pts)
        out.append('<polyline points="%s" fill="none" stroke="%s" stroke-width="2"/>'
                   % (coords, color))
        for x, y in pts:
            out.append('<circle cx="%s" cy="%s" r="3" fill="%s"/>'
                       % (_num(px(x)), _num(py(y)), color))
        ly = _TOP + 10 + 20 * i
        out.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="%s" stroke-width="2"/>'
                   % (_W - _RIGHT + 15, ly, _W - _RIGHT + 40, ly, color))
        out.append('<text x="%d" y="%d">%s</text>' % (_W - _RIGHT + 46, ly + 4, escape(label)))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(results, path, plot="success", threshold=0.05):
    """Render success probability or median normalized error versus ``n``."""
    if not results:
        raise InvalidArgument("no results to plot")
    solvers = list(dict.fromkeys(r.solver for r in results))
    grid = sorted({r.n for r in results})
    series = {}
    for solver in solvers:
        ns = [n for n in grid if any(r.solver == solver and r.n == n for r in results)]
        if plot == "success":
            series[solver] = [(n, success_probability(results, solver, n, threshold)) for n in ns]
        elif plot == "error":
            series[solver] = [(n, median_error(results, solver, n)) for n in ns]
        else:
            raise InvalidArgument("plot must be 'success' or 'error'")
    if plot == "success":
        svg = render_svg(series, "Probability of recovery", "number of samples n",
                         "success probability", (0.0, 1.0))
    else:
        svg = render_svg(series, "Median normalized error", "number of samples n",
                         "||beta_hat - beta|| / ||beta||", (1e-6, 10.0), log_y=True)
    with open(path, "w") as fh:
        fh.write(svg)
