"""Deterministic SVG renderings: forest plots and trend/bubble plots.

Markup is written by hand so identical inputs give byte-identical files.
Coordinates are rounded to 0.01 px.  The root element carries the linear
data-to-pixel map (``data-x0``/``data-x1``/``data-px0``/``data-px1``) so
that positions can be read back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from metareg.inference import FitResult, linear_combination, shrinkage

Z975 = 1.959963984540054
PALETTE = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#2c3e50")


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _num(v: float) -> str:
    return f"{v:.4f}".replace("-", "−")


def _nice_ticks(lo: float, hi: float, n: int = 6) -> np.ndarray:
    span = hi - lo
    raw = span / max(n - 1, 1)
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


@dataclass
class ForestPlotSpec:
    """Rows of a forest plot beyond the per-study lines.

    ``mean_rows`` default to one row per coefficient when empty.
    """

    mean_rows: Mapping[str, Sequence[float]] = field(default_factory=dict)
    predict_rows: Mapping[str, Sequence[float]] = field(default_factory=dict)
    xlabel: str = "effect"
    level: float = 0.95
    show_design: bool = True

    def resolved_mean_rows(self, fit: FitResult) -> dict[str, np.ndarray]:
        if self.mean_rows:
            return {k: np.asarray(v, dtype=float) for k, v in self.mean_rows.items()}
        eye = np.eye(fit.problem.d)
        return {name: eye[j] for j, name in enumerate(fit.column_names)}

    def row_count(self, fit: FitResult) -> int:
        return fit.problem.k + len(self.resolved_mean_rows(fit)) + len(self.predict_rows) + 1


class _Svg:
    def __init__(self, width, height, attrs=""):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="Helvetica, Arial, sans-serif" '
            f'font-size="12"{attrs}>',
            f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="white"/>',
        ]

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, anchor="start", cls=None, weight=None, size=None):
        extra = f' class="{cls}"' if cls else ""
        if weight:
            extra += f' font-weight="{weight}"'
        if size:
            extra += f' font-size="{size}"'
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{extra}>{escape(s)}</text>')

    def line(self, x1, y1, x2, y2, stroke="black", width=1.0, cls=None, dash=None):
        extra = f' class="{cls}"' if cls else ""
        if dash:
            extra += f' stroke-dasharray="{dash}"'
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{stroke}" stroke-width="{width:g}"{extra}/>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _interval(mix, level):
    lo, hi = mix.interval(level, "shortest")
    return float(mix.quantile(0.5)), lo, hi


def render_forest_svg(fit: FitResult, spec: ForestPlotSpec | None, path=None) -> str:
    """Forest plot: data, shrinkage intervals, regressors, summary rows, tau."""
    spec = spec or ForestPlotSpec()
    p = fit.problem
    k, d = p.k, p.d
    y, s = p.dataset.y, p.dataset.sigma
    level = spec.level
    zq = Z975 if level == 0.95 else float(norm.ppf(0.5 + level / 2))
    study_ci = np.column_stack([y - zq * s, y + zq * s])
    shrink = [_interval(shrinkage(fit, i), level) for i in range(k)]
    mean_rows = spec.resolved_mean_rows(fit)
    summaries = [(n, "mean", _interval(linear_combination(fit, x, True), level))
                 for n, x in mean_rows.items()]
    summaries += [(n, "prediction", _interval(linear_combination(fit, np.asarray(x, float), False), level))
                  for n, x in spec.predict_rows.items()]

    all_vals = np.concatenate([study_ci.ravel(), np.ravel([r[2][1:] for r in summaries]),
                               np.ravel([sh[1:] for sh in shrink])])
    lo, hi = float(all_vals.min()), float(all_vals.max())
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad

    row_h = 22.0
    label_w = 170.0
    reg_w = 70.0 if spec.show_design else 0.0
    plot_x0 = 20 + label_w + reg_w * d + 10
    plot_w = 360.0
    plot_x1 = plot_x0 + plot_w
    est_w = 210.0
    width = plot_x1 + est_w
    top = 40.0
    n_rows = k + len(summaries)
    height = top + row_h * (n_rows + 1) + 70

    def px(v):
        return plot_x0 + (v - lo) / (hi - lo) * plot_w

    svg = _Svg(width, height,
               f' class="forest" data-x0="{lo!r}" data-x1="{hi!r}" '
               f'data-px0="{plot_x0!r}" data-px1="{plot_x1!r}"')
    svg.text(20, top - 14, "study", weight="bold")
    if spec.show_design:
        for j, name in enumerate(p.design.column_names):
            svg.text(20 + label_w + reg_w * (j + 0.5), top - 14, name, anchor="middle", weight="bold", size=10)
    svg.text(plot_x1 + 10, top - 14, f"estimate {int(round(level * 100))}% CI", weight="bold")

    for i in range(k):
        yc = top + row_h * (i + 0.5)
        svg.add(f'<g class="row study" data-index="{i}">')
        svg.text(20, yc + 4, p.dataset.labels[i])
        if spec.show_design:
            for j in range(d):
                svg.text(20 + label_w + reg_w * (j + 0.5), yc + 4, f"{p.design.entries[i, j]:g}", anchor="middle")
        svg.line(px(study_ci[i, 0]), yc - 3, px(study_ci[i, 1]), yc - 3, cls="study-ci")
        side = 5.0
        svg.add(f'<rect class="estimate" x="{_f(px(y[i]) - side / 2)}" y="{_f(yc - 3 - side / 2)}" '
                f'width="{_f(side)}" height="{_f(side)}" fill="black"/>')
        med, slo, shi = shrink[i]
        svg.add(f'<line class="shrinkage" x1="{_f(px(slo))}" y1="{_f(yc + 4)}" x2="{_f(px(shi))}" '
                f'y2="{_f(yc + 4)}" stroke="#7f8fa6" stroke-width="3" stroke-opacity="0.6"/>')
        svg.add(f'<circle class="shrinkage-median" cx="{_f(px(med))}" cy="{_f(yc + 4)}" r="2.5" fill="#7f8fa6"/>')
        svg.text(plot_x1 + 10, yc + 4, f"{_num(y[i])} [{_num(study_ci[i, 0])}, {_num(study_ci[i, 1])}]")
        svg.add("</g>")

    sep = top + row_h * k
    svg.line(20, sep, width - 10, sep, stroke="#999999", width=0.5)
    for r, (name, kind, (med, slo, shi)) in enumerate(summaries):
        yc = sep + row_h * (r + 0.5) + 4
        colour = "#c0392b" if kind == "mean" else "#1f4e9c"
        svg.add(f'<g class="row summary {kind}" data-name="{escape(name)}" data-median="{med!r}" '
                f'data-lower="{slo!r}" data-upper="{shi!r}">')
        svg.text(20, yc + 4, name, cls="summary-label")
        if kind == "mean":
            svg.add(f'<polygon class="interval" points="{_f(px(slo))},{_f(yc)} {_f(px(med))},{_f(yc - 6)} '
                    f'{_f(px(shi))},{_f(yc)} {_f(px(med))},{_f(yc + 6)}" fill="{colour}" fill-opacity="0.8"/>')
        else:
            svg.add(f'<rect class="interval" x="{_f(px(slo))}" y="{_f(yc - 4)}" width="{_f(px(shi) - px(slo))}" '
                    f'height="8" fill="{colour}" fill-opacity="0.5"/>')
        svg.add(f'<circle class="median" cx="{_f(px(med))}" cy="{_f(yc)}" r="2" fill="white"/>')
        svg.text(plot_x1 + 10, yc + 4, f"{_num(med)} [{_num(slo)}, {_num(shi)}]")
        svg.add("</g>")

    axis_y = sep + row_h * len(summaries) + 14
    svg.line(plot_x0, axis_y, plot_x1, axis_y, cls="axis")
    for t in _nice_ticks(lo, hi):
        svg.line(px(t), axis_y, px(t), axis_y + 4)
        svg.text(px(t), axis_y + 16, f"{t:g}", anchor="middle", size=10)
    if lo < 0 < hi:
        svg.line(px(0), top - 6, px(0), axis_y, stroke="#999999", width=0.5, dash="3,3")
    svg.text((plot_x0 + plot_x1) / 2, axis_y + 32, spec.xlabel, anchor="middle")

    tau = fit.summary.column("tau")
    footer = (f"Heterogeneity (tau): {_num(tau['median'])} "
              f"[{_num(tau['95% lower'])}, {_num(tau['95% upper'])}]")
    svg.add('<g class="row footer">')
    svg.text(20, axis_y + 32, footer, cls="tau-summary")
    svg.add("</g>")
    out = svg.render()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(out)
    return out


@dataclass
class TrendLine:
    """One fitted curve: coefficient rows evaluated along covariable values."""

    name: str
    xs: np.ndarray
    rows: np.ndarray  # (n, d)


def trend_lines(fit: FitResult, covariable: int | str, values: Sequence[float],
                templates: Mapping[str, Sequence[float | None]] | None = None) -> list[TrendLine]:
    """Coefficient rows for each line; ``None`` in a template marks the slot
    that receives the covariable value.  The default template is the
    intercept (first column) set to 1 with the covariable slot filled."""
    d = fit.problem.d
    xs = np.asarray(values, dtype=float)
    if not templates:
        j = fit.problem.design.column_index(covariable)
        tmpl = [0.0] * d
        tmpl[0] = 1.0
        tmpl[j] = None
        templates = {"mean": tmpl}
    lines = []
    for name, tmpl in templates.items():
        if len(tmpl) != d:
            raise ValueError(f"line {name!r}: template needs {d} entries")
        slots = [i for i, v in enumerate(tmpl) if v is None]
        if not slots:
            raise ValueError(f"line {name!r}: no covariable slot in template")
        base = np.array([0.0 if v is None else float(v) for v in tmpl])
        rows = np.tile(base, (xs.size, 1))
        for sl in slots:
            rows[:, sl] = xs
        lines.append(TrendLine(name, xs, rows))
    return lines


def render_trend_svg(
    fit: FitResult,
    covariable: int | str | Sequence[int | str],
    x_rows: Sequence[float] | Sequence[TrendLine],
    path=None,
    *,
    bubble: bool = False,
    groups: Sequence[int] | None = None,
    level: float = 0.95,
    xlabel: str | None = None,
    ylabel: str = "estimate",
) -> str:
    """Studies against a covariable with median lines and interval bands.

    ``covariable`` names the design column(s) holding the study positions
    (several columns are summed).  ``x_rows`` is either a list of covariable
    values or prepared :class:`TrendLine` objects.
    """
    p = fit.problem
    cov_keys = [covariable] if isinstance(covariable, (int, str)) else list(covariable)
    if not cov_keys:
        raise ValueError("no continuous covariable designated")
    idx = [p.design.column_index(c) for c in cov_keys]
    sx = p.design.entries[:, idx].sum(axis=1)
    y, s = p.dataset.y, p.dataset.sigma
    if len(x_rows) == 0:
        raise ValueError("no covariable values to plot")
    if isinstance(x_rows[0], TrendLine):
        lines = list(x_rows)
    else:
        lines = trend_lines(fit, idx[0], x_rows)

    bands = []
    for ln in lines:
        mean_q, pred_q = [], []
        for row in ln.rows:
            mm = linear_combination(fit, row, True)
            pm = linear_combination(fit, row, False)
            mean_q.append(_interval(mm, level))
            pred_q.append(_interval(pm, level))
        bands.append((ln, np.array(mean_q), np.array(pred_q)))

    xs_all = np.concatenate([sx] + [ln.xs for ln in lines])
    ys_all = np.concatenate([y - Z975 * s, y + Z975 * s] + [b[2].ravel() for b in bands])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    ypad = 0.05 * (y_hi - y_lo if y_hi > y_lo else 1.0)
    y_lo, y_hi = y_lo - ypad, y_hi + ypad
    width, height = 640.0, 460.0
    X0, X1, Y0, Y1 = 70.0, width - 150.0, height - 60.0, 30.0

    def px(v):
        return X0 + (v - x_lo) / (x_hi - x_lo) * (X1 - X0)

    def py(v):
        return Y0 + (v - y_lo) / (y_hi - y_lo) * (Y1 - Y0)

    svg = _Svg(width, height,
               f' class="trend" data-x0="{x_lo!r}" data-x1="{x_hi!r}" data-px0="{X0!r}" '
               f'data-px1="{X1!r}" data-y0="{y_lo!r}" data-y1="{y_hi!r}" '
               f'data-py0="{Y0!r}" data-py1="{Y1!r}"')
    for b, (ln, mq, pq) in enumerate(bands):
        colour = PALETTE[b % len(PALETTE)]
        for kind, q, opacity in (("prediction", pq, 0.15), ("mean", mq, 0.3)):
            if ln.xs.size == 1:
                svg.add(f'<line class="band {kind}" data-line="{escape(ln.name)}" x1="{_f(px(ln.xs[0]))}" '
                        f'y1="{_f(py(q[0, 1]))}" x2="{_f(px(ln.xs[0]))}" y2="{_f(py(q[0, 2]))}" '
                        f'stroke="{colour}" stroke-width="{6 if kind == "prediction" else 3}" '
                        f'stroke-opacity="{opacity * 2:g}"/>')
                continue
            upper = " ".join(f"{_f(px(x))},{_f(py(v))}" for x, v in zip(ln.xs, q[:, 2]))
            lower = " ".join(f"{_f(px(x))},{_f(py(v))}" for x, v in zip(ln.xs[::-1], q[::-1, 1]))
            svg.add(f'<polygon class="band {kind}" data-line="{escape(ln.name)}" points="{upper} {lower}" '
                    f'fill="{colour}" fill-opacity="{opacity:g}" stroke="none"/>')
        pts = " ".join(f"{_f(px(x))},{_f(py(v))}" for x, v in zip(ln.xs, mq[:, 0]))
        svg.add(f'<polyline class="median-line" data-line="{escape(ln.name)}" points="{pts}" '
                f'fill="none" stroke="{colour}" stroke-width="1.5"/>')

    grp = np.zeros(p.k, dtype=int) if groups is None else np.asarray(groups, dtype=int)
    for i in range(p.k):
        colour = PALETTE[grp[i] % len(PALETTE)] if groups is not None else "black"
        if bubble:
            r = 2.0 + 3.0 / s[i]
            r = min(r, 25.0)
            svg.add(f'<circle class="study bubble" data-index="{i}" cx="{_f(px(sx[i]))}" cy="{_f(py(y[i]))}" '
                    f'r="{_f(r)}" fill="none" stroke="{colour}"/>')
        else:
            svg.line(px(sx[i]), py(y[i] - Z975 * s[i]), px(sx[i]), py(y[i] + Z975 * s[i]),
                     stroke=colour, cls="study-ci")
            svg.add(f'<circle class="study" data-index="{i}" cx="{_f(px(sx[i]))}" cy="{_f(py(y[i]))}" '
                    f'r="2.5" fill="{colour}"/>')

    svg.line(X0, Y0, X1, Y0, cls="axis")
    svg.line(X0, Y0, X0, Y1, cls="axis")
    for t in _nice_ticks(x_lo, x_hi):
        svg.line(px(t), Y0, px(t), Y0 + 4)
        svg.text(px(t), Y0 + 16, f"{t:g}", anchor="middle", size=10)
    for t in _nice_ticks(y_lo, y_hi):
        svg.line(X0 - 4, py(t), X0, py(t))
        svg.text(X0 - 6, py(t) + 3, f"{t:g}", anchor="end", size=10)
    svg.text((X0 + X1) / 2, height - 20, xlabel or " + ".join(p.design.column_names[j] for j in idx),
             anchor="middle")
    svg.add(f'<text x="18" y="{_f((Y0 + Y1) / 2)}" text-anchor="middle" '
            f'transform="rotate(-90 18 {_f((Y0 + Y1) / 2)})">{escape(ylabel)}</text>')
    for b, (ln, _, _) in enumerate(bands):
        colour = PALETTE[b % len(PALETTE)]
        ly = Y1 + 16 * b + 10
        svg.add(f'<rect x="{_f(X1 + 15)}" y="{_f(ly - 8)}" width="10" height="10" fill="{colour}"/>')
        svg.text(X1 + 30, ly + 1, ln.name, size=11)
    out = svg.render()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(out)
    return out
