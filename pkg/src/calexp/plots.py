"""SVG renderings of explanations: regular, uncertainty and counterfactual bar plots.

Output is plain SVG 1.1 built from strings with fixed number formatting, so
identical explanations always render to identical bytes. Each rendered rule
is one ``<g class="rule">`` element, in explanation order.
"""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

from .explainer import COUNTERFACTUAL, Explanation

__all__ = ["render", "render_regular", "render_uncertainty", "render_counterfactual", "KINDS"]

KINDS = ("regular", "uncertainty", "counterfactual")

CLASS0 = "#1f77b4"
CLASS1 = "#d62728"
SHADE_OPACITY = 0.35
NEUTRAL = "#7f7f7f"

WIDTH = 820
LABEL_X = 10
PLOT_X = 280
PLOT_W = 400
VALUE_X = PLOT_X + PLOT_W + 15
ROW_H = 28
BAR_H = 16
HEADER_H = 2 * ROW_H + 20


def _f(v: float) -> str:
    return f"{v:.2f}"


def _attrs(**kw) -> str:
    return " ".join(f"{k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in kw.items())


def _rect(cls: str, x0: float, x1: float, y: float, h: float, fill: str, opacity: float | None = None) -> str:
    lo, hi = min(x0, x1), max(x0, x1)
    extra = {} if opacity is None else {"fill_opacity": f"{opacity:.2f}"}
    return f"<rect {_attrs(class_=cls, x=_f(lo), y=_f(y), width=_f(hi - lo), height=_f(h), fill=fill, **extra)}/>"


def _text(cls: str, x: float, y: float, s: str, anchor: str = "start") -> str:
    return (f"<text {_attrs(class_=cls, x=_f(x), y=_f(y), text_anchor=anchor)} "
            f"font-family=\"sans-serif\" font-size=\"12\">{escape(s)}</text>")


def _fmt_value(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def _header(expl: Explanation, shaded: bool) -> list[str]:
    """Two probability bars on a [0, 1] axis: class 0 gets ``1 - p``, class 1 gets ``p``."""
    iv = expl.prediction
    out = ['<g class="header">']
    rows = ((0, 1.0 - iv.p, 1.0 - iv.p1, 1.0 - iv.p0, CLASS0), (1, iv.p, iv.p0, iv.p1, CLASS1))
    for i, (cls, prob, lo, hi, colour) in enumerate(rows):
        y = 10 + i * ROW_H
        out.append(f'<g class="prob" data-class="{cls}">')
        out.append(_rect("bar", PLOT_X, PLOT_X + prob * PLOT_W, y, BAR_H, colour))
        if shaded and hi > lo:
            out.append(_rect("interval", PLOT_X + lo * PLOT_W, PLOT_X + hi * PLOT_W, y, BAR_H, colour,
                             SHADE_OPACITY))
        out.append(_text("label", LABEL_X, y + 12, f"P(y={cls})"))
        out.append(_text("value", VALUE_X, y + 12, f"{prob:.3f}"))
        out.append("</g>")
    out.append("</g>")
    return out


def _document(height: float, parts: list[str], kind: str) -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" '
            f'height="{_f(height)}" viewBox="0 0 {WIDTH} {_f(height)}" data-kind="{kind}">')
    return "\n".join([head, *parts, "</svg>"]) + "\n"


def _rules(expl: Explanation, max_rules: int | None):
    return list(expl.rules if max_rules is None else expl.rules[:max_rules])


def _factual(expl: Explanation, max_rules: int | None, uncertainty: bool) -> str:
    if expl.mode == COUNTERFACTUAL:
        raise ValueError("factual plots need a factual explanation")
    p = expl.prediction.p
    # weights live in [p - 1, p]
    lo_axis = p - 1.0

    def x(w):
        return PLOT_X + (w - lo_axis) * PLOT_W

    rules = _rules(expl, max_rules)
    body_top = HEADER_H
    height = body_top + max(len(rules), 1) * ROW_H + 20
    parts = _header(expl, uncertainty)
    parts.append('<g class="body">')
    if uncertainty:
        iv = expl.prediction
        parts.append(_rect("prediction-interval", x(p - iv.p1), x(p - iv.p0), body_top,
                           len(rules) * ROW_H, NEUTRAL, SHADE_OPACITY))
    for i, r in enumerate(rules):
        y = body_top + i * ROW_H + (ROW_H - BAR_H) / 2
        colour = CLASS1 if r.weights.w > 0 else CLASS0
        parts.append(f"<g {_attrs(class_='rule', data_index=i, data_feature=r.feature)}>")
        if uncertainty:
            lo, hi = r.weights.low, r.weights.high
            if lo <= 0.0 <= hi:
                solid = 0.0
            else:
                solid = lo if lo > 0 else hi
            parts.append(_rect("weight", x(0.0), x(solid), y, BAR_H, colour))
            if hi > lo:
                parts.append(_rect("interval", x(lo), x(hi), y, BAR_H, colour, SHADE_OPACITY))
        else:
            parts.append(_rect("weight", x(0.0), x(r.weights.w), y, BAR_H, colour))
        parts.append(_text("label", LABEL_X, y + 12, r.condition))
        parts.append(_text("value", VALUE_X, y + 12, _fmt_value(r.instance_value)))
        parts.append("</g>")
    parts.append(f"<line {_attrs(class_='baseline', x1=_f(x(0.0)), y1=_f(body_top), x2=_f(x(0.0)), y2=_f(height - 20))} "
                 f'stroke="black" stroke-width="2"/>')
    parts.append("</g>")
    return _document(height, parts, "uncertainty" if uncertainty else "regular")


def render_regular(expl: Explanation, max_rules: int | None = None) -> str:
    """Signed weight bars from a baseline at the calibrated estimate; red supports class 1."""
    return _factual(expl, max_rules, uncertainty=False)


def render_uncertainty(expl: Explanation, max_rules: int | None = None) -> str:
    """Weight bars with their ``[w_low, w_high]`` interval shaded, and VA-interval shading in the header.

    The solid segment runs from the baseline to the bound nearer to it; when
    the interval straddles the baseline only the shaded segment is drawn.
    """
    return _factual(expl, max_rules, uncertainty=True)


def render_counterfactual(expl: Explanation, max_rules: int | None = 10) -> str:
    """Expected probability interval of each counterfactual rule on a [0, 1] axis."""
    if expl.mode != COUNTERFACTUAL:
        raise ValueError("counterfactual plots need a counterfactual explanation")
    rules = _rules(expl, max_rules)

    def x(v):
        return PLOT_X + v * PLOT_W

    body_top = HEADER_H
    height = body_top + max(len(rules), 1) * ROW_H + 20
    parts = _header(expl, True)
    parts.append('<g class="body">')
    for i, r in enumerate(rules):
        y = body_top + i * ROW_H + (ROW_H - BAR_H) / 2
        e = r.expected
        colour = CLASS1 if e.p > 0.5 else CLASS0
        parts.append(f"<g {_attrs(class_='rule', data_index=i, data_feature=r.feature)}>")
        parts.append(_rect("interval", x(e.p0), x(e.p1), y, BAR_H, colour, SHADE_OPACITY))
        parts.append(f"<circle {_attrs(class_='marker', cx=_f(x(e.p)), cy=_f(y + BAR_H / 2), r='4')} fill=\"{colour}\"/>")
        parts.append(_text("label", LABEL_X, y + 12, r.condition))
        parts.append(_text("value", VALUE_X, y + 12, _fmt_value(r.instance_value)))
        parts.append("</g>")
    xp = x(expl.prediction.p)
    parts.append(f"<line {_attrs(class_='reference', x1=_f(xp), y1=_f(body_top), x2=_f(xp), y2=_f(height - 20))} "
                 f'stroke="black" stroke-width="2"/>')
    parts.append("</g>")
    return _document(height, parts, "counterfactual")


def render(expl: Explanation, kind: str, max_rules: int | None = None) -> str:
    if kind == "regular":
        return render_regular(expl, max_rules)
    if kind == "uncertainty":
        return render_uncertainty(expl, max_rules)
    if kind == "counterfactual":
        return render_counterfactual(expl, 10 if max_rules is None else max_rules)
    raise ValueError(f"unknown plot kind {kind!r}")
