"""Fixed-width text tables for fits, descent paths, canonical analysis and budgets."""

from __future__ import annotations

import numpy as np

from .campaign import BudgetReport, CampaignState
from .regress import RegressionFit

FIT_COLUMNS = ("Variable", "Parameter", "STD Error", "t Value", "P-value")


def _table(header, rows) -> str:
    cells = [list(header)] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for r in cells:
        first = r[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join([first] + rest).rstrip())
    return "\n".join(lines) + "\n"


def _num(v, fmt: str) -> str:
    if v is None:
        return "-"
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, fmt)


def render_fit(fit: RegressionFit) -> str:
    rows = []
    for i, name in enumerate(fit.term_names):
        inf = fit.has_inference
        rows.append([
            name,
            _num(fit.coefficients[i], ".4f"),
            _num(fit.standard_errors[i] if inf else None, ".4f"),
            _num(fit.t_values[i] if inf else None, ".2f"),
            _num(fit.p_values[i] if inf else None, ".4f"),
        ])
    return _table(FIT_COLUMNS, rows)


def parse_fit_table(text: str) -> RegressionFit:
    """Inverse of :func:`render_fit` at the rendered precision."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    body = lines[1:]
    names, cols = [], [[], [], [], []]
    for ln in body:
        parts = ln.split()
        names.append(parts[0])
        for j, tok in enumerate(parts[1:5]):
            cols[j].append(None if tok == "-" else float(tok))
    has_inf = bool(body) and cols[1][0] is not None
    arr = [np.array(c, dtype=float) for c in cols]
    p = max(len(names) - 1, 0)
    return RegressionFit(order="first", term_names=names, coefficients=arr[0],
                         standard_errors=arr[1] if has_inf else None,
                         t_values=arr[2] if has_inf else None,
                         p_values=arr[3] if has_inf else None, n_factors=p,
                         factor_names=names[1:])


def _fmt_setting(v) -> str:
    if isinstance(v, int):
        return str(v)
    return f"{float(v):.4g}"


def render_descent(state: CampaignState) -> str:
    names = state.config.names
    rows = []
    for st, rec in zip(state.descent_steps, state.phase_runs("Descent")):
        rows.append([f"{st.t:g}"] + [_fmt_setting(st.decoded[n]) for n in names]
                    + ["pending" if rec.loss is None else f"{rec.loss:.6f}"])
    head = f"path of steepest descent (||b|| = {state.descent_steps[0].s:.4f})\n" if state.descent_steps else ""
    return head + _table(["t"] + names + ["Loss"], rows)


def render_stationary(state: CampaignState) -> str:
    st = state.stationary
    out = [f"classification: {st.classification}",
           "eigenvalues: " + ", ".join(f"{v:.6g}" for v in st.eigenvalues)]
    if st.x_o_coded is None:
        out.append("no stationary point (degenerate surface)")
        return "\n".join(out) + "\n"
    out.append("stationary point (coded): " + ", ".join(f"{v:.4f}" for v in st.x_o_coded))
    if st.outside_region:
        out.append("note: stationary point lies outside the coded design region")
    names = state.config.names
    row = [_fmt_setting(st.x_o_decoded[n]) for n in names] + [f"{st.predicted_response:.6f}"]
    return "\n".join(out) + "\n" + _table(names + ["Predicted Loss"], [row])


def render_budget(b: BudgetReport) -> str:
    rows = [
        ["screening", f"2^{b.k}*{b.n_c} + {b.n_01}", 2 ** b.k * b.n_c + b.n_01],
        ["descent", f"n_t = {b.n_t}", b.n_t],
        ["ccd", f"2^({b.p}-{b.f})*{b.n_c_prime} + 2*{b.p}*{b.n_s} + {b.n_02}",
         2 ** (b.p - b.f) * b.n_c_prime + 2 * b.p * b.n_s + b.n_02],
        ["total", "", b.total],
        ["confirmation", "(reported separately)", b.confirmation],
    ]
    gs = [[f"GS {lv}-level", f"{lv}^{b.k}", n] for lv, n in b.gs_counts.items()]
    return _table(["Phase", "Formula", "Runs"], rows + gs)


def render_confirmation(state: CampaignState) -> str:
    c = state.confirmation
    if c is None:
        return "no confirmation yet\n"
    names = state.config.names
    row = ([c["classification"], c["source"]] + [_fmt_setting(c["settings"][n]) for n in names]
           + [_num(c["predicted"], ".6f"), _num(c["observed_mean"], ".6f"), _num(c["historic_min"], ".6f")])
    return _table(["Surface", "Point"] + names + ["Predicted Loss", "Observed Loss", "Historic Min"], [row])


def render_report(state: CampaignState, b: BudgetReport) -> str:
    parts = [f"phase: {state.phase}", "", render_budget(b)]
    best = state.historic_best()
    if best is not None:
        names = state.config.names
        parts.append("best so far (run %d, loss %.6f): %s" % (
            best.run_id, best.loss, ", ".join(f"{n}={_fmt_setting(best.decoded[n])}" for n in names)))
    if state.confirmation is not None:
        parts += ["", render_confirmation(state)]
    return "\n".join(parts).rstrip("\n") + "\n"
