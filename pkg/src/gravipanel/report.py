"""Publication-style table renderers: coefficient tables with significance
stars, unit-root summaries, and the FE-vs-RE comparison block.

Markdown tables are pipe-delimited; every markdown table has a CSV mirror
with one datum per cell.  Rounding is half away from zero at the printed
precision (3 decimals for coefficients, 4 for test statistics), and
rendering the same inputs twice yields byte-identical text.
"""

from __future__ import annotations

import csv
import io
import math
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .diagnostics import TestResult
from .estimators import EstimationResult, significance_stars
from .unitroot import FisherResult, IpsResult

METHOD_LABELS = {
    "pooled_ols": "Pooled OLS",
    "fixed_effects": "Fixed effects",
    "random_effects": "Random effects",
    "iv_gmm": "GMM",
}

NPD_WARNING = "(V_b-V_B is not positive definite)"


def fmt_fixed(value: float, places: int) -> str:
    """Fixed-point formatting with ties rounded away from zero."""
    quantum = Decimal(1).scaleb(-places)
    text = str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))
    if text.startswith("-") and float(text) == 0.0:
        text = text[1:]
    return text


def fmt_g9(value: float) -> str:
    """Up to 7 significant digits, shrunk until the text fits 9 characters.

    Matches the column formatting of standard FE-vs-RE comparison blocks.
    NaN renders as "." (a standard-error slot with no valid value).
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "."
    for precision in range(7, 0, -1):
        text = f"{value:.{precision}g}"
        if len(text) <= 9:
            return text
    return f"{value:.1g}"


def _stars_from_p(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def _coef_cell(result: EstimationResult, name: str) -> str:
    if name not in result.coefficients:
        return ""
    coef = result.coefficients[name]
    se = result.std_errors[name]
    cell = f"{fmt_fixed(coef, 3)} ({fmt_fixed(se, 3)})"
    stars = significance_stars(coef, se)
    return f"{cell} {stars}" if stars else cell


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("| " + " | ".join("---" for _ in header) + " |")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _coefficient_rows(
    results: Sequence[EstimationResult],
    order: Sequence[str],
    hausman: TestResult | None,
    labels: Mapping[str, str] | None,
) -> tuple[list[str], list[list[str]]]:
    labels = labels or {}
    header = ["Variables"] + [METHOD_LABELS.get(r.method, r.method) for r in results]
    rows = []
    for name in order:
        if name == "const":
            continue
        rows.append([labels.get(name, name)] + [_coef_cell(r, name) for r in results])
    rows.append(["Constant"] + [_coef_cell(r, "const") for r in results])
    rows.append(["R-squared"] + [f"{fmt_fixed(r.r_squared * 100.0, 2)}%" for r in results])
    rows.append(["Number of observations"] + [str(r.n_obs) for r in results])
    if hausman is not None:
        stat = f"{fmt_fixed(hausman.statistic, 2)}"
        stars = _stars_from_p(hausman.p_value)
        cell = f"{stat} {stars}" if stars else stat
        first = next(
            (i for i, r in enumerate(results) if r.method == "fixed_effects"), 0
        )
        hrow = ["Hausman test"] + ["" for _ in results]
        hrow[1 + first] = cell
        rows.append(hrow)
    return header, rows


def render_coefficient_table(
    results: Sequence[EstimationResult],
    order: Sequence[str],
    hausman: TestResult | None = None,
    labels: Mapping[str, str] | None = None,
) -> str:
    """Markdown coefficient table, one column block per estimator.

    Cells are ``coef (se)`` at 3 decimals with a star suffix from the
    two-sided normal test; coefficients a method does not identify render
    blank.  Trailing rows carry the constant, R-squared in percent, the
    observation count, and the comparison test when supplied.
    """
    if not results:
        raise ValueError("need at least one estimation result")
    header, rows = _coefficient_rows(results, order, hausman, labels)
    return _markdown_table(header, rows)


def render_coefficient_csv(
    results: Sequence[EstimationResult],
    order: Sequence[str],
    hausman: TestResult | None = None,
    labels: Mapping[str, str] | None = None,
) -> str:
    """CSV mirror of the coefficient table, one datum per cell."""
    labels = labels or {}
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = ["variable"]
    for result in results:
        header += [f"{result.method}_coef", f"{result.method}_se", f"{result.method}_stars"]
    writer.writerow(header)
    for name in list(order) + ["const"]:
        if name == "const" and name in order:
            continue
        row = [labels.get(name, "Constant" if name == "const" else name)]
        for result in results:
            if name in result.coefficients:
                coef = result.coefficients[name]
                se = result.std_errors[name]
                row += [repr(coef), repr(se), significance_stars(coef, se)]
            else:
                row += ["", "", ""]
        writer.writerow(row)
    r2 = ["r_squared"]
    nobs = ["n_obs"]
    for result in results:
        r2 += [repr(result.r_squared), "", ""]
        nobs += [str(result.n_obs), "", ""]
    writer.writerow(r2)
    writer.writerow(nobs)
    if hausman is not None:
        writer.writerow(
            ["hausman_statistic", repr(hausman.statistic), str(hausman.df), repr(hausman.p_value)]
        )
    return buffer.getvalue()


def _unitroot_cell(stat: float | None, p: float | None) -> str:
    if stat is None or p is None:
        return ""
    return f"{fmt_fixed(stat, 4)}({fmt_fixed(p, 4)})"


def render_unitroot_table(
    rows: Sequence[tuple[str, IpsResult | None, FisherResult | None]],
) -> str:
    """Markdown unit-root summary: one row per variable, ``stat(p)`` cells."""
    if not rows:
        raise ValueError("need at least one variable")
    body = []
    for variable, ips, fisher in rows:
        body.append(
            [
                variable,
                _unitroot_cell(ips.w_stat, ips.p_value) if ips else "",
                _unitroot_cell(fisher.statistic, fisher.p_value) if fisher else "",
            ]
        )
    return _markdown_table(["Variables", "IPS", "ADF-Fisher"], body)


def render_unitroot_csv(
    rows: Sequence[tuple[str, IpsResult | None, FisherResult | None]],
) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["variable", "ips_w", "ips_p", "fisher_statistic", "fisher_df", "fisher_p"])
    for variable, ips, fisher in rows:
        writer.writerow(
            [
                variable,
                repr(ips.w_stat) if ips else "",
                repr(ips.p_value) if ips else "",
                repr(fisher.statistic) if fisher else "",
                str(fisher.df) if fisher else "",
                repr(fisher.p_value) if fisher else "",
            ]
        )
    return buffer.getvalue()


def render_hausman_block(
    test: TestResult,
    b: Mapping[str, float],
    B: Mapping[str, float],
    se_diff: Sequence[float],
) -> str:
    """FE-vs-RE comparison block: coefficient table, legend, and verdict.

    ``b`` holds the consistent estimates, ``B`` the efficient-under-null
    estimates over the same columns; ``se_diff`` aligns with ``b`` and may
    contain NaN where the covariance difference has no valid diagonal.
    """
    names = list(b)
    if not names:
        raise ValueError("need at least one common coefficient")
    header = ["", "(b)", "(B)", "(b-B)", "sqrt(diag(V_b-V_B))"]
    rows = [["", "consistent", "efficient", "difference", "S.E."]]
    for name, se in zip(names, se_diff):
        rows.append(
            [name, fmt_g9(b[name]), fmt_g9(B[name]), fmt_g9(b[name] - B[name]), fmt_g9(se)]
        )
    lines = [_markdown_table(header, rows)]
    lines.append("b = consistent under Ho and Ha")
    lines.append("B = inconsistent under Ha, efficient under Ho")
    lines.append("Test: Ho: difference in coefficients not systematic")
    lines.append("")
    lines.append(f"χ²({test.df}) = {fmt_fixed(test.statistic, 2)}")
    lines.append(f"Prob>χ² = {fmt_fixed(test.p_value, 4)}")
    if "not_positive_definite" in test.flags:
        lines.append(NPD_WARNING)
    if "clamped_negative" in test.flags:
        lines.append("(negative quadratic form reported as 0)")
    return "\n".join(lines) + "\n"


def render_hausman_csv(
    test: TestResult,
    b: Mapping[str, float],
    B: Mapping[str, float],
    se_diff: Sequence[float],
) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["coefficient", "b", "B", "difference", "se_diff"])
    for name, se in zip(list(b), se_diff):
        writer.writerow(
            [name, repr(b[name]), repr(B[name]), repr(b[name] - B[name]),
             "" if math.isnan(se) else repr(se)]
        )
    writer.writerow(["statistic", repr(test.statistic), "", "", ""])
    writer.writerow(["df", str(test.df), "", "", ""])
    writer.writerow(["p_value", repr(test.p_value), "", "", ""])
    writer.writerow(["flags", ";".join(sorted(test.flags)), "", "", ""])
    return buffer.getvalue()


__all__ = [
    "METHOD_LABELS",
    "NPD_WARNING",
    "fmt_fixed",
    "fmt_g9",
    "render_coefficient_table",
    "render_coefficient_csv",
    "render_unitroot_table",
    "render_unitroot_csv",
    "render_hausman_block",
    "render_hausman_csv",
]
