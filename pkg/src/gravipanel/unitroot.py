"""Panel unit-root pretests: per-series augmented Dickey-Fuller regressions,
the averaged-t panel statistic with moment standardization, and the
combined-p chi-squared test that tolerates unbalanced panels.

Finite-sample p-values and standardization moments come from Monte Carlo
tables shipped as CSV files under ``gravipanel/tables``; the generator that
reproduces them bit-identically from a fixed seed lives in
``gravipanel.tabulate``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import ndtr

from .diagnostics import chi2_survival
from .errors import NumericalError
from .estimators import ols_solve
from .panel import PanelDataset

logger = logging.getLogger(__name__)

DETERMINISTICS = ("c", "ct")  # constant, constant + trend

# p-values are clamped to this band at the edges of the tabulated surface.
P_CLAMP = 1e-6

#: Default augmentation lag for annual panels; longer lags are infeasible at
#: the short series lengths this toolkit targets.
DEFAULT_LAGS = 1


@dataclass(frozen=True)
class AdfResult:
    """One augmented Dickey-Fuller regression.

    ``p_value`` is None until filled from the tabulated surface;
    ``p_at_edge`` marks a value clamped at the edge of the table.
    """

    t_stat: float
    lags_used: int
    n_effective: int
    deterministics: str
    p_value: float | None = None
    p_at_edge: bool = False

    def __post_init__(self) -> None:
        if self.n_effective < self.lags_used + 3:
            raise ValueError("effective sample too small for the lag order")
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p-value outside [0, 1]")


@dataclass(frozen=True)
class IpsResult:
    """Averaged-t panel statistic standardized by tabulated moments."""

    t_bar: float
    w_stat: float
    n_series: int
    p_value: float
    per_series: tuple[AdfResult, ...]


@dataclass(frozen=True)
class FisherResult:
    """Combined per-series p-values: -2 sum(ln p) ~ chi2(2N) under the null."""

    statistic: float
    df: int
    p_value: float
    per_series: tuple[AdfResult, ...]


def adf_regression(
    series: np.ndarray, lags: int = DEFAULT_LAGS, deterministics: str = "c"
) -> AdfResult:
    """Fit dy_t = a (+ d*t) + rho*y_{t-1} + sum phi_j dy_{t-j} + e_t.

    Returns the t statistic of rho without a p-value.  The series must be
    time-ordered with no interior gaps.

    Raises
    ------
    NumericalError
        If fewer than lags + 4 effective observations remain after
        differencing and trimming, or the regression fits perfectly
        (degenerate series).
    """
    if deterministics not in DETERMINISTICS:
        raise ValueError(f"deterministics must be one of {DETERMINISTICS}")
    if lags < 0:
        raise ValueError("lags must be >= 0")
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise ValueError("series has missing or non-finite interior values")

    n_eff = len(y) - 1 - lags
    if n_eff < lags + 4:
        raise NumericalError(
            f"series too short: {len(y)} observations leave {n_eff} effective "
            f"rows, need >= {lags + 4}"
        )

    dy = np.diff(y)
    response = dy[lags:]
    cols = [np.ones(n_eff)]
    names = ["const"]
    if deterministics == "ct":
        cols.append(np.arange(1.0, n_eff + 1.0))
        names.append("trend")
    rho_idx = len(cols)
    cols.append(y[lags:-1])
    names.append("level")
    for j in range(1, lags + 1):
        cols.append(dy[lags - j : len(dy) - j])
        names.append(f"dlag{j}")
    X = np.column_stack(cols)

    try:
        beta, cov, resid = ols_solve(X, response, tuple(names))
    except NumericalError as exc:
        raise NumericalError(f"degenerate series: {exc}") from exc
    ssr = float(resid @ resid)
    scale = max(1.0, float(response @ response))
    if ssr <= 1e-24 * scale:
        raise NumericalError("degenerate series: zero residual variance")

    t_stat = float(beta[rho_idx] / np.sqrt(cov[rho_idx, rho_idx]))
    return AdfResult(
        t_stat=t_stat, lags_used=lags, n_effective=n_eff, deterministics=deterministics
    )


@lru_cache(maxsize=None)
def _quantile_table() -> dict[tuple[str, int], tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(det, lags) -> (sorted n grid, prob grid, quantiles[n, prob])."""
    raw: dict[tuple[str, int], dict[int, dict[float, float]]] = {}
    path = resources.files("gravipanel").joinpath("tables/df_tstat_quantiles.csv")
    with path.open() as fh:
        for row in csv.DictReader(fh):
            key = (row["deterministics"], int(row["lags"]))
            cell = raw.setdefault(key, {}).setdefault(int(row["n_effective"]), {})
            cell[float(row["prob"])] = float(row["quantile"])
    out = {}
    for key, by_n in raw.items():
        ns = np.array(sorted(by_n))
        probs = np.array(sorted(next(iter(by_n.values()))))
        quantiles = np.array([[by_n[n][p] for p in probs] for n in ns])
        out[key] = (ns, probs, quantiles)
    return out


@lru_cache(maxsize=None)
def _moment_table() -> dict[tuple[str, int], tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(det, lags) -> (sorted n grid, mean_t[n], var_t[n])."""
    raw: dict[tuple[str, int], dict[int, tuple[float, float]]] = {}
    path = resources.files("gravipanel").joinpath("tables/ips_moments.csv")
    with path.open() as fh:
        for row in csv.DictReader(fh):
            key = (row["deterministics"], int(row["lags"]))
            raw.setdefault(key, {})[int(row["n_effective"])] = (
                float(row["mean_t"]),
                float(row["var_t"]),
            )
    out = {}
    for key, by_n in raw.items():
        ns = np.array(sorted(by_n))
        means = np.array([by_n[n][0] for n in ns])
        variances = np.array([by_n[n][1] for n in ns])
        out[key] = (ns, means, variances)
    return out


def _table_key(deterministics: str, lags: int, table: dict) -> tuple[str, int]:
    available = sorted(l for d, l in table if d == deterministics)
    if not available:
        raise ValueError(f"no tables for deterministics {deterministics!r}")
    # Lags beyond the tabulated range borrow the largest tabulated order.
    clamped = min(max(lags, available[0]), available[-1])
    return (deterministics, clamped)


def _interp_in_inverse_n(
    ns: np.ndarray, values: np.ndarray, n_effective: int
) -> np.ndarray:
    """Linear interpolation of table rows in 1/n, clamped at the grid ends."""
    if n_effective <= ns[0]:
        return values[0]
    if n_effective >= ns[-1]:
        return values[-1]
    hi = int(np.searchsorted(ns, n_effective))
    lo = hi - 1
    x0, x1, x = 1.0 / ns[lo], 1.0 / ns[hi], 1.0 / n_effective
    w = (x - x1) / (x0 - x1)
    return w * values[lo] + (1.0 - w) * values[hi]


def adf_p_value(
    t_stat: float,
    deterministics: str = "c",
    n_effective: int = 100,
    lags: int = DEFAULT_LAGS,
    with_flag: bool = False,
) -> float | tuple[float, bool]:
    """Finite-sample p-value of an ADF t statistic from the tabulated surface.

    The surface is interpolated linearly in t within each tabulated sample
    size and in 1/n across sample sizes.  Beyond the tabulated t range the
    value clamps to [1e-6, 1 - 1e-6]; with ``with_flag`` the clamp state is
    returned alongside the probability.
    """
    if deterministics not in DETERMINISTICS:
        raise ValueError(f"deterministics must be one of {DETERMINISTICS}")
    table = _quantile_table()
    ns, probs, quantiles = table[_table_key(deterministics, lags, table)]
    rows = _interp_in_inverse_n(ns, quantiles, n_effective)
    clamped = False
    if t_stat <= rows[0]:
        p = P_CLAMP
        clamped = True
    elif t_stat >= rows[-1]:
        p = 1.0 - P_CLAMP
        clamped = True
    else:
        p = float(np.interp(t_stat, rows, probs))
        if p < P_CLAMP:
            p, clamped = P_CLAMP, True
        elif p > 1.0 - P_CLAMP:
            p = 1.0 - P_CLAMP
            clamped = True
    return (p, clamped) if with_flag else p


def _usable_series(
    panel: PanelDataset, variable: str, lags: int, deterministics: str
) -> tuple[list[AdfResult], int]:
    """Per-entity ADF fits, excluding (with a warning) entities whose series
    are gapped, too short, or degenerate."""
    if variable not in panel.variables:
        raise ValueError(f"unknown panel variable {variable!r}")
    results: list[AdfResult] = []
    excluded = 0
    for entity in panel.entities:
        years, values = panel.entity_series(variable, entity)
        if len(years) and np.any(np.diff(years) != 1):
            logger.warning("unitroot excluded %s on %s: interior gap", entity, variable)
            excluded += 1
            continue
        try:
            fit = adf_regression(values, lags, deterministics)
        except NumericalError as exc:
            logger.warning("unitroot excluded %s on %s: %s", entity, variable, exc)
            excluded += 1
            continue
        p, at_edge = adf_p_value(
            fit.t_stat, deterministics, fit.n_effective, lags, with_flag=True
        )
        results.append(
            AdfResult(
                t_stat=fit.t_stat,
                lags_used=fit.lags_used,
                n_effective=fit.n_effective,
                deterministics=deterministics,
                p_value=p,
                p_at_edge=at_edge,
            )
        )
    if len(results) < 2:
        raise NumericalError(
            f"panel unit-root test needs >= 2 usable entities, got {len(results)}"
        )
    return results, excluded


def ips_test(
    panel: PanelDataset,
    variable: str,
    lags: int = DEFAULT_LAGS,
    deterministics: str = "c",
) -> IpsResult:
    """Averaged-t panel unit-root test.

    Per-entity ADF t statistics are averaged and standardized with tabulated
    per-length moments; slope heterogeneity across entities is allowed by
    construction.  The p-value is the lower normal tail of the standardized
    statistic.
    """
    per_series, _ = _usable_series(panel, variable, lags, deterministics)
    t_stats = np.array([r.t_stat for r in per_series])
    table = _moment_table()
    ns, means, variances = table[_table_key(deterministics, lags, table)]
    e_t = np.array([_interp_in_inverse_n(ns, means, r.n_effective) for r in per_series])
    v_t = np.array([_interp_in_inverse_n(ns, variances, r.n_effective) for r in per_series])

    n_series = len(per_series)
    t_bar = float(t_stats.mean())
    w_stat = float(np.sqrt(n_series) * (t_bar - e_t.mean()) / np.sqrt(v_t.mean()))
    return IpsResult(
        t_bar=t_bar,
        w_stat=w_stat,
        n_series=n_series,
        p_value=float(ndtr(w_stat)),
        per_series=tuple(per_series),
    )


def fisher_adf_test(
    panel: PanelDataset,
    variable: str,
    lags: int = DEFAULT_LAGS,
    deterministics: str = "c",
) -> FisherResult:
    """Combined-p panel unit-root test; entities may have unequal lengths."""
    per_series, _ = _usable_series(panel, variable, lags, deterministics)
    statistic = -2.0 * math.fsum(math.log(r.p_value) for r in per_series)
    df = 2 * len(per_series)
    return FisherResult(
        statistic=statistic,
        df=df,
        p_value=chi2_survival(statistic, df),
        per_series=tuple(per_series),
    )
