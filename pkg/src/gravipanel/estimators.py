"""Panel estimators: pooled OLS, fixed-effects (within) GLS, random-effects
GLS with feasible variance components, and two-step robust IV-GMM.

All estimators share one least-squares kernel built on an orthogonal
decomposition; normal equations are never formed for solving.  Each function
is pure: it reads a RegressionProblem and returns an EstimationResult.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .diagnostics import chi2_survival
from .errors import NumericalError
from .panel import EntityId, RegressionProblem, RegressorSpec, demean_within, quasi_demean

# Relative singular-value cutoff below which a design is treated as rank
# deficient.
RANK_RTOL = 1e-10

# Rule-of-thumb first-stage F below which instruments are flagged as weak.
WEAK_F_THRESHOLD = 10.0


@dataclass(frozen=True)
class EstimationResult:
    """Coefficients, inference, and fit statistics from one estimator run.

    ``covariance`` is ordered like ``coefficients``; standard errors are the
    square roots of its diagonal by construction.  Method-specific values
    (variance components, Hansen J, first-stage diagnostics) live in
    ``extras``.
    """

    method: str
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    covariance: np.ndarray
    residuals: np.ndarray
    n_obs: int
    df_resid: int
    r_squared: float
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = list(self.coefficients)
        if self.covariance.shape != (len(names), len(names)):
            raise ValueError("covariance shape does not match coefficient count")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")

    @property
    def coefficient_names(self) -> tuple[str, ...]:
        return tuple(self.coefficients)

    def covariance_for(self, names: list[str]) -> np.ndarray:
        idx = [self.coefficient_names.index(n) for n in names]
        return self.covariance[np.ix_(idx, idx)]


@dataclass(frozen=True)
class VarianceComponents:
    """Feasible GLS variance components and the implied per-entity weights."""

    sigma2_idiosyncratic: float
    sigma2_entity: float
    lambda_per_entity: dict[EntityId, float]
    clamped: bool = False


@dataclass(frozen=True)
class GmmSpec:
    """IV-GMM configuration.

    ``endogenous`` names design columns instrumented by the excluded
    instruments; ``instruments`` describes those excluded instruments as
    panel realizations (they ride along on the RegressionProblem).  All other
    design columns instrument themselves.
    """

    endogenous: tuple[str, ...]
    instruments: tuple[RegressorSpec, ...]
    weighting: str = "two_step_robust"

    def __post_init__(self) -> None:
        if self.weighting not in ("two_step_robust", "homoskedastic"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if len(self.instruments) < len(self.endogenous):
            raise ValueError(
                "order condition violated: "
                f"{len(self.instruments)} excluded instruments for "
                f"{len(self.endogenous)} endogenous columns"
            )


def ols_solve(
    X: np.ndarray, y: np.ndarray, column_names: tuple[str, ...] | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least squares via QR, with classical covariance.

    Parameters
    ----------
    X : (n, k) design, n > k and numerically full rank.
    y : (n,) response.
    column_names : used to name offending columns on rank deficiency.

    Returns
    -------
    (coefficients, covariance, residuals) where covariance is
    sigma2 * (X'X)^{-1} with sigma2 = SSR / (n - k), computed from the R
    factor rather than by inverting X'X.

    Raises
    ------
    NumericalError
        If n <= k, or the smallest singular value of X is below
        RANK_RTOL times the largest (the detected dependent columns are
        listed in the message).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k:
        raise NumericalError(f"need more rows than columns, got {n} x {k}")

    sv = np.linalg.svd(X, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise NumericalError(
            "design is rank deficient; dependent columns: "
            + ", ".join(_dependent_columns(X, column_names))
        )

    Q, R = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    residuals = y - X @ beta
    sigma2 = float(residuals @ residuals) / (n - k)
    r_inv = scipy.linalg.solve_triangular(R, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    covariance = sigma2 * (xtx_inv + xtx_inv.T) / 2.0
    return beta, covariance, residuals


def _dependent_columns(X: np.ndarray, column_names: tuple[str, ...] | None) -> list[str]:
    """Columns pivoted past the numerical rank in a pivoted QR."""
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > RANK_RTOL * scale))
    bad = sorted(piv[rank:])
    if column_names is None:
        return [f"column {c}" for c in bad]
    return [column_names[c] for c in bad]


def _squared_correlation(fitted: np.ndarray, actual: np.ndarray) -> float:
    fd = fitted - fitted.mean()
    ad = actual - actual.mean()
    denom = float(fd @ fd) * float(ad @ ad)
    if denom == 0.0:
        return 0.0
    r2 = float(fd @ ad) ** 2 / denom
    return min(1.0, r2)


def _build_result(
    method: str,
    names: tuple[str, ...],
    beta: np.ndarray,
    covariance: np.ndarray,
    residuals: np.ndarray,
    n_obs: int,
    df_resid: int,
    r_squared: float,
    extras: dict[str, Any] | None = None,
) -> EstimationResult:
    return EstimationResult(
        method=method,
        coefficients={name: float(b) for name, b in zip(names, beta)},
        std_errors={name: float(np.sqrt(max(covariance[i, i], 0.0))) for i, name in enumerate(names)},
        covariance=covariance,
        residuals=residuals,
        n_obs=n_obs,
        df_resid=df_resid,
        r_squared=r_squared,
        extras=extras or {},
    )


def pooled_ols(problem: RegressionProblem) -> EstimationResult:
    """OLS on the stacked panel, ignoring the entity structure."""
    beta, cov, resid = ols_solve(problem.X, problem.y, problem.column_names)
    n, k = problem.X.shape
    sst = float(np.sum((problem.y - problem.y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 0.0
    return _build_result(
        "pooled_ols", problem.column_names, beta, cov, resid, n, n - k, max(0.0, min(1.0, r2))
    )


def fixed_effects(problem: RegressionProblem) -> EstimationResult:
    """Within estimator: OLS on entity-demeaned data.

    Time-invariant columns (and the intercept) drop out of the within
    transform and are reported absent from the coefficient map.  Degrees of
    freedom are corrected for the estimated entity means, and R-squared is
    the squared correlation between fitted values including recovered entity
    effects and the actual response.
    """
    within, dropped = demean_within(problem)
    n, k = within.X.shape
    n_entities = len({e for e, _ in problem.row_keys})
    df = n - k - n_entities
    if df < 1:
        raise NumericalError(f"no residual degrees of freedom in within regression (n={n}, k={k}, entities={n_entities})")

    beta, cov, resid_w = ols_solve(within.X, within.y, within.column_names)
    # Rescale classical covariance from the kernel's (n - k) to the
    # entity-corrected degrees of freedom.
    cov = cov * ((n - k) / df)

    keep = [problem.column_index(name) for name in within.column_names]
    fitted = np.empty(n)
    for rows in problem.entity_groups().values():
        x_e = problem.X[np.ix_(rows, keep)]
        alpha = problem.y[rows].mean() - x_e.mean(axis=0) @ beta
        fitted[rows] = alpha + x_e @ beta
    r2 = _squared_correlation(fitted, problem.y)

    return _build_result(
        "fixed_effects",
        within.column_names,
        beta,
        cov,
        problem.y - fitted,
        n,
        df,
        r2,
        extras={"dropped_columns": dropped, "n_entities": n_entities},
    )


def _swamy_arora(problem: RegressionProblem) -> VarianceComponents:
    """Feasible variance components from within and between regressions."""
    groups = problem.entity_groups()
    n_entities = len(groups)
    if n_entities < 2:
        raise NumericalError("random effects needs at least 2 entities")

    within, _ = demean_within(problem)
    n, k_w = within.X.shape
    df_within = n - k_w - n_entities
    if df_within < 1:
        raise NumericalError("no degrees of freedom for the within variance")
    _, _, resid_w = ols_solve(within.X, within.y, within.column_names)
    sigma2_e = float(resid_w @ resid_w) / df_within

    k = problem.X.shape[1]
    if n_entities <= k:
        raise NumericalError(
            f"between regression infeasible: {n_entities} entities for {k} columns"
        )
    entities = sorted(groups)
    Xb = np.vstack([problem.X[groups[e]].mean(axis=0) for e in entities])
    yb = np.array([problem.y[groups[e]].mean() for e in entities])
    beta_b, _, resid_b = ols_solve(Xb, yb, problem.column_names)
    sigma2_between = float(resid_b @ resid_b) / (n_entities - k)

    # Harmonic mean of group sizes keeps the unbalanced correction exact in
    # the balanced limit.
    t_harm = n_entities / sum(1.0 / len(groups[e]) for e in entities)
    sigma2_u = sigma2_between - sigma2_e / t_harm
    clamped = sigma2_u < 0.0
    sigma2_u = max(0.0, sigma2_u)

    lambdas = {
        e: 1.0 - np.sqrt(sigma2_e / (len(groups[e]) * sigma2_u + sigma2_e))
        for e in entities
    }
    return VarianceComponents(sigma2_e, sigma2_u, lambdas, clamped)


def random_effects(problem: RegressionProblem) -> EstimationResult:
    """Feasible GLS with Swamy-Arora components, via quasi-demeaning.

    With the entity variance clamped at zero every weight is zero and the
    output coincides with pooled OLS exactly.  Time-invariant columns are
    retained, which is the whole point of preferring this estimator.
    """
    components = _swamy_arora(problem)
    transformed = quasi_demean(problem, components.lambda_per_entity)
    beta, cov, resid_t = ols_solve(transformed.X, transformed.y, transformed.column_names)
    n, k = problem.X.shape
    fitted = problem.X @ beta
    extras: dict[str, Any] = {
        "variance_components": components,
        "sigma2_idiosyncratic": components.sigma2_idiosyncratic,
        "sigma2_entity": components.sigma2_entity,
    }
    if components.clamped:
        extras["variance_clamped"] = True
    return _build_result(
        "random_effects",
        problem.column_names,
        beta,
        cov,
        resid_t,
        n,
        n - k,
        _squared_correlation(fitted, problem.y),
        extras=extras,
    )


def _first_stage_f(
    X_exog: np.ndarray, Z_excl: np.ndarray, x_endog: np.ndarray
) -> float:
    """Partial F statistic of the excluded instruments in one first stage."""
    n = len(x_endog)
    full = np.column_stack([X_exog, Z_excl]) if X_exog.size else Z_excl
    _, _, resid_u = ols_solve(full, x_endog)
    ssr_u = float(resid_u @ resid_u)
    if X_exog.size:
        _, _, resid_r = ols_solve(X_exog, x_endog)
        ssr_r = float(resid_r @ resid_r)
    else:
        ssr_r = float(np.sum((x_endog - x_endog.mean()) ** 2))
    m = Z_excl.shape[1]
    df = n - full.shape[1]
    if df < 1 or ssr_u <= 0.0:
        return float("inf")
    return ((ssr_r - ssr_u) / m) / (ssr_u / df)


def iv_gmm(problem: RegressionProblem, spec: GmmSpec) -> EstimationResult:
    """Two-step IV-GMM with a heteroskedasticity-robust weight matrix.

    Step one is two-stage least squares; step two reweights the moment
    conditions by the inverse of the step-one residual outer-product matrix.
    With ``weighting="homoskedastic"`` estimation stops after step one with
    classical 2SLS inference.  The Hansen J statistic and its p-value are
    reported in ``extras`` when the model is overidentified; J is exactly
    zero when just-identified.
    """
    X, y = problem.X, problem.y
    n, k = X.shape
    names = problem.column_names
    for name in spec.endogenous:
        if name not in names:
            raise ValueError(f"endogenous column {name!r} not in design")

    endog_idx = [problem.column_index(name) for name in spec.endogenous]
    exog_idx = [i for i in range(k) if i not in endog_idx]

    # Excluded instruments are selected from the realized columns by name, so
    # a narrowed GmmSpec uses only the instruments it declares.
    wanted = tuple(inst.column_name for inst in spec.instruments)
    Z_excl = None
    excl_names: tuple[str, ...] = ()
    if wanted:
        if problem.instruments is None:
            raise NumericalError(
                "problem carries no realized instruments; build the design with "
                "with_instruments=True"
            )
        missing = [n for n in wanted if n not in problem.instrument_names]
        if missing:
            raise NumericalError(f"instruments not realized on the problem: {missing}")
        cols = [problem.instrument_names.index(n) for n in wanted]
        Z_excl = problem.instruments[:, cols]
        excl_names = wanted
    if spec.endogenous and (Z_excl is None or Z_excl.shape[1] < len(spec.endogenous)):
        have = 0 if Z_excl is None else Z_excl.shape[1]
        raise NumericalError(
            f"order condition violated: {have} excluded instruments for "
            f"{len(spec.endogenous)} endogenous columns"
        )

    if Z_excl is not None and Z_excl.shape[1]:
        Z = np.column_stack([X[:, exog_idx], Z_excl])
        z_names = tuple(names[i] for i in exog_idx) + excl_names
    else:
        Z = X[:, exog_idx]
        z_names = tuple(names[i] for i in exog_idx)
    n_z = Z.shape[1]
    if n_z < k:
        raise NumericalError(f"order condition violated: {n_z} instruments for {k} columns")

    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise NumericalError(
            "instrument matrix is rank deficient; dependent columns: "
            + ", ".join(_dependent_columns(Z, z_names))
        )

    # Step 1: 2SLS through the instrument projection.
    Qz, _ = np.linalg.qr(Z)
    X_hat = Qz @ (Qz.T @ X)
    beta1, _, _ = ols_solve(X_hat, y, names)
    resid1 = y - X @ beta1

    extras: dict[str, Any] = {}
    if endog_idx:
        f_stats = {
            names[i]: _first_stage_f(X[:, exog_idx], Z_excl, X[:, i]) for i in endog_idx
        }
        extras["first_stage_f"] = f_stats
        if min(f_stats.values()) < WEAK_F_THRESHOLD:
            extras["weak_instruments"] = True

    if spec.weighting == "homoskedastic":
        beta = beta1
        resid = resid1
        sigma2 = float(resid @ resid) / (n - k)
        xtx_hat = X_hat.T @ X_hat
        cov = sigma2 * np.linalg.inv(xtx_hat)
        if n_z > k:
            zt_e = Z.T @ resid
            j_stat = float(zt_e @ np.linalg.solve(Z.T @ Z, zt_e)) / (float(resid @ resid) / n)
            extras["hansen_j"] = j_stat
            extras["hansen_j_p"] = chi2_survival(j_stat, n_z - k)
        else:
            extras["hansen_j"] = 0.0
    else:
        zu = Z * resid1[:, None]
        S = zu.T @ zu
        try:
            s_factor = scipy.linalg.cho_factor(S)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError("singular GMM weight matrix") from exc
        A = Z.T @ X
        b = Z.T @ y
        SinvA = scipy.linalg.cho_solve(s_factor, A)
        G = A.T @ SinvA
        beta = np.linalg.solve(G, SinvA.T @ b)
        resid = y - X @ beta
        cov = np.linalg.inv(G) * (n / (n - k))
        if n_z > k:
            g = Z.T @ resid
            j_stat = float(g @ scipy.linalg.cho_solve(s_factor, g))
            extras["hansen_j"] = j_stat
            extras["hansen_j_p"] = chi2_survival(j_stat, n_z - k)
        else:
            extras["hansen_j"] = 0.0

    cov = (cov + cov.T) / 2.0
    return _build_result(
        "iv_gmm",
        names,
        beta,
        cov,
        resid,
        n,
        n - k,
        _squared_correlation(X @ beta, y),
        extras=extras,
    )


def two_sided_p(z: float) -> float:
    """Two-sided normal p-value for a z statistic."""
    return float(2.0 * ndtr(-abs(z)))


def significance_stars(coef: float, se: float) -> str:
    """Star suffix from a two-sided normal test: 1% ***, 5% **, 10% *."""
    if se <= 0.0:
        return ""
    p = two_sided_p(coef / se)
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""
