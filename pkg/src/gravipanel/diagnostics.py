"""Specification tests and distribution tails: the Hausman test with
non-positive-definite handling, the chi-squared survival function, and the
heteroskedasticity-robust covariance sandwich.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
from scipy.special import gammaincc

from .errors import NumericalError

if TYPE_CHECKING:
    from .estimators import EstimationResult

# Relative eigenvalue cutoff for the pseudo-inverse rank decision.
PINV_RTOL = 1e-12


@dataclass(frozen=True)
class TestResult:
    """A named test statistic with degrees of freedom, p-value, and flags.

    Flags: ``not_positive_definite`` when the covariance difference had
    negative eigenvalues, ``clamped_negative`` when a negative quadratic form
    was reported as zero.
    """

    # Not a pytest class, despite the name.
    __test__ = False

    name: str
    statistic: float
    df: int
    p_value: float
    flags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.statistic < 0.0:
            raise ValueError("reported statistic must be non-negative")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p-value outside [0, 1]")


def chi2_survival(x: float, df: int) -> float:
    """Upper-tail probability of the chi-squared distribution.

    Computed through the regularized upper incomplete gamma function, which
    is exact to better than 1e-10 against the closed forms available for
    even degrees of freedom.
    """
    if x < 0.0:
        raise ValueError(f"statistic must be >= 0, got {x}")
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    return float(gammaincc(df / 2.0, x / 2.0))


def hausman_test(fe: "EstimationResult", re: "EstimationResult") -> TestResult:
    """Hausman specification test of fixed against random effects.

    Convention: ``fe`` is consistent under both hypotheses, ``re`` efficient
    under the null, and the statistic is built on V_fe - V_re restricted to
    the common time-varying coefficients (the intercept never qualifies).
    The difference matrix is inverted by a symmetric eigendecomposition
    pseudo-inverse; df is the rank actually used.  Negative eigenvalues set
    the not_positive_definite flag, and a negative quadratic form is
    reported as 0 with clamped_negative.
    """
    common = [n for n in fe.coefficient_names if n in re.coefficient_names and n != "const"]
    if not common:
        raise NumericalError("no common time-varying coefficients between the two results")

    b = np.array([fe.coefficients[n] for n in common])
    B = np.array([re.coefficients[n] for n in common])
    delta = b - B
    V = fe.covariance_for(common) - re.covariance_for(common)
    V = (V + V.T) / 2.0

    eigvals, eigvecs = np.linalg.eigh(V)
    scale = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    flags = set()
    if np.any(eigvals < -PINV_RTOL * max(scale, 1e-300)):
        flags.add("not_positive_definite")

    nonzero = np.abs(eigvals) > PINV_RTOL * max(scale, 1e-300)
    rank = int(np.sum(nonzero))
    if rank == 0:
        return TestResult("hausman", 0.0, len(common), 1.0, frozenset(flags))

    inv_vals = np.where(nonzero, 1.0 / np.where(nonzero, eigvals, 1.0), 0.0)
    z = eigvecs.T @ delta
    statistic = float(z @ (inv_vals * z))
    if statistic < 0.0:
        statistic = 0.0
        flags.add("clamped_negative")

    return TestResult(
        name="hausman",
        statistic=statistic,
        df=rank,
        p_value=chi2_survival(statistic, rank),
        flags=frozenset(flags),
    )


def robust_covariance(
    X: np.ndarray, residuals: np.ndarray, small_sample: bool = False
) -> np.ndarray:
    """Heteroskedasticity-robust sandwich (X'X)^{-1} X'diag(e^2)X (X'X)^{-1}.

    With ``small_sample`` the result is scaled by n / (n - k).  The output is
    symmetrized, and under residuals of constant magnitude it reduces to the
    classical covariance.
    """
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    n, k = X.shape
    if e.shape != (n,):
        raise ValueError(f"residual length {e.shape} does not match {n} rows")

    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= PINV_RTOL * max(diag.max(), 1e-300):
        raise NumericalError("X'X is singular")

    r_inv = scipy.linalg.solve_triangular(R, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    meat = (X * (e**2)[:, None]).T @ X
    cov = xtx_inv @ meat @ xtx_inv
    if small_sample:
        cov = cov * (n / (n - k))
    return (cov + cov.T) / 2.0
