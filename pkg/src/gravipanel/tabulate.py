"""Monte Carlo tabulation of the Dickey-Fuller t-statistic distribution.

Simulates driftless random walks, fits the augmented Dickey-Fuller
regression to each, and writes two CSV tables consumed by the unitroot
module: finite-sample quantiles of the t statistic (the p-value surface) and
its first two moments (the averaged-t standardization).

Every (deterministics, lags, n_effective) cell draws from its own seed
stream derived from BASE_SEED, so cells can be regenerated independently and
bit-identically:

    python -m gravipanel.tabulate --out src/gravipanel/tables
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

BASE_SEED = 771204
REPLICATIONS = 200_000
N_EFFECTIVE_GRID = (8, 10, 15, 20, 25, 50, 100, 250, 500)
LAG_GRID = (0, 1, 2)
DETERMINISTICS = ("c", "ct")
_DET_CODE = {"c": 0, "ct": 1}

PROB_GRID = (
    0.0001, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.015, 0.02, 0.03, 0.04,
    0.05, 0.06, 0.08, 0.10, 0.125, 0.15, 0.20, 0.25, 0.30, 0.35,
    0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85,
    0.90, 0.925, 0.95, 0.975, 0.99, 0.995, 0.998, 0.999, 0.9995, 0.9999,
)


def _batch_adf_t(y: np.ndarray, lags: int, deterministics: str) -> np.ndarray:
    """Dickey-Fuller t statistics for a batch of series, one per row.

    Uses batched normal equations, which is fine here: the designs are tiny
    and well scaled, and this implementation is deliberately independent of
    the QR path in the estimators module.
    """
    reps, length = y.shape
    n_eff = length - 1 - lags
    dy = np.diff(y, axis=1)
    response = dy[:, lags:]

    cols = [np.broadcast_to(np.ones(n_eff), (reps, n_eff))]
    if deterministics == "ct":
        cols.append(np.broadcast_to(np.arange(1.0, n_eff + 1.0), (reps, n_eff)))
    rho_idx = len(cols)
    cols.append(y[:, lags : length - 1])
    for j in range(1, lags + 1):
        cols.append(dy[:, lags - j : dy.shape[1] - j])
    X = np.stack(cols, axis=2)  # (reps, n_eff, k)
    k = X.shape[2]

    xtx = np.einsum("rnk,rnm->rkm", X, X)
    xty = np.einsum("rnk,rn->rk", X, response)
    beta = np.linalg.solve(xtx, xty[:, :, None])[:, :, 0]
    resid = response - np.einsum("rnk,rk->rn", X, beta)
    sigma2 = np.einsum("rn,rn->r", resid, resid) / (n_eff - k)
    xtx_inv = np.linalg.inv(xtx)
    return beta[:, rho_idx] / np.sqrt(sigma2 * xtx_inv[:, rho_idx, rho_idx])


def generate_cell(
    deterministics: str,
    lags: int,
    n_effective: int,
    replications: int = REPLICATIONS,
    base_seed: int = BASE_SEED,
) -> np.ndarray:
    """Simulated null-distribution t statistics for one table cell."""
    seq = np.random.SeedSequence(
        entropy=base_seed, spawn_key=(_DET_CODE[deterministics], lags, n_effective)
    )
    rng = np.random.default_rng(seq)
    length = n_effective + 1 + lags
    chunk = min(50_000, max(500, int(5e6 / (length * (lags + 3)))))
    samples = []
    done = 0
    while done < replications:
        take = min(chunk, replications - done)
        eps = rng.standard_normal((take, length))
        walks = np.cumsum(eps, axis=1)
        samples.append(_batch_adf_t(walks, lags, deterministics))
        done += take
    return np.concatenate(samples)


def cell_quantiles(t_samples: np.ndarray) -> np.ndarray:
    return np.quantile(t_samples, PROB_GRID, method="linear")


def cell_moments(t_samples: np.ndarray) -> tuple[float, float]:
    return float(t_samples.mean()), float(t_samples.var(ddof=1))


def write_tables(out_dir: Path, replications: int = REPLICATIONS) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    q_path = out_dir / "df_tstat_quantiles.csv"
    m_path = out_dir / "ips_moments.csv"
    with q_path.open("w", newline="") as qf, m_path.open("w", newline="") as mf:
        q_writer = csv.writer(qf)
        m_writer = csv.writer(mf)
        q_writer.writerow(["deterministics", "lags", "n_effective", "prob", "quantile"])
        m_writer.writerow(["deterministics", "lags", "n_effective", "mean_t", "var_t"])
        for det in DETERMINISTICS:
            for lags in LAG_GRID:
                for n_eff in N_EFFECTIVE_GRID:
                    t = generate_cell(det, lags, n_eff, replications)
                    for prob, quant in zip(PROB_GRID, cell_quantiles(t)):
                        q_writer.writerow([det, lags, n_eff, f"{prob:g}", f"{quant:.17g}"])
                    mean_t, var_t = cell_moments(t)
                    m_writer.writerow([det, lags, n_eff, f"{mean_t:.17g}", f"{var_t:.17g}"])
                    print(f"tabulated det={det} lags={lags} n={n_eff}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        type=Path,
        default=Path(__file__).parent / "tables",
        help="directory for the generated CSV tables",
    )
    parser.add_argument("--replications", type=int, default=REPLICATIONS)
    args = parser.parse_args(argv)
    write_tables(args.out, args.replications)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
