"""End-to-end pipeline: data assembly or simulation, unit-root pretests,
FE and RE estimation, the specification test, and the conditional IV-GMM
escalation, with all tables written to the output directory.

Exit codes: 0 success, 2 configuration error, 3 data or ingest error,
4 numerical failure.  Errors also emit one machine-parsable stderr line
``error: code=<n> stage=<stage> detail=<message>``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ingest, report, synth, unitroot
from .config import RunConfig, parse_config
from .diagnostics import TestResult, hausman_test
from .errors import ConfigError, DataError, NumericalError
from .estimators import (
    EstimationResult,
    fixed_effects,
    iv_gmm,
    pooled_ols,
    random_effects,
)
from .panel import PanelDataset, build_panel, design_matrix, realize_variable

logger = logging.getLogger(__name__)

GMM_SKIPPED_LINE = "GMM skipped: Hausman failed to reject"

_ESTIMATORS = {
    "pooled_ols": pooled_ols,
    "fixed_effects": fixed_effects,
    "random_effects": random_effects,
}


def emit_error(code: int, stage: str, detail: str) -> None:
    flat = " ".join(str(detail).split())
    print(f"error: code={code} stage={stage} detail={flat}", file=sys.stderr)


def configure_logging(out_dir: Path, level: str) -> logging.Handler:
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
    package_logger = logging.getLogger("gravipanel")
    package_logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    package_logger.addHandler(handler)
    return handler


def load_dataset(config: RunConfig) -> PanelDataset:
    """Assemble the configured panel from input files or the synthetic DGP."""
    if config.variant == "synthetic":
        assert config.synth is not None
        if config.synth_generator == "endogenous":
            dataset, _ = synth.generate_endogenous_panel(config.synth)
        else:
            dataset, _ = synth.generate_gravity_panel(config.synth)
        return dataset

    assert config.inputs is not None
    paths = config.inputs
    for path in (paths.trade_csv, paths.indicators_csv, paths.pair_static_csv, paths.memberships_csv):
        if not Path(path).is_file():
            raise DataError(f"input file not found: {path}")
    with open(paths.trade_csv, encoding="utf-8") as fh:
        flows = ingest.read_trade_csv(fh)
    with open(paths.indicators_csv, encoding="utf-8") as fh:
        indicators = ingest.read_indicator_csv(fh)
    with open(paths.pair_static_csv, encoding="utf-8") as fh:
        statics = ingest.read_pair_static_csv(fh)
    with open(paths.memberships_csv, encoding="utf-8") as fh:
        memberships = ingest.read_membership_csv(fh)
    return ingest.assemble_gravity_panel(
        flows, indicators, statics, memberships, paths.window, config.variant
    )


def run_unitroot(config: RunConfig, dataset: PanelDataset):
    """Per-variable panel unit-root tests on the configured transforms."""
    options = config.unitroot
    if options is None:
        return []
    rows = []
    for source, transforms in options.variables:
        values, mask = realize_variable(dataset, source, transforms)
        name = source
        for t in transforms:
            name = t.derive_name(name)
        observations = [
            (entity, year, name, float(values[i, j]))
            for i, entity in enumerate(dataset.entities)
            for j, year in enumerate(dataset.times)
            if mask[i, j]
        ]
        try:
            panel = build_panel(observations)
            ips = unitroot.ips_test(panel, name, options.lags, options.deterministics)
            fisher = unitroot.fisher_adf_test(panel, name, options.lags, options.deterministics)
            rows.append((name, ips, fisher))
            logger.info(
                "unitroot %s: ips w=%.4f p=%.4f fisher=%.4f p=%.4f",
                name, ips.w_stat, ips.p_value, fisher.statistic, fisher.p_value,
            )
        except (NumericalError, DataError) as exc:
            logger.warning("unitroot skipped for %s: %s", name, exc)
            rows.append((name, None, None))
    return rows


def _hausman_artifacts(fe: EstimationResult, re: EstimationResult, test: TestResult):
    common = [n for n in fe.coefficient_names if n in re.coefficient_names and n != "const"]
    b = {n: fe.coefficients[n] for n in common}
    B = {n: re.coefficients[n] for n in common}
    diag = np.diag(fe.covariance_for(common) - re.covariance_for(common))
    se_diff = [float(np.sqrt(d)) if d >= 0 else float("nan") for d in diag]
    return b, B, se_diff


def run_estimation(config: RunConfig, dataset: PanelDataset, escalation: bool = True):
    """Execute the estimator chain with the specification-test escalation.

    With ``escalation`` (the full-pipeline behavior), IV-GMM runs only when
    both FE and RE were estimated and the comparison test rejects at the
    configured level; otherwise it is skipped with a log line.  The
    ``estimate`` subcommand passes ``escalation=False`` to run the configured
    chain unconditionally.
    """
    model = config.model
    problem = design_matrix(dataset, model)
    logger.info(
        "design: %d rows, %d columns, %d dropped",
        problem.n_obs, len(problem.columns), len(problem.drop_log),
    )

    results: dict[str, EstimationResult] = {}
    for tag in model.estimator_chain:
        if tag == "iv_gmm":
            continue
        results[tag] = _ESTIMATORS[tag](problem)
        logger.info("estimated %s: r2=%.4f n=%d", tag, results[tag].r_squared, results[tag].n_obs)

    test = None
    hausman_cols = None
    if "fixed_effects" in results and "random_effects" in results:
        test = hausman_test(results["fixed_effects"], results["random_effects"])
        hausman_cols = _hausman_artifacts(
            results["fixed_effects"], results["random_effects"], test
        )
        logger.info("hausman: chi2(%d)=%.4f p=%.4f", test.df, test.statistic, test.p_value)

    gmm_result = None
    if "iv_gmm" in model.estimator_chain:
        if model.gmm is None:
            raise ConfigError("iv_gmm in the chain but no GMM specification")
        escalate = (
            not escalation or test is None or test.p_value < config.hausman_alpha
        )
        if escalate:
            gmm_problem = design_matrix(dataset, model, with_instruments=True)
            gmm_result = iv_gmm(gmm_problem, model.gmm)
            results["iv_gmm"] = gmm_result
            logger.info("estimated iv_gmm: n=%d", gmm_result.n_obs)
        else:
            logger.info(GMM_SKIPPED_LINE)

    ordered = [results[tag] for tag in model.estimator_chain if tag in results]
    return ordered, test, hausman_cols, problem


def write_tables(out_dir: Path, stem: str, formats, markdown: str, csv_text: str) -> None:
    if "markdown" in formats:
        (out_dir / f"{stem}.md").write_text(markdown, encoding="utf-8")
    if "csv" in formats:
        (out_dir / f"{stem}.csv").write_text(csv_text, encoding="utf-8")


def _result_payload(result: EstimationResult) -> dict:
    return {
        "method": result.method,
        "coefficients": result.coefficients,
        "std_errors": result.std_errors,
        "n_obs": result.n_obs,
        "df_resid": result.df_resid,
        "r_squared": result.r_squared,
        "extras": {
            k: v
            for k, v in result.extras.items()
            if isinstance(v, (int, float, str, bool, list, dict))
        },
    }


def write_results_json(
    out_dir: Path,
    results,
    test: TestResult | None,
    hausman_cols,
    unitroot_rows,
    order,
    labels,
) -> None:
    payload = {
        "results": [_result_payload(r) for r in results],
        "order": list(order),
        "labels": dict(labels),
        "hausman": None,
        "unitroot": [
            {
                "variable": name,
                "ips_w": ips.w_stat if ips else None,
                "ips_t_bar": ips.t_bar if ips else None,
                "ips_n_series": ips.n_series if ips else None,
                "ips_p": ips.p_value if ips else None,
                "fisher_statistic": fisher.statistic if fisher else None,
                "fisher_df": fisher.df if fisher else None,
                "fisher_p": fisher.p_value if fisher else None,
            }
            for name, ips, fisher in unitroot_rows
        ],
    }
    if test is not None and hausman_cols is not None:
        b, B, se_diff = hausman_cols
        payload["hausman"] = {
            "statistic": test.statistic,
            "df": test.df,
            "p_value": test.p_value,
            "flags": sorted(test.flags),
            "b": b,
            "B": B,
            "se_diff": se_diff,
        }
    (out_dir / "results.json").write_text(
        json.dumps(payload, indent=2, allow_nan=True), encoding="utf-8"
    )


def execute(config: RunConfig, out_dir: Path) -> None:
    """Run all pipeline stages and write artifacts into ``out_dir``."""
    dataset = load_dataset(config)
    logger.info(
        "panel: %d entities x %d years, %d variables",
        dataset.n_entities, dataset.n_times, len(dataset.variables),
    )

    unitroot_rows = run_unitroot(config, dataset)
    if unitroot_rows:
        write_tables(
            out_dir,
            "unitroot",
            config.formats,
            report.render_unitroot_table(unitroot_rows),
            report.render_unitroot_csv(unitroot_rows),
        )

    results, test, hausman_cols, problem = run_estimation(config, dataset)
    order = [c.name for c in problem.columns if c.name != "const"]
    if results:
        write_tables(
            out_dir,
            "estimates",
            config.formats,
            report.render_coefficient_table(results, order, test, config.labels),
            report.render_coefficient_csv(results, order, test, config.labels),
        )
    if test is not None and hausman_cols is not None:
        b, B, se_diff = hausman_cols
        write_tables(
            out_dir,
            "hausman",
            config.formats,
            report.render_hausman_block(test, b, B, se_diff),
            report.render_hausman_csv(test, b, B, se_diff),
        )
    gmm_results = [r for r in results if r.method == "iv_gmm"]
    if gmm_results:
        write_tables(
            out_dir,
            "gmm",
            config.formats,
            report.render_coefficient_table(gmm_results, order, None, config.labels),
            report.render_coefficient_csv(gmm_results, order, None, config.labels),
        )

    write_results_json(out_dir, results, test, hausman_cols, unitroot_rows, order, config.labels)


def run_pipeline(
    config_path: str | Path,
    out_dir: str | Path | None = None,
    formats: tuple[str, ...] | None = None,
    seed: int | None = None,
    log_level: str | None = None,
) -> int:
    """Load a configuration, run the full pipeline, and return the exit code.

    Optional arguments override the corresponding configuration values.
    Artifacts: ``unitroot.*``, ``estimates.*``, ``hausman.*``, ``gmm.*``
    (escalation branch only), ``results.json``, and ``run.log``.
    """
    try:
        config = parse_config(config_path)
        if out_dir is not None:
            config = dataclasses.replace(config, out_dir=Path(out_dir))
        if formats is not None:
            config = dataclasses.replace(config, formats=formats)
        if log_level is not None:
            config = dataclasses.replace(config, log_level=log_level)
        if seed is not None:
            if config.synth is None:
                raise ConfigError("--seed only applies to synthetic runs")
            config = dataclasses.replace(
                config, synth=dataclasses.replace(config.synth, seed=seed)
            )
    except ConfigError as exc:
        emit_error(2, "config", str(exc))
        return 2

    handler = configure_logging(config.out_dir, config.log_level)
    try:
        execute(config, config.out_dir)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        emit_error(2, "config", str(exc))
        return 2
    except DataError as exc:
        logger.error("data error: %s", exc)
        emit_error(3, "data", str(exc))
        return 3
    except NumericalError as exc:
        logger.error("numerical error: %s", exc)
        emit_error(4, "numerical", str(exc))
        return 4
    finally:
        logging.getLogger("gravipanel").removeHandler(handler)
        handler.close()
    return 0
