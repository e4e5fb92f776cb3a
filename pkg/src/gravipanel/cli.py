"""Command-line entry point.

Subcommands: ``run`` (full pipeline), ``ingest``, ``simulate``, ``unitroot``,
``estimate``, and ``report``.  All take a configuration file; ``--out``,
``--format``, ``--seed``, and ``--log-level`` override its values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, report
from .config import RunConfig, parse_config
from .diagnostics import TestResult
from .errors import ConfigError, DataError, NumericalError
from .estimators import EstimationResult
from .unitroot import FisherResult, IpsResult


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument(
        "--format",
        choices=["markdown", "csv", "both"],
        help="artifact formats (overrides the config)",
    )
    common.add_argument("--seed", type=int, help="synthetic seed override")
    common.add_argument("--log-level", help="logging level (overrides the config)")
    return common


def _formats(arg: str | None) -> tuple[str, ...] | None:
    if arg is None:
        return None
    return ("markdown", "csv") if arg == "both" else (arg,)


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = parse_config(args.config)
    if args.out:
        config = dataclasses.replace(config, out_dir=Path(args.out))
    formats = _formats(args.format)
    if formats:
        config = dataclasses.replace(config, formats=formats)
    if args.log_level:
        config = dataclasses.replace(config, log_level=args.log_level)
    if args.seed is not None:
        if config.synth is None:
            raise ConfigError("--seed only applies to synthetic runs")
        config = dataclasses.replace(
            config, synth=dataclasses.replace(config.synth, seed=args.seed)
        )
    return config


def _guarded(stage: str, fn) -> int:
    try:
        fn()
    except ConfigError as exc:
        pipeline.emit_error(2, stage, str(exc))
        return 2
    except DataError as exc:
        pipeline.emit_error(3, stage, str(exc))
        return 3
    except NumericalError as exc:
        pipeline.emit_error(4, stage, str(exc))
        return 4
    return 0


def _dump_panel(dataset, out_dir: Path) -> None:
    lines = ["reporter,partner,year,variable,value"]
    for name in sorted(dataset.variables):
        grid = dataset.variables[name]
        mask = dataset.mask[name]
        for i, entity in enumerate(dataset.entities):
            for j, year in enumerate(dataset.times):
                if mask[i, j]:
                    lines.append(
                        f"{entity.reporter},{entity.partner},{year},{name},{grid[i, j]!r}"
                    )
    (out_dir / "panel.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _with_logging(config: RunConfig, fn) -> None:
    handler = pipeline.configure_logging(config.out_dir, config.log_level)
    try:
        fn()
    finally:
        logging.getLogger("gravipanel").removeHandler(handler)
        handler.close()


def _cmd_ingest(args: argparse.Namespace) -> int:
    def body() -> None:
        config = _load_config(args)

        def stages() -> None:
            dataset = pipeline.load_dataset(config)
            _dump_panel(dataset, config.out_dir)

        _with_logging(config, stages)

    return _guarded("ingest", body)


def _cmd_simulate(args: argparse.Namespace) -> int:
    def body() -> None:
        config = _load_config(args)
        if config.variant != "synthetic":
            raise ConfigError("simulate requires variant = synthetic")

        def stages() -> None:
            from . import synth

            assert config.synth is not None
            generate = (
                synth.generate_endogenous_panel
                if config.synth_generator == "endogenous"
                else synth.generate_gravity_panel
            )
            dataset, truth = generate(config.synth)
            _dump_panel(dataset, config.out_dir)
            (config.out_dir / "truth.json").write_text(
                json.dumps(truth, indent=2), encoding="utf-8"
            )

        _with_logging(config, stages)

    return _guarded("simulate", body)


def _cmd_unitroot(args: argparse.Namespace) -> int:
    def body() -> None:
        config = _load_config(args)
        if config.unitroot is None:
            raise ConfigError("no [unitroot] section in the configuration")

        def stages() -> None:
            dataset = pipeline.load_dataset(config)
            rows = pipeline.run_unitroot(config, dataset)
            pipeline.write_tables(
                config.out_dir,
                "unitroot",
                config.formats,
                report.render_unitroot_table(rows),
                report.render_unitroot_csv(rows),
            )

        _with_logging(config, stages)

    return _guarded("unitroot", body)


def _cmd_estimate(args: argparse.Namespace) -> int:
    def body() -> None:
        config = _load_config(args)

        def stages() -> None:
            dataset = pipeline.load_dataset(config)
            results, test, hausman_cols, problem = pipeline.run_estimation(
                config, dataset, escalation=False
            )
            order = [c.name for c in problem.columns if c.name != "const"]
            pipeline.write_tables(
                config.out_dir,
                "estimates",
                config.formats,
                report.render_coefficient_table(results, order, test, config.labels),
                report.render_coefficient_csv(results, order, test, config.labels),
            )
            if test is not None and hausman_cols is not None:
                b, B, se_diff = hausman_cols
                pipeline.write_tables(
                    config.out_dir,
                    "hausman",
                    config.formats,
                    report.render_hausman_block(test, b, B, se_diff),
                    report.render_hausman_csv(test, b, B, se_diff),
                )
            pipeline.write_results_json(
                config.out_dir, results, test, hausman_cols, [], order, config.labels
            )

        _with_logging(config, stages)

    return _guarded("estimate", body)


def _result_from_payload(payload: dict) -> EstimationResult:
    names = list(payload["coefficients"])
    ses = np.array([payload["std_errors"][n] for n in names], dtype=float)
    return EstimationResult(
        method=payload["method"],
        coefficients={n: float(v) for n, v in payload["coefficients"].items()},
        std_errors={n: float(v) for n, v in payload["std_errors"].items()},
        covariance=np.diag(ses**2),
        residuals=np.empty(0),
        n_obs=int(payload["n_obs"]),
        df_resid=int(payload["df_resid"]),
        r_squared=float(payload["r_squared"]),
        extras=payload.get("extras", {}),
    )


def _cmd_report(args: argparse.Namespace) -> int:
    def body() -> None:
        config = _load_config(args)
        results_path = config.out_dir / "results.json"
        if not results_path.is_file():
            raise DataError(f"results file not found: {results_path}")
        payload = json.loads(results_path.read_text(encoding="utf-8"))

        results = [_result_from_payload(item) for item in payload["results"]]
        order = payload["order"]
        labels = payload.get("labels", {})
        test = None
        hausman_cols = None
        if payload.get("hausman"):
            block = payload["hausman"]
            test = TestResult(
                name="hausman",
                statistic=block["statistic"],
                df=block["df"],
                p_value=block["p_value"],
                flags=frozenset(block.get("flags", [])),
            )
            hausman_cols = (block["b"], block["B"], block["se_diff"])

        if results:
            pipeline.write_tables(
                config.out_dir,
                "estimates",
                config.formats,
                report.render_coefficient_table(results, order, test, labels),
                report.render_coefficient_csv(results, order, test, labels),
            )
        if test is not None and hausman_cols is not None:
            b, B, se_diff = hausman_cols
            pipeline.write_tables(
                config.out_dir,
                "hausman",
                config.formats,
                report.render_hausman_block(test, b, B, se_diff),
                report.render_hausman_csv(test, b, B, se_diff),
            )
        unitroot_rows = []
        for row in payload.get("unitroot", []):
            ips = fisher = None
            if row.get("ips_w") is not None:
                ips = IpsResult(
                    t_bar=row.get("ips_t_bar", row["ips_w"]),
                    w_stat=row["ips_w"],
                    n_series=row.get("ips_n_series", 2),
                    p_value=row["ips_p"],
                    per_series=(),
                )
            if row.get("fisher_statistic") is not None:
                fisher = FisherResult(
                    statistic=row["fisher_statistic"],
                    df=row["fisher_df"],
                    p_value=row["fisher_p"],
                    per_series=(),
                )
            unitroot_rows.append((row["variable"], ips, fisher))
        if unitroot_rows:
            pipeline.write_tables(
                config.out_dir,
                "unitroot",
                config.formats,
                report.render_unitroot_table(unitroot_rows),
                report.render_unitroot_csv(unitroot_rows),
            )

    return _guarded("report", body)


def _cmd_run(args: argparse.Namespace) -> int:
    return pipeline.run_pipeline(
        args.config,
        out_dir=args.out,
        formats=_formats(args.format),
        seed=args.seed,
        log_level=args.log_level,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gravipanel", description=__doc__)
    common = _common_parser()
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("run", parents=[common], help="full pipeline").set_defaults(
        handler=_cmd_run
    )
    subparsers.add_parser("ingest", parents=[common], help="assemble and dump the panel").set_defaults(
        handler=_cmd_ingest
    )
    subparsers.add_parser("simulate", parents=[common], help="generate a synthetic panel").set_defaults(
        handler=_cmd_simulate
    )
    subparsers.add_parser("unitroot", parents=[common], help="unit-root pretests only").set_defaults(
        handler=_cmd_unitroot
    )
    subparsers.add_parser("estimate", parents=[common], help="run the estimator chain").set_defaults(
        handler=_cmd_estimate
    )
    subparsers.add_parser("report", parents=[common], help="re-render tables from results.json").set_defaults(
        handler=_cmd_report
    )
    args = parser.parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
