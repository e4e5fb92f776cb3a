"""Run configuration: a flat INI file with typed sections, parsed into the
model, estimator, and pipeline settings.

Regressors and unit-root variables are written as small expressions over
panel variables, e.g. ``log(gdp_importer)``, ``lag2(log(ifl))``, or
``apec:dummy``; the outermost function is applied last.  See
``configs/synthetic.ini`` for a complete example and the README for the full
schema.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .estimators import GmmSpec
from .panel import ModelSpec, RegressorSpec, Transform
from .synth import DgpConfig

VARIANTS = ("GMP", "CTP", "RTP", "synthetic")
FORMATS = ("markdown", "csv")

_FUNC = re.compile(r"^(log1p|log|lag(\d+))\((.*)\)$", re.DOTALL)


def parse_expression(text: str) -> tuple[str, tuple[Transform, ...], str]:
    """Parse ``lag2(log(ifl)):dummy`` into (source, transforms, role)."""
    text = text.strip()
    role = "continuous"
    if ":" in text:
        text, _, role = text.rpartition(":")
        role = role.strip()
        text = text.strip()
        if role not in ("continuous", "dummy"):
            raise ConfigError(f"unknown regressor role {role!r}")

    transforms: list[Transform] = []
    while True:
        match = _FUNC.match(text)
        if not match:
            break
        func, lag_k, inner = match.groups()
        if func == "log":
            transforms.append(Transform.log())
        elif func == "log1p":
            transforms.append(Transform.log1p())
        else:
            transforms.append(Transform.lag(int(lag_k)))
        text = inner.strip()
    if not re.fullmatch(r"\w+", text):
        raise ConfigError(f"cannot parse variable expression {text!r}")
    # Outermost function applies last.
    return text, tuple(reversed(transforms)), role


def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


@dataclass(frozen=True)
class IngestInputs:
    trade_csv: Path
    indicators_csv: Path
    pair_static_csv: Path
    memberships_csv: Path
    window: tuple[int, int]


@dataclass(frozen=True)
class UnitrootOptions:
    variables: tuple[tuple[str, tuple[Transform, ...]], ...]
    lags: int = 1
    deterministics: str = "c"


@dataclass(frozen=True)
class RunConfig:
    variant: str
    model: ModelSpec
    out_dir: Path
    formats: tuple[str, ...] = ("markdown", "csv")
    log_level: str = "INFO"
    hausman_alpha: float = 0.05
    inputs: IngestInputs | None = None
    synth: DgpConfig | None = None
    synth_generator: str = "gravity"
    unitroot: UnitrootOptions | None = None
    labels: dict[str, str] = field(default_factory=dict)


def _require(parser: configparser.ConfigParser, section: str, key: str) -> str:
    if not parser.has_option(section, key):
        raise ConfigError(f"missing [{section}] {key}")
    return parser.get(section, key)


def _parse_regressor(entry: str) -> RegressorSpec:
    source, transforms, role = parse_expression(entry)
    return RegressorSpec(source=source, transforms=transforms, role=role)


def _parse_model(parser: configparser.ConfigParser) -> ModelSpec:
    dependent_expr = _require(parser, "model", "dependent")
    dep_source, dep_transforms, dep_role = parse_expression(dependent_expr)
    if dep_role != "continuous":
        raise ConfigError("dependent variable cannot be a dummy")
    regressors = tuple(
        _parse_regressor(entry) for entry in _split_list(_require(parser, "model", "regressors"))
    )
    if not regressors:
        raise ConfigError("[model] regressors must name at least one regressor")
    chain = tuple(
        _split_list(parser.get("estimators", "chain", fallback="fixed_effects, random_effects"))
    )

    gmm = None
    if parser.has_section("gmm"):
        endogenous = tuple(_split_list(_require(parser, "gmm", "endogenous")))
        instruments = tuple(
            _parse_regressor(entry)
            for entry in _split_list(_require(parser, "gmm", "instruments"))
        )
        weighting = parser.get("gmm", "weighting", fallback="two_step_robust")
        try:
            gmm = GmmSpec(endogenous=endogenous, instruments=instruments, weighting=weighting)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif "iv_gmm" in chain:
        gmm = _default_gmm(regressors)

    try:
        return ModelSpec(
            dependent=dep_source,
            dependent_transform=dep_transforms,
            regressors=regressors,
            include_intercept=parser.getboolean("model", "intercept", fallback=True),
            estimator_chain=chain,
            gmm=gmm,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _default_gmm(regressors: tuple[RegressorSpec, ...]) -> GmmSpec:
    """Default instrumentation: the exporter-GDP column is endogenous and its
    one-period lag is the excluded instrument."""
    target = next((r for r in regressors if r.source == "gdp_exporter"), None)
    if target is None:
        raise ConfigError(
            "iv_gmm in the chain needs a [gmm] section (no gdp_exporter regressor "
            "to instrument by default)"
        )
    lagged = RegressorSpec(
        source=target.source, transforms=target.transforms + (Transform.lag(1),)
    )
    return GmmSpec(endogenous=(target.column_name,), instruments=(lagged,))


def _parse_synth(parser: configparser.ConfigParser) -> tuple[DgpConfig, str]:
    beta: dict[str, float] = {}
    for key, raw in parser.items("synth"):
        if key.startswith("beta."):
            beta[key[len("beta.") :]] = float(raw)
    if not beta:
        raise ConfigError("[synth] needs at least one beta.<name> coefficient")
    unit_root = {name: True for name in _split_list(parser.get("synth", "unit_root", fallback=""))}
    generator = parser.get("synth", "generator", fallback="gravity")
    if generator not in ("gravity", "endogenous"):
        raise ConfigError(f"unknown synth generator {generator!r}")
    try:
        cfg = DgpConfig(
            n_entities=parser.getint("synth", "n_entities"),
            n_periods=parser.getint("synth", "n_periods"),
            beta_true=beta,
            sigma_entity=parser.getfloat("synth", "sigma_entity", fallback=0.0),
            sigma_idio=parser.getfloat("synth", "sigma_idio", fallback=1.0),
            endogeneity_rho=parser.getfloat("synth", "endogeneity_rho", fallback=0.0),
            instrument_strength=parser.getfloat("synth", "instrument_strength", fallback=1.0),
            invalid_instrument_corr=parser.getfloat(
                "synth", "invalid_instrument_corr", fallback=0.0
            ),
            effect_regressor_corr=parser.getfloat("synth", "effect_regressor_corr", fallback=0.0),
            unit_root=unit_root,
            start_year=parser.getint("synth", "start_year", fallback=2000),
            seed=parser.getint("synth", "seed", fallback=0),
        )
    except (ValueError, configparser.Error) as exc:
        raise ConfigError(f"bad [synth] section: {exc}") from exc
    return cfg, generator


def _parse_window(raw: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d{4}):(\d{4})", raw.strip())
    if not match:
        raise ConfigError(f"window must look like 2006:2015, got {raw!r}")
    return int(match.group(1)), int(match.group(2))


def _parse_unitroot(parser: configparser.ConfigParser) -> UnitrootOptions | None:
    if not parser.has_section("unitroot"):
        return None
    variables = []
    for entry in _split_list(_require(parser, "unitroot", "variables")):
        source, transforms, role = parse_expression(entry)
        if role != "continuous":
            raise ConfigError("unit-root variables cannot be dummies")
        variables.append((source, transforms))
    deterministics = parser.get("unitroot", "deterministics", fallback="c")
    if deterministics not in ("c", "ct"):
        raise ConfigError(f"deterministics must be c or ct, got {deterministics!r}")
    return UnitrootOptions(
        variables=tuple(variables),
        lags=parser.getint("unitroot", "lags", fallback=1),
        deterministics=deterministics,
    )


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a run configuration file.

    Raises ConfigError for unreadable files, unknown keys in closed enums,
    and model specifications that violate their invariants.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    if not parser.has_section("run"):
        raise ConfigError("missing [run] section")
    variant = _require(parser, "run", "variant")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")

    formats = tuple(_split_list(parser.get("run", "formats", fallback="markdown,csv")))
    for fmt in formats:
        if fmt not in FORMATS:
            raise ConfigError(f"unknown output format {fmt!r}")
    if not formats:
        raise ConfigError("at least one output format is required")

    inputs = None
    synth_cfg = None
    generator = "gravity"
    if variant == "synthetic":
        if not parser.has_section("synth"):
            raise ConfigError("synthetic variant needs a [synth] section")
        synth_cfg, generator = _parse_synth(parser)
        if parser.has_option("run", "seed"):
            synth_cfg = dataclasses.replace(synth_cfg, seed=parser.getint("run", "seed"))
    else:
        if not parser.has_section("inputs"):
            raise ConfigError(f"variant {variant} needs an [inputs] section")
        inputs = IngestInputs(
            trade_csv=Path(_require(parser, "inputs", "trade_csv")),
            indicators_csv=Path(_require(parser, "inputs", "indicators_csv")),
            pair_static_csv=Path(_require(parser, "inputs", "pair_static_csv")),
            memberships_csv=Path(_require(parser, "inputs", "memberships_csv")),
            window=_parse_window(_require(parser, "inputs", "window")),
        )

    labels = dict(parser.items("labels")) if parser.has_section("labels") else {}

    alpha = parser.getfloat("run", "hausman_alpha", fallback=0.05)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"hausman_alpha must lie in (0, 1), got {alpha}")

    return RunConfig(
        variant=variant,
        model=_parse_model(parser),
        out_dir=Path(parser.get("run", "out", fallback="out")),
        formats=formats,
        log_level=parser.get("run", "log_level", fallback="INFO"),
        hausman_alpha=alpha,
        inputs=inputs,
        synth=synth_cfg,
        synth_generator=generator,
        unitroot=_parse_unitroot(parser),
        labels=labels,
    )
