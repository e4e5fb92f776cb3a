"""Deterministic synthetic panels with known coefficients, used by the
estimator and unit-root verification suites.

Every variable draws from its own seed stream derived from (seed, variable
name), so adding a variable to a configuration never perturbs the draws of
existing ones, and identical configurations are bit-reproducible.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from itertools import product
from string import ascii_uppercase

import numpy as np

from .panel import EntityId, PanelDataset

REPORTER = "EXP"

# Fixed loading of the second excluded instrument on the endogenous
# regressor; keeps that instrument relevant in overidentified designs.
EXTRA_INSTRUMENT_LOADING = 0.3


@dataclass(frozen=True)
class DgpConfig:
    """Configuration of one synthetic data-generating process.

    ``beta_true`` maps generated regressor names to their coefficients; a
    "const" key sets the intercept.  ``unit_root`` marks regressors generated
    as driftless random walks instead of white noise.
    ``endogeneity_rho`` correlates the first regressor with the error,
    ``instrument_strength`` is the loading of the valid excluded instrument
    on that regressor, and ``invalid_instrument_corr`` correlates the second
    excluded instrument with the error (0 keeps it valid).
    ``effect_regressor_corr`` leaks the entity effect into the first
    regressor, which invalidates random effects.
    """

    n_entities: int
    n_periods: int
    beta_true: dict[str, float]
    sigma_entity: float = 0.0
    sigma_idio: float = 1.0
    endogeneity_rho: float = 0.0
    instrument_strength: float = 1.0
    invalid_instrument_corr: float = 0.0
    effect_regressor_corr: float = 0.0
    unit_root: dict[str, bool] = field(default_factory=dict)
    start_year: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_entities < 1 or self.n_periods < 1:
            raise ValueError("panel dimensions must be positive")
        if not self.regressor_names:
            raise ValueError("beta_true must name at least one regressor")
        if self.sigma_entity < 0 or self.sigma_idio < 0:
            raise ValueError("variance scales must be non-negative")
        if not -1.0 <= self.endogeneity_rho <= 1.0:
            raise ValueError("endogeneity_rho must lie in [-1, 1]")
        if self.instrument_strength < 0:
            raise ValueError("instrument_strength must be >= 0")
        if not -1.0 <= self.invalid_instrument_corr <= 1.0:
            raise ValueError("invalid_instrument_corr must lie in [-1, 1]")
        unknown = set(self.unit_root) - set(self.beta_true)
        if unknown:
            raise ValueError(f"unit_root names unknown variables: {sorted(unknown)}")

    @property
    def regressor_names(self) -> tuple[str, ...]:
        return tuple(name for name in self.beta_true if name != "const")


def _stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named variable of one configuration."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode()),))
    )


def _entities(n: int) -> tuple[EntityId, ...]:
    codes = []
    for letters in product(ascii_uppercase, repeat=3):
        code = "".join(letters)
        if code == REPORTER:
            continue
        codes.append(code)
        if len(codes) == n:
            break
    else:
        raise ValueError(f"cannot generate {n} distinct partner codes")
    return tuple(sorted(EntityId(REPORTER, c) for c in codes))


def _full_dataset(
    entities: tuple[EntityId, ...], years: tuple[int, ...], grids: dict[str, np.ndarray]
) -> PanelDataset:
    shape = (len(entities), len(years))
    return PanelDataset(
        entities=entities,
        times=years,
        variables={name: grid.astype(float) for name, grid in grids.items()},
        mask={name: np.ones(shape, dtype=bool) for name in grids},
    )


def _draw_regressor(cfg: DgpConfig, name: str, shape: tuple[int, int]) -> np.ndarray:
    draws = _stream(cfg.seed, name).standard_normal(shape)
    if cfg.unit_root.get(name, False):
        return np.cumsum(draws, axis=1)
    return draws


def generate_gravity_panel(cfg: DgpConfig) -> tuple[PanelDataset, dict[str, float]]:
    """Linear panel outcome y = const + beta'x + u_i + eps_it in logs.

    Regressors are standard normal white noise, or driftless random walks
    where flagged in ``cfg.unit_root``.  Returns the dataset and the true
    coefficient map.
    """
    entities = _entities(cfg.n_entities)
    years = tuple(range(cfg.start_year, cfg.start_year + cfg.n_periods))
    shape = (cfg.n_entities, cfg.n_periods)

    grids = {name: _draw_regressor(cfg, name, shape) for name in cfg.regressor_names}

    effects = cfg.sigma_entity * _stream(cfg.seed, "entity_effect").standard_normal(
        cfg.n_entities
    )
    if cfg.effect_regressor_corr != 0.0:
        first = cfg.regressor_names[0]
        grids[first] = grids[first] + cfg.effect_regressor_corr * effects[:, None]

    eps = cfg.sigma_idio * _stream(cfg.seed, "idiosyncratic").standard_normal(shape)
    y = cfg.beta_true.get("const", 0.0) + effects[:, None] + eps
    for name in cfg.regressor_names:
        y = y + cfg.beta_true[name] * grids[name]
    grids["y"] = y

    return _full_dataset(entities, years, grids), dict(cfg.beta_true)


def generate_endogenous_panel(cfg: DgpConfig) -> tuple[PanelDataset, dict[str, float]]:
    """Panel with one endogenous regressor and two excluded instruments.

    The first regressor named in ``beta_true`` correlates with the error at
    ``endogeneity_rho``.  Instrument "z_iv" loads on it at
    ``instrument_strength`` and is independent of the error; instrument
    "z_extra" loads at a fixed 0.3 and correlates with the error at
    ``invalid_instrument_corr`` (zero keeps it a valid overidentifying
    instrument).
    """
    entities = _entities(cfg.n_entities)
    years = tuple(range(cfg.start_year, cfg.start_year + cfg.n_periods))
    shape = (cfg.n_entities, cfg.n_periods)

    eps_std = _stream(cfg.seed, "idiosyncratic").standard_normal(shape)
    z_iv = _stream(cfg.seed, "z_iv").standard_normal(shape)
    rho_bad = cfg.invalid_instrument_corr
    z_extra = rho_bad * eps_std + np.sqrt(max(0.0, 1.0 - rho_bad**2)) * _stream(
        cfg.seed, "z_extra"
    ).standard_normal(shape)

    names = cfg.regressor_names
    endog = names[0]
    rho = cfg.endogeneity_rho
    grids: dict[str, np.ndarray] = {}
    grids[endog] = (
        cfg.instrument_strength * z_iv
        + EXTRA_INSTRUMENT_LOADING * z_extra
        + rho * eps_std
        + np.sqrt(max(0.0, 1.0 - rho**2))
        * _stream(cfg.seed, "endog_noise").standard_normal(shape)
    )
    for name in names[1:]:
        grids[name] = _draw_regressor(cfg, name, shape)

    effects = cfg.sigma_entity * _stream(cfg.seed, "entity_effect").standard_normal(
        cfg.n_entities
    )
    eps = cfg.sigma_idio * eps_std
    y = cfg.beta_true.get("const", 0.0) + effects[:, None] + eps
    for name in names:
        y = y + cfg.beta_true[name] * grids[name]

    grids["y"] = y
    grids["z_iv"] = z_iv
    grids["z_extra"] = z_extra

    return _full_dataset(entities, years, grids), dict(cfg.beta_true)
