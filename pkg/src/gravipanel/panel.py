"""Panel data model: entity-by-year variable grids, transforms, and the
construction of numeric regression problems from declarative model specs.

Entities are directed country pairs (reporter, partner); time is annual.
Datasets and regression problems are immutable once built, so they are safe
to share across threads and to reuse between estimators.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, Mapping

import numpy as np

from .errors import DataError

if TYPE_CHECKING:
    from .estimators import GmmSpec

_ISO3 = re.compile(r"^[A-Z]{3}$")

# Cell status codes used while realizing design columns.
_OK = 0
_MISSING = 1
_LOG_DOMAIN = 2
_LAG_MISSING = 3

DUMMY_PREDICATES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "nonzero": lambda v: v != 0.0,
    "positive": lambda v: v > 0.0,
}


@dataclass(frozen=True, order=True)
class EntityId:
    """Directed country pair: exports flow reporter -> partner."""

    reporter: str
    partner: str

    def __post_init__(self) -> None:
        for code in (self.reporter, self.partner):
            if not _ISO3.match(code):
                raise DataError(f"country code must be 3 uppercase letters, got {code!r}")
        if self.reporter == self.partner:
            raise DataError(f"reporter and partner must differ, got {self.reporter!r} twice")

    def __str__(self) -> str:
        return f"{self.reporter}-{self.partner}"


@dataclass(frozen=True)
class Transform:
    """One variable operation: elementwise map, time shift, or pairing.

    kind is one of identity, log, log1p, lag, absdiff, dummy.  ``k`` is the
    lag order (lag only), ``other`` the second source variable (absdiff
    only), ``predicate`` a key of DUMMY_PREDICATES (dummy only).
    """

    kind: str
    k: int = 0
    other: str | None = None
    predicate: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "log", "log1p", "lag", "absdiff", "dummy"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "lag" and self.k < 1:
            raise ValueError(f"lag order must be >= 1, got {self.k}")
        if self.kind == "absdiff" and not self.other:
            raise ValueError("absdiff requires a second source variable")
        if self.kind == "dummy" and self.predicate not in DUMMY_PREDICATES:
            raise ValueError(f"unknown dummy predicate {self.predicate!r}")

    @classmethod
    def log(cls) -> "Transform":
        return cls("log")

    @classmethod
    def log1p(cls) -> "Transform":
        return cls("log1p")

    @classmethod
    def lag(cls, k: int) -> "Transform":
        return cls("lag", k=k)

    @classmethod
    def absdiff(cls, other: str) -> "Transform":
        return cls("absdiff", other=other)

    @classmethod
    def dummy(cls, predicate: str) -> "Transform":
        return cls("dummy", predicate=predicate)

    @classmethod
    def identity(cls) -> "Transform":
        return cls("identity")

    def derive_name(self, name: str) -> str:
        if self.kind == "log":
            return f"ln_{name}"
        if self.kind == "log1p":
            return f"ln1p_{name}"
        if self.kind == "lag":
            return f"l{self.k}_{name}"
        if self.kind == "absdiff":
            return f"absdiff_{name}_{self.other}"
        if self.kind == "dummy":
            return f"is_{self.predicate}_{name}"
        return name


@dataclass(frozen=True)
class TransformSpec:
    """A Transform bound to a source variable and a new target name."""

    source: str
    target: str
    transform: Transform


@dataclass(frozen=True)
class PanelDataset:
    """Rectangular entity-by-year store of named variables with a presence mask.

    ``variables[name]`` is a float grid of shape (n_entities, n_times);
    ``mask[name]`` is a same-shaped boolean grid, True where a value is
    present.  Masked cells hold NaN.  Instances are immutable: grids are made
    non-writeable at construction and transforms return new datasets.
    """

    entities: tuple[EntityId, ...]
    times: tuple[int, ...]
    variables: dict[str, np.ndarray]
    mask: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if tuple(sorted(self.entities)) != self.entities:
            raise DataError("entities must be sorted ascending")
        if tuple(sorted(self.times)) != self.times or len(set(self.times)) != len(self.times):
            raise DataError("times must be strictly ascending")
        shape = (len(self.entities), len(self.times))
        if set(self.variables) != set(self.mask):
            raise DataError("variables and mask must cover the same names")
        for name, grid in self.variables.items():
            m = self.mask[name]
            if grid.shape != shape or m.shape != shape:
                raise DataError(f"grid shape mismatch for {name!r}")
            if m.dtype != np.bool_:
                raise DataError(f"mask for {name!r} must be boolean")
            if not np.all(np.isfinite(grid[m])):
                raise DataError(f"non-finite value stored as present in {name!r}")
            grid.flags.writeable = False
            m.flags.writeable = False

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_times(self) -> int:
        return len(self.times)

    def entity_index(self, entity: EntityId) -> int:
        return self.entities.index(entity)

    def time_index(self, year: int) -> int:
        return self.times.index(year)

    def has_variable(self, name: str) -> bool:
        return name in self.variables

    def with_variable(self, name: str, values: np.ndarray, mask: np.ndarray) -> "PanelDataset":
        """Return a new dataset with one variable added; sources are shared."""
        if name in self.variables:
            raise DataError(f"variable already exists: {name}")
        values = np.array(values, dtype=float)
        mask = np.array(mask, dtype=bool)
        values[~mask] = np.nan
        return PanelDataset(
            entities=self.entities,
            times=self.times,
            variables={**self.variables, name: values},
            mask={**self.mask, name: mask},
        )

    def entity_series(self, name: str, entity: EntityId) -> tuple[np.ndarray, np.ndarray]:
        """Present (years, values) for one variable and entity, time-ordered."""
        i = self.entity_index(entity)
        m = self.mask[name][i]
        return np.asarray(self.times)[m], self.variables[name][i][m]


def build_panel(
    observations: Iterable[tuple[EntityId, int, str, float]],
) -> PanelDataset:
    """Assemble a PanelDataset from (entity, year, variable, value) records.

    Entity and time orderings are lexicographic ascending regardless of
    insertion order, so identical record sets produce bit-identical grids.

    Raises
    ------
    DataError
        On a duplicate (entity, year, variable) key (the key is named in the
        message) or a non-finite value.
    """
    records = list(observations)
    entities = tuple(sorted({r[0] for r in records}))
    times = tuple(sorted({r[1] for r in records}))
    names = sorted({r[2] for r in records})
    e_idx = {e: i for i, e in enumerate(entities)}
    t_idx = {t: j for j, t in enumerate(times)}

    shape = (len(entities), len(times))
    variables = {name: np.full(shape, np.nan) for name in names}
    mask = {name: np.zeros(shape, dtype=bool) for name in names}
    for entity, year, name, value in records:
        i, j = e_idx[entity], t_idx[year]
        if mask[name][i, j]:
            raise DataError(f"duplicate observation ({entity}, {year}, {name})")
        if not np.isfinite(value):
            raise DataError(f"non-finite value for ({entity}, {year}, {name})")
        variables[name][i, j] = float(value)
        mask[name][i, j] = True
    return PanelDataset(entities=entities, times=times, variables=variables, mask=mask)


def _apply_step(
    dataset: PanelDataset,
    values: np.ndarray,
    status: np.ndarray,
    name: str,
    step: Transform,
) -> tuple[np.ndarray, np.ndarray, str]:
    """Apply one transform step to a (values, status) grid pair.

    Status uses the module cell codes; only _OK cells carry usable values.
    Returns the new grids plus the derived running name.
    """
    out = values.copy()
    st = status.copy()
    ok = st == _OK
    if step.kind == "identity":
        pass
    elif step.kind == "log":
        bad = ok & (values <= 0.0)
        st[bad] = _LOG_DOMAIN
        good = ok & ~bad
        out[good] = np.log(values[good])
    elif step.kind == "log1p":
        bad = ok & (values <= -1.0)
        st[bad] = _LOG_DOMAIN
        good = ok & ~bad
        out[good] = np.log1p(values[good])
    elif step.kind == "lag":
        out = np.full_like(values, np.nan)
        st = np.full_like(status, _LAG_MISSING)
        year_pos = {t: j for j, t in enumerate(dataset.times)}
        for j, t in enumerate(dataset.times):
            jp = year_pos.get(t - step.k)
            if jp is None:
                continue
            usable = status[:, jp] == _OK
            out[usable, j] = values[usable, jp]
            st[usable, j] = _OK
    elif step.kind == "absdiff":
        if step.other not in dataset.variables:
            raise DataError(f"unknown source variable: {step.other}")
        b = dataset.variables[step.other]
        b_ok = dataset.mask[step.other]
        good = ok & b_ok
        st[ok & ~b_ok] = _MISSING
        out[good] = np.abs(values[good] - b[good])
    elif step.kind == "dummy":
        pred = DUMMY_PREDICATES[step.predicate or ""]
        out[ok] = pred(values[ok]).astype(float)
    out[st != _OK] = np.nan
    return out, st, step.derive_name(name)


def _realize(
    dataset: PanelDataset, source: str, transforms: tuple[Transform, ...]
) -> tuple[np.ndarray, np.ndarray, str]:
    """Evaluate a transform chain over the full grid without raising on
    per-cell failures; failures are recorded in the status grid instead."""
    if source not in dataset.variables:
        raise DataError(f"unknown source variable: {source}")
    values = dataset.variables[source].copy()
    status = np.where(dataset.mask[source], _OK, _MISSING).astype(np.int8)
    name = source
    for step in transforms:
        values, status, name = _apply_step(dataset, values, status, name, step)
    return values, status, name


def realize_variable(
    dataset: PanelDataset, source: str, transforms: tuple[Transform, ...]
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a transform chain into (values, present_mask) grids.

    Cells that are missing, out of log domain, or lagged past the window are
    masked absent rather than raised, which suits exploratory consumers like
    the unit-root pretests.
    """
    values, status, _ = _realize(dataset, source, transforms)
    return values, status == _OK


def apply_transform(dataset: PanelDataset, spec: TransformSpec) -> PanelDataset:
    """Add ``spec.target`` computed from ``spec.source`` via ``spec.transform``.

    Unlike design-matrix realization, which drops and logs offending rows,
    this operation is strict: a log of a non-positive present value raises,
    naming the entity, year, and variable.  Lagged-out cells are masked
    absent, not errors.
    """
    values, status, _ = _realize(dataset, spec.source, (spec.transform,))
    bad = np.argwhere(status == _LOG_DOMAIN)
    if bad.size:
        i, j = bad[0]
        raise DataError(
            f"log domain: {spec.source} <= 0 at ({dataset.entities[i]}, {dataset.times[j]})"
        )
    return dataset.with_variable(spec.target, values, status == _OK)


@dataclass(frozen=True)
class RegressorSpec:
    """One right-hand-side variable of a model.

    ``transforms`` are applied left to right; a lag placed after a log lags
    the logged series.  Dummies enter the linear predictor untransformed, so
    log-family transforms are rejected for role="dummy".
    """

    source: str
    transforms: tuple[Transform, ...] = ()
    role: str = "continuous"
    label: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ("continuous", "dummy"):
            raise ValueError(f"role must be continuous or dummy, got {self.role!r}")
        if self.role == "dummy" and any(t.kind in ("log", "log1p") for t in self.transforms):
            raise ValueError(f"dummy regressor {self.source!r} must not be log-transformed")

    @property
    def column_name(self) -> str:
        if self.label:
            return self.label
        name = self.source
        for t in self.transforms:
            name = t.derive_name(name)
        return name


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one regression run.

    The dependent variable is named by ``dependent`` with transforms in
    ``dependent_transform`` (typically a single log).  ``estimator_chain``
    holds estimator tags in execution order; ``gmm`` configures iv_gmm when
    that tag is present.
    """

    dependent: str
    regressors: tuple[RegressorSpec, ...]
    include_intercept: bool = True
    dependent_transform: tuple[Transform, ...] = ()
    estimator_chain: tuple[str, ...] = ("fixed_effects", "random_effects")
    sample_filter: Callable[[EntityId, int], bool] | None = None
    gmm: "GmmSpec | None" = None

    def __post_init__(self) -> None:
        names = [r.column_name for r in self.regressors]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ValueError(f"duplicate regressor columns: {sorted(dupes)}")
        if self.dependent_name in names:
            raise ValueError(f"dependent {self.dependent_name!r} also appears as a regressor")
        known = ("pooled_ols", "fixed_effects", "random_effects", "iv_gmm")
        for tag in self.estimator_chain:
            if tag not in known:
                raise ValueError(f"unknown estimator tag {tag!r}")

    @property
    def dependent_name(self) -> str:
        name = self.dependent
        for t in self.dependent_transform:
            name = t.derive_name(name)
        return name


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    time_invariant: bool


@dataclass(frozen=True)
class RegressionProblem:
    """Realized numeric design: response, design matrix, row keys, drop log.

    Rows are ordered entity-major with years ascending.  ``drop_log`` pairs
    each excluded (entity, year) cell with a machine-readable reason; retained
    rows plus drop_log entries always account for every filtered panel cell.
    """

    y: np.ndarray
    X: np.ndarray
    row_keys: tuple[tuple[EntityId, int], ...]
    columns: tuple[ColumnMeta, ...]
    drop_log: tuple[tuple[tuple[EntityId, int], str], ...]
    instruments: np.ndarray | None = None
    instrument_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.X.shape != (len(self.row_keys), len(self.columns)):
            raise ValueError("design shape does not match row keys / column metadata")
        if self.y.shape != (len(self.row_keys),):
            raise ValueError("response length does not match row keys")
        self.y.flags.writeable = False
        self.X.flags.writeable = False
        if self.instruments is not None:
            if self.instruments.shape[0] != len(self.row_keys):
                raise ValueError("instrument rows do not match design rows")
            self.instruments.flags.writeable = False

    @property
    def n_obs(self) -> int:
        return len(self.row_keys)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        return self.column_names.index(name)

    def entity_groups(self) -> dict[EntityId, np.ndarray]:
        """Row indices per entity, in row order."""
        groups: dict[EntityId, list[int]] = {}
        for r, (entity, _) in enumerate(self.row_keys):
            groups.setdefault(entity, []).append(r)
        return {e: np.asarray(rows) for e, rows in groups.items()}

    def replace_data(
        self, y: np.ndarray, X: np.ndarray, columns: tuple[ColumnMeta, ...] | None = None
    ) -> "RegressionProblem":
        return RegressionProblem(
            y=y,
            X=X,
            row_keys=self.row_keys,
            columns=self.columns if columns is None else columns,
            drop_log=self.drop_log,
            instruments=self.instruments,
            instrument_names=self.instrument_names,
        )


_REASONS = {
    _MISSING: "missing: {name}",
    _LOG_DOMAIN: "log domain: {name}",
    _LAG_MISSING: "lagged predecessor missing: {name}",
}


def design_matrix(
    dataset: PanelDataset, spec: ModelSpec, *, with_instruments: bool = False
) -> RegressionProblem:
    """Realize ``spec`` against ``dataset`` into a RegressionProblem.

    Listwise deletion: a row is dropped when any required column (dependent,
    regressor, or excluded instrument when ``with_instruments``) is missing,
    out of log domain, or lacks its lag predecessor.  The first failing
    column, checked dependent-first then in spec order, names the drop
    reason.  Dummy columns are validated to be 0/1 on retained rows.
    """
    realized: list[tuple[np.ndarray, np.ndarray, str, str]] = []
    y_vals, y_status, _ = _realize(dataset, spec.dependent, spec.dependent_transform)
    realized.append((y_vals, y_status, spec.dependent_name, _log_reason_name(spec.dependent, spec.dependent_transform)))
    for reg in spec.regressors:
        vals, status, _ = _realize(dataset, reg.source, reg.transforms)
        realized.append((vals, status, reg.column_name, _log_reason_name(reg.source, reg.transforms)))

    inst_cols: list[tuple[np.ndarray, np.ndarray, str, str]] = []
    if with_instruments and spec.gmm is not None:
        for inst in spec.gmm.instruments:
            vals, status, _ = _realize(dataset, inst.source, inst.transforms)
            inst_cols.append((vals, status, inst.column_name, _log_reason_name(inst.source, inst.transforms)))

    row_keys: list[tuple[EntityId, int]] = []
    drop_log: list[tuple[tuple[EntityId, int], str]] = []
    flat: list[tuple[int, int]] = []
    for i, entity in enumerate(dataset.entities):
        for j, year in enumerate(dataset.times):
            key = (entity, year)
            if spec.sample_filter is not None and not spec.sample_filter(entity, year):
                drop_log.append((key, "sample filter"))
                continue
            reason = None
            for vals, status, _, reason_name in realized + inst_cols:
                code = int(status[i, j])
                if code != _OK:
                    reason = _REASONS[code].format(name=reason_name)
                    break
            if reason is not None:
                drop_log.append((key, reason))
            else:
                row_keys.append(key)
                flat.append((i, j))

    if not row_keys:
        raise DataError("no retained rows: every panel cell was dropped")

    ii = np.array([f[0] for f in flat])
    jj = np.array([f[1] for f in flat])
    y = realized[0][0][ii, jj]

    col_arrays: list[np.ndarray] = []
    columns: list[ColumnMeta] = []
    if spec.include_intercept:
        col_arrays.append(np.ones(len(row_keys)))
        columns.append(ColumnMeta("const", True))
    for (vals, _, name, _), reg in zip(realized[1:], spec.regressors):
        col = vals[ii, jj]
        if reg.role == "dummy":
            if not np.all((col == 0.0) | (col == 1.0)):
                raise DataError(f"dummy column {name!r} has values outside {{0, 1}}")
        col_arrays.append(col)
        columns.append(ColumnMeta(name, _is_time_invariant(col, ii)))
    names = [c.name for c in columns]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate design columns: {names}")

    X = np.column_stack(col_arrays) if col_arrays else np.empty((len(row_keys), 0))

    instruments = None
    inst_names: tuple[str, ...] = ()
    if inst_cols:
        instruments = np.column_stack([vals[ii, jj] for vals, _, _, _ in inst_cols])
        inst_names = tuple(name for _, _, name, _ in inst_cols)

    return RegressionProblem(
        y=y,
        X=X,
        row_keys=tuple(row_keys),
        columns=tuple(columns),
        drop_log=tuple(drop_log),
        instruments=instruments,
        instrument_names=inst_names,
    )


def _log_reason_name(source: str, transforms: tuple[Transform, ...]) -> str:
    """Name used in log-domain drop reasons: the series as it enters the
    first log step (the raw source unless an earlier step renamed it)."""
    name = source
    for t in transforms:
        if t.kind in ("log", "log1p"):
            return name
        name = t.derive_name(name)
    return name


def _is_time_invariant(col: np.ndarray, entity_rows: np.ndarray) -> bool:
    for e in np.unique(entity_rows):
        vals = col[entity_rows == e]
        if vals.size > 1 and not np.all(vals == vals[0]):
            return False
    return True


def demean_within(problem: RegressionProblem) -> tuple[RegressionProblem, list[str]]:
    """Subtract entity means from y and every column (the within transform).

    Columns with zero within-entity variance cannot be identified after
    demeaning; they are removed and returned in the dropped list (intercept
    and entity-level geography columns land here).

    Raises
    ------
    NumericalError
        If no entity has two or more observations, or every column is
        time-invariant.
    """
    from .errors import NumericalError

    groups = problem.entity_groups()
    if max(len(rows) for rows in groups.values()) < 2:
        raise NumericalError("within transform needs >= 2 observations for some entity")

    Xd = problem.X.copy()
    yd = problem.y.copy()
    for rows in groups.values():
        Xd[rows] -= Xd[rows].mean(axis=0)
        yd[rows] -= yd[rows].mean()

    dropped: list[str] = []
    keep: list[int] = []
    for c, meta in enumerate(problem.columns):
        scale = max(1.0, float(np.max(np.abs(problem.X[:, c]))) if problem.n_obs else 1.0)
        if float(np.max(np.abs(Xd[:, c]))) <= 1e-10 * scale:
            dropped.append(meta.name)
        else:
            keep.append(c)
    if not keep:
        raise NumericalError("no within variation: all columns are time-invariant")

    out = RegressionProblem(
        y=yd,
        X=Xd[:, keep],
        row_keys=problem.row_keys,
        columns=tuple(problem.columns[c] for c in keep),
        drop_log=problem.drop_log,
        instruments=problem.instruments,
        instrument_names=problem.instrument_names,
    )
    return out, dropped


def quasi_demean(
    problem: RegressionProblem, lambda_per_entity: Mapping[EntityId, float]
) -> RegressionProblem:
    """Subtract ``lambda_i`` times the entity mean from y and every column.

    lambda_i = 0 leaves an entity untouched; lambda_i = 1 reproduces the
    within transform for it.  The intercept column is quasi-demeaned like any
    other column, which is what turns pooled OLS on the output into GLS.
    """
    entities = {e for e, _ in problem.row_keys}
    for entity in entities:
        if entity not in lambda_per_entity:
            raise ValueError(f"no weight supplied for entity {entity}")
        lam = lambda_per_entity[entity]
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"weight for {entity} outside [0, 1]: {lam}")

    Xq = problem.X.copy()
    yq = problem.y.copy()
    for entity, rows in problem.entity_groups().items():
        lam = float(lambda_per_entity[entity])
        if lam == 0.0:
            continue
        Xq[rows] -= lam * problem.X[rows].mean(axis=0)
        yq[rows] -= lam * problem.y[rows].mean()
    return problem.replace_data(yq, Xq)
