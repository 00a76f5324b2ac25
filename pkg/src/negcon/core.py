"""Dyad records, nameship encoding, covariate layouts and CSV ingestion."""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    IngestionError,
    InvalidArgumentError,
    SchemaError,
    TruncationViolationError,
)

REQUIRED_COLUMNS = (
    "dyad_id", "y1_b", "y1_f", "y2_b", "y2_f", "r1", "r2",
    "sex1", "age1", "sex2", "age2",
)
TRAIT_COLUMNS = ("y1_b", "y1_f", "y2_b", "y2_f")

# Names that may never appear among the outcome covariates C: the exposure,
# its source column, the negative control and the outcome itself.
_FORBIDDEN_IN_C = frozenset({"a", "y1_b", "z", "y1_f", "y2_f"})


class NameshipType(enum.IntEnum):
    NULL = 0
    ACTIVE = 1
    PASSIVE = 2
    MUTUAL = 3


_ENCODING = {(0, 0): NameshipType.NULL, (0, 1): NameshipType.ACTIVE,
             (1, 0): NameshipType.PASSIVE, (1, 1): NameshipType.MUTUAL}
_DECODING = {s: rr for rr, s in _ENCODING.items()}


def _as_binary(value, name):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    try:
        if value in (0, 1) and float(value) == int(value):
            return int(value)
    except (TypeError, ValueError):
        pass
    raise InvalidArgumentError(f"{name} must be 0 or 1, got {value!r}")


def classify_nameship(r1, r2) -> NameshipType:
    """Map the naming indicators (alter names ego, ego names alter) to S."""
    return _ENCODING[_as_binary(r1, "r1"), _as_binary(r2, "r2")]


def decode_nameship(s) -> tuple[int, int]:
    """Inverse of :func:`classify_nameship`."""
    try:
        return _DECODING[NameshipType(int(s))]
    except (ValueError, TypeError):
        raise InvalidArgumentError(f"nameship type must be in 0..3, got {s!r}") from None


@dataclass(frozen=True)
class DyadRecord:
    """Raw observables for one dyad. Subscript 1 is the alter, 2 the ego."""

    dyad_id: str
    y1_b: float
    y1_f: float
    y2_b: float
    y2_f: float
    r1: int
    r2: int
    x1: tuple = ()
    x2: tuple = ()


def _names(value):
    if isinstance(value, str):
        value = [v for v in value.split(",")]
    return tuple(v.strip() for v in value if v.strip())


@dataclass(frozen=True)
class ModelConfig:
    """Covariate layout and modelling switches shared by every stage.

    Covariates are referenced by name. Available names are the trait columns
    ``y1_b``/``y2_b``, the declared alter/ego covariates, ``a`` (exposure) and
    ``z`` (negative control, the alter's follow-up trait). A name of the form
    ``u:v`` is the product of the two columns, formed after centering.
    """

    obesity_threshold: float = 30.0
    threshold_inclusive: bool = True
    exposure_kind: str = "binary"
    center_ages: bool = True
    age_columns: tuple = ("age1", "age2")
    alter_covariates: tuple = ("sex1", "age1")
    ego_covariates: tuple = ("sex2", "age2")
    outcome_covariates: tuple = ("y2_b", "sex2", "age2", "sex1", "age1", "age2:age1")
    alter_naming: tuple = ("sex1", "age1", "z")
    ego_naming: tuple = ("sex2", "age2")
    link: str = "additive"
    homophily_form: str = "constant"
    homophily_interactions: tuple = ()

    def __post_init__(self):
        for name in ("age_columns", "alter_covariates", "ego_covariates",
                     "outcome_covariates", "alter_naming", "ego_naming",
                     "homophily_interactions"):
            object.__setattr__(self, name, _names(getattr(self, name)))
        if self.exposure_kind not in ("binary", "continuous"):
            raise ConfigError(f"exposure_kind must be 'binary' or 'continuous', got {self.exposure_kind!r}")
        if self.link not in ("additive", "multiplicative"):
            raise ConfigError(f"link must be 'additive' or 'multiplicative', got {self.link!r}")
        if self.homophily_form not in ("constant", "interact"):
            raise ConfigError(f"homophily_form must be 'constant' or 'interact', got {self.homophily_form!r}")
        if self.homophily_form == "interact" and not self.homophily_interactions:
            raise ConfigError("homophily_form 'interact' needs homophily_interactions")
        if not math.isfinite(self.obesity_threshold):
            raise ConfigError("obesity_threshold must be finite")

        known = set(self.variables)
        for group in ("outcome_covariates", "alter_naming", "ego_naming"):
            for name in getattr(self, group):
                for part in name.split(":"):
                    if part not in known:
                        raise ConfigError(f"{group} references unknown column {part!r}")
        for name in self.outcome_covariates:
            bad = _FORBIDDEN_IN_C.intersection(name.split(":"))
            if bad:
                raise ConfigError(f"outcome_covariates may not use {sorted(bad)} (term {name!r})")
        if "z" not in self.alter_naming and "y1_f" not in self.alter_naming:
            raise ConfigError("alter_naming must include the negative control 'z'")
        for name in self.ego_naming:
            if {"z", "y1_f"}.intersection(name.split(":")):
                raise ConfigError("ego_naming must not include the negative control 'z'")
        for name in self.homophily_interactions:
            if name not in self.outcome_covariates:
                raise ConfigError(f"homophily interaction {name!r} is not an outcome covariate")
        overlap = set(self.alter_covariates) & set(self.ego_covariates)
        if overlap or set(TRAIT_COLUMNS) & (set(self.alter_covariates) | set(self.ego_covariates)):
            raise ConfigError("alter/ego covariate names must be distinct and not trait columns")

    @property
    def variables(self) -> tuple:
        return (("y1_b", "y1_f", "y2_b", "a", "z")
                + self.alter_covariates + self.ego_covariates)

    @property
    def centered(self) -> tuple:
        if not self.center_ages:
            return ()
        return tuple(c for c in self.age_columns
                     if c in self.alter_covariates or c in self.ego_covariates)

    def exposure(self, y1_b):
        y1_b = np.asarray(y1_b, dtype=float)
        if self.exposure_kind == "continuous":
            return y1_b.copy()
        if self.threshold_inclusive:
            return (y1_b >= self.obesity_threshold).astype(float)
        return (y1_b > self.obesity_threshold).astype(float)


@dataclass(frozen=True)
class AnalysisFrame:
    """One dyad on the analysis scale.

    ``c1`` and ``c2`` are the alter and ego naming covariates (without
    intercept); ``c1`` always carries ``z``.
    """

    a: float
    z: float
    c: np.ndarray
    y: float
    s: NameshipType
    c1: np.ndarray
    c2: np.ndarray
    dyad_id: str = ""

    @property
    def r1(self):
        return decode_nameship(self.s)[0]

    @property
    def r2(self):
        return decode_nameship(self.s)[1]


def _frozen(arr, dtype=float, ndim=1):
    arr = np.array(arr, dtype=dtype)
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Frames(Sequence):
    """Column-stored collection of :class:`AnalysisFrame`.

    Indexing with an integer yields an ``AnalysisFrame``; the numerical code
    works on the columns directly.
    """

    a: np.ndarray
    z: np.ndarray
    c: np.ndarray
    y: np.ndarray
    s: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c_names: tuple
    c1_names: tuple
    c2_names: tuple
    dyad_ids: tuple = ()
    centers: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.a)
        for name, nd, dtype in (("a", 1, float), ("z", 1, float), ("y", 1, float),
                                ("s", 1, np.int64), ("c", 2, float),
                                ("c1", 2, float), ("c2", 2, float)):
            arr = _frozen(getattr(self, name), dtype=dtype, ndim=nd)
            if arr.shape[0] != n:
                raise InvalidArgumentError(f"column {name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, arr)
        for arr, names in ((self.c, self.c_names), (self.c1, self.c1_names), (self.c2, self.c2_names)):
            if arr.shape[1] != len(names):
                raise InvalidArgumentError("covariate matrix width does not match its names")
        if np.any((self.s < 0) | (self.s > 3)):
            raise InvalidArgumentError("nameship types must lie in 0..3")
        if not self.dyad_ids:
            object.__setattr__(self, "dyad_ids", tuple(str(i) for i in range(n)))
        object.__setattr__(self, "centers", dict(self.centers))

    def __len__(self):
        return len(self.a)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        i = range(len(self))[i]
        return AnalysisFrame(a=float(self.a[i]), z=float(self.z[i]), c=self.c[i],
                             y=float(self.y[i]), s=NameshipType(int(self.s[i])),
                             c1=self.c1[i], c2=self.c2[i], dyad_id=self.dyad_ids[i])

    @property
    def r1(self):
        return (self.s >= 2).astype(float)

    @property
    def r2(self):
        return ((self.s == 1) | (self.s == 3)).astype(float)

    def subset(self, index) -> Frames:
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Frames(a=self.a[index], z=self.z[index], c=self.c[index], y=self.y[index],
                      s=self.s[index], c1=self.c1[index], c2=self.c2[index],
                      c_names=self.c_names, c1_names=self.c1_names, c2_names=self.c2_names,
                      dyad_ids=tuple(self.dyad_ids[i] for i in index), centers=self.centers)

    def replace(self, **changes) -> Frames:
        values = {k: getattr(self, k) for k in
                  ("a", "z", "c", "y", "s", "c1", "c2", "c_names", "c1_names",
                   "c2_names", "dyad_ids", "centers")}
        values.update(changes)
        return Frames(**values)

    def stratum(self, s) -> Frames:
        return self.subset(self.s == int(s))


def frames_from_columns(columns: Mapping, r1, r2, config: ModelConfig, dyad_ids=()) -> Frames:
    """Assemble analysis frames from raw named columns.

    ``columns`` holds the four trait columns plus every declared alter/ego
    covariate. Shared by CSV ingestion and the simulator.
    """
    r1 = np.asarray(r1, dtype=int)
    r2 = np.asarray(r2, dtype=int)
    n = len(r1)
    if n == 0:
        raise IngestionError("no dyads supplied")
    if np.any((r1 + r2) == 0):
        row = int(np.flatnonzero((r1 + r2) == 0)[0]) + 1
        raise TruncationViolationError("r1 = r2 = 0 (null nameship) is never observed", row=row)

    pool = {}
    for name in TRAIT_COLUMNS + config.alter_covariates + config.ego_covariates:
        if name not in columns:
            raise SchemaError("missing column", column=name)
        col = np.asarray(columns[name], dtype=float)
        bad = ~np.isfinite(col)
        if bad.any():
            raise IngestionError("missing or non-finite value", row=int(np.flatnonzero(bad)[0]) + 1,
                                 column=name)
        pool[name] = col
    pool["a"] = config.exposure(pool["y1_b"])
    pool["z"] = pool["y1_f"]

    centers = {}
    for name in config.centered:
        centers[name] = float(np.mean(pool[name]))
        pool[name] = pool[name] - centers[name]

    def resolve(names):
        if not names:
            return np.zeros((n, 0))
        cols = []
        for term in names:
            col = np.ones(n)
            for part in term.split(":"):
                col = col * pool[part]
            cols.append(col)
        return np.column_stack(cols)

    s = 2 * r1 + r2
    # 2*r1 + r2 gives 1 for (0,1), 2 for (1,0), 3 for (1,1): the S encoding.
    return Frames(a=pool["a"], z=pool["z"], c=resolve(config.outcome_covariates), y=pool["y2_f"],
                  s=s, c1=resolve(config.alter_naming), c2=resolve(config.ego_naming),
                  c_names=config.outcome_covariates, c1_names=config.alter_naming,
                  c2_names=config.ego_naming, dyad_ids=tuple(dyad_ids), centers=centers)


def build_frames(records: Sequence[DyadRecord], config: ModelConfig) -> Frames:
    """Turn dyad records into analysis frames (exposure, Z, C, Y, S)."""
    if not records:
        raise IngestionError("no dyads supplied")
    k1, k2 = len(config.alter_covariates), len(config.ego_covariates)
    columns = {name: [] for name in TRAIT_COLUMNS + config.alter_covariates + config.ego_covariates}
    r1, r2 = [], []
    for row, rec in enumerate(records, start=1):
        if len(rec.x1) != k1 or len(rec.x2) != k2:
            raise IngestionError(f"covariate dimension ({len(rec.x1)}, {len(rec.x2)}) does not match "
                                 f"the declared layout ({k1}, {k2})", row=row)
        for name in TRAIT_COLUMNS:
            columns[name].append(_finite(getattr(rec, name), row, name))
        for name, value in zip(config.alter_covariates, rec.x1):
            columns[name].append(_finite(value, row, name))
        for name, value in zip(config.ego_covariates, rec.x2):
            columns[name].append(_finite(value, row, name))
        try:
            r1.append(_as_binary(rec.r1, "r1"))
            r2.append(_as_binary(rec.r2, "r2"))
        except InvalidArgumentError as exc:
            raise IngestionError(str(exc), row=row) from None
        if r1[-1] + r2[-1] == 0:
            raise TruncationViolationError("r1 = r2 = 0 (null nameship) is never observed", row=row)
    return frames_from_columns(columns, r1, r2, config, dyad_ids=[r.dyad_id for r in records])


def _finite(value, row, column):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise IngestionError(f"unparseable value {value!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise IngestionError("missing or non-finite value", row=row, column=column)
    return value


def csv_columns(config: ModelConfig) -> tuple:
    extra = [c for c in config.alter_covariates + config.ego_covariates if c not in REQUIRED_COLUMNS]
    return REQUIRED_COLUMNS + tuple(extra)


def read_csv(path, config: ModelConfig) -> list[DyadRecord]:
    """Read the dyad CSV. Row numbers in errors count the header as row 1."""
    path = Path(path)
    expected = csv_columns(config)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc.strerror}") from None
    records, seen = [], set()
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file (header row required)", row=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in expected if c not in header]
        if missing:
            raise SchemaError(f"header is missing column(s) {', '.join(missing)}", row=1,
                              column=missing[0])
        unknown = [c for c in header if c not in expected]
        if unknown:
            raise SchemaError(f"unexpected column(s) {', '.join(unknown)}; declare extra "
                              "covariates in the config", row=1, column=unknown[0])
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column names in header", row=1)
        index = {name: header.index(name) for name in expected}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"expected {len(header)} fields, found {len(row)}", row=line)
            cell = {name: row[i].strip() for name, i in index.items()}
            dyad_id = cell["dyad_id"]
            if not dyad_id:
                raise IngestionError("missing value", row=line, column="dyad_id")
            if dyad_id in seen:
                raise IngestionError(f"duplicate dyad_id {dyad_id!r}", row=line, column="dyad_id")
            seen.add(dyad_id)
            values = {}
            for name in expected[1:]:
                if name in ("r1", "r2"):
                    if cell[name] not in ("0", "1"):
                        raise IngestionError(f"expected literal 0 or 1, got {cell[name]!r}",
                                             row=line, column=name)
                    values[name] = int(cell[name])
                else:
                    if not cell[name]:
                        raise IngestionError("missing value", row=line, column=name)
                    values[name] = _finite(cell[name], line, name)
            records.append(DyadRecord(
                dyad_id=dyad_id, y1_b=values["y1_b"], y1_f=values["y1_f"],
                y2_b=values["y2_b"], y2_f=values["y2_f"], r1=values["r1"], r2=values["r2"],
                x1=tuple(values[c] for c in config.alter_covariates),
                x2=tuple(values[c] for c in config.ego_covariates)))
    return records


def write_csv(records: Sequence[DyadRecord], path, config: ModelConfig) -> None:
    header = csv_columns(config)
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for rec in records:
            values = {"dyad_id": rec.dyad_id, "y1_b": rec.y1_b, "y1_f": rec.y1_f,
                      "y2_b": rec.y2_b, "y2_f": rec.y2_f, "r1": rec.r1, "r2": rec.r2}
            values.update(zip(config.alter_covariates, rec.x1))
            values.update(zip(config.ego_covariates, rec.x2))
            writer.writerow([_fmt(values[h]) for h in header])


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))
