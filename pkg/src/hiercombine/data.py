"""Source-level observations, validation, CSV ingestion and outcome transforms.

A *source* contributes a direct estimate ``y`` of some summary measure, the
estimated standard error ``s`` of that estimate and, optionally, a row of
source-level covariates.  Covariate rows always carry the intercept as their
first entry once loaded.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CovariateDimensionMismatch,
    DomainViolation,
    DuplicateSourceId,
    NonFiniteValue,
    NonPositiveUncertainty,
    ParseError,
    SchemaError,
    TooFewSources,
)

__all__ = [
    "SourceObservation",
    "Dataset",
    "TransformKind",
    "TransformSpec",
    "validate",
    "transform_outcome",
    "transform_dataset",
    "load_csv",
    "save_csv",
    "from_arrays",
]


@dataclass(frozen=True)
class SourceObservation:
    """One source's estimate ``y``, its standard error ``s`` and covariates ``x``."""

    source_id: str
    y: float
    s: float
    x: tuple[float, ...] | None = None

    @property
    def p(self) -> int:
        return 0 if self.x is None else len(self.x)


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of source observations sharing one covariate schema.

    ``intercept`` records whether the first covariate column is an
    automatically prepended column of ones; it only affects how the dataset is
    written back to CSV.
    """

    observations: tuple[SourceObservation, ...]
    intercept: bool = field(default=False)

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def n(self) -> int:
        return len(self.observations)

    @property
    def p(self) -> int:
        return self.observations[0].p if self.observations else 0

    @property
    def has_covariates(self) -> bool:
        return self.p > 0

    @property
    def source_ids(self) -> list[str]:
        return [o.source_id for o in self.observations]

    @property
    def y(self) -> np.ndarray:
        return np.array([o.y for o in self.observations], dtype=float)

    @property
    def s(self) -> np.ndarray:
        return np.array([o.s for o in self.observations], dtype=float)

    @property
    def log_s(self) -> np.ndarray:
        return np.log(self.s)

    @property
    def X(self) -> np.ndarray:
        """Design matrix, ``(n, p)``; an ``(n, 1)`` column of ones when ``p == 0``."""
        if not self.has_covariates:
            return np.ones((self.n, 1))
        return np.array([o.x for o in self.observations], dtype=float)

    def permuted(self, order: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.observations[i] for i in order), self.intercept)

    def with_y(self, y: Iterable[float]) -> "Dataset":
        obs = tuple(replace(o, y=float(v)) for o, v in zip(self.observations, y))
        return Dataset(obs, self.intercept)


def from_arrays(y, s, X=None, source_ids=None, intercept=None) -> Dataset:
    """Build a :class:`Dataset` from parallel arrays.

    ``X``, when given, is used as-is (include the intercept column yourself).
    """
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if source_ids is None:
        source_ids = [str(i + 1) for i in range(len(y))]
    if X is None:
        rows = [None] * len(y)
    else:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rows = [tuple(float(v) for v in r) for r in X]
    obs = tuple(
        SourceObservation(str(sid), float(a), float(b), r)
        for sid, a, b, r in zip(source_ids, y, s, rows)
    )
    if intercept is None:
        intercept = X is not None and bool(np.all(X[:, 0] == 1.0))
    return Dataset(obs, intercept)


def validate(dataset: Dataset, min_sources: int = 2) -> Dataset:
    """Check every dataset invariant and return the dataset unchanged.

    Parameters
    ----------
    dataset : Dataset
    min_sources : int
        Minimum number of sources required.  Model fits need at least two;
        with covariates at least ``p + 2``.

    Raises
    ------
    NonFiniteValue, NonPositiveUncertainty, DuplicateSourceId,
    CovariateDimensionMismatch, TooFewSources
    """
    seen = set()
    p = dataset.p
    for obs in dataset.observations:
        if not math.isfinite(obs.y):
            raise NonFiniteValue(obs.source_id, "y")
        if not math.isfinite(obs.s):
            raise NonFiniteValue(obs.source_id, "s")
        if obs.s <= 0:
            raise NonPositiveUncertainty(obs.source_id)
        if obs.x is not None and not all(math.isfinite(v) for v in obs.x):
            raise NonFiniteValue(obs.source_id, "x")
        if obs.p != p:
            raise CovariateDimensionMismatch(
                f"source {obs.source_id!r} has {obs.p} covariates, expected {p}"
            )
        if obs.source_id in seen:
            raise DuplicateSourceId(obs.source_id)
        seen.add(obs.source_id)
    required = max(min_sources, p + 2) if p > 0 and min_sources >= 2 else min_sources
    if dataset.n < required:
        raise TooFewSources(f"need at least {required} sources, got {dataset.n}")
    return dataset


class TransformKind(str, enum.Enum):
    IDENTITY = "identity"
    LOG = "log"
    LOGIT = "logit"


@dataclass(frozen=True)
class TransformSpec:
    kind: TransformKind = TransformKind.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))


def transform_outcome(obs: SourceObservation, spec: TransformSpec) -> SourceObservation:
    """Map ``y`` through ``g`` and propagate ``s`` with the delta method.

    The standard error becomes ``|g'(y)| * s``; ``s`` stands in for the latent
    true standard deviation.
    """
    kind = spec.kind
    if kind is TransformKind.IDENTITY:
        return obs
    y = obs.y
    if kind is TransformKind.LOG:
        if not y > 0:
            raise DomainViolation(f"source {obs.source_id!r}: log needs y > 0")
        return replace(obs, y=math.log(y), s=obs.s / y)
    if not 0 < y < 1:
        raise DomainViolation(f"source {obs.source_id!r}: logit needs 0 < y < 1")
    return replace(obs, y=math.log(y / (1 - y)), s=obs.s / (y * (1 - y)))


def transform_dataset(dataset: Dataset, spec: TransformSpec) -> Dataset:
    obs = tuple(transform_outcome(o, spec) for o in dataset.observations)
    return Dataset(obs, dataset.intercept)


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(line, f"column {column!r}: cannot parse {text!r} as a number") from None


def load_csv(path, add_intercept: bool = True) -> Dataset:
    """Read a dataset from CSV with columns ``source_id,y,s[,x1..xp]``.

    When covariate columns exist an intercept column of ones is prepended
    unless ``add_intercept`` is False.  The result is validated with
    ``min_sources=1``; model fits re-validate with their own minimum.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        for col in ("source_id", "y", "s"):
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        xcols = sorted(
            (h for h in header if h.startswith("x") and h[1:].isdigit()),
            key=lambda h: int(h[1:]),
        )
        expected = [f"x{j}" for j in range(1, len(xcols) + 1)]
        if xcols != expected:
            raise SchemaError(f"{path}: covariate columns must be x1..xp, got {xcols}")
        idx = {h: k for k, h in enumerate(header)}
        obs = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
            y = _parse_float(row[idx["y"]], line, "y")
            s = _parse_float(row[idx["s"]], line, "s")
            x = None
            if xcols:
                vals = [_parse_float(row[idx[c]], line, c) for c in xcols]
                x = tuple(([1.0] if add_intercept else []) + vals)
            obs.append(SourceObservation(row[idx["source_id"]].strip(), y, s, x))
    dataset = Dataset(tuple(obs), intercept=bool(xcols) and add_intercept)
    return validate(dataset, min_sources=1)


def save_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` in the format read by :func:`load_csv`.

    Floats are written with ``repr`` so a reload reproduces them exactly.
    """
    skip = 1 if dataset.intercept else 0
    ncov = max(dataset.p - skip, 0)
    header = ["source_id", "y", "s"] + [f"x{j}" for j in range(1, ncov + 1)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for o in dataset.observations:
            row = [o.source_id, repr(float(o.y)), repr(float(o.s))]
            if ncov:
                row += [repr(float(v)) for v in o.x[skip:]]
            writer.writerow(row)
