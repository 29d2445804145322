"""Probe / response datasets, personalized allocations and their file formats.

Indices are 0-based in memory and 1-based in every file written here.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from config import DATASET_SCHEMA_VERSION, TAU_FEAS

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised for unusable datasets (bad index, failed invariants)."""


class DatasetParseError(DatasetError):
    """Raised when a dataset file is not valid JSON; carries line and column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class SchemaError(DatasetError):
    """Raised when a file parses but does not follow the dataset schema."""


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float, ndmin=1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Probe:
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))

    @property
    def n_goods(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class Observation:
    """One time step: probe alpha_t, aggregate beta_t and assignable beta_hat_t^i."""

    probe: Probe
    aggregate: np.ndarray
    assignable: np.ndarray

    def __post_init__(self):
        if not isinstance(self.probe, Probe):
            object.__setattr__(self, "probe", Probe(self.probe))
        object.__setattr__(self, "aggregate", _frozen(self.aggregate))
        assignable = np.array(self.assignable, dtype=float)
        if assignable.ndim == 1:
            assignable = assignable.reshape(1, -1)
        assignable.setflags(write=False)
        object.__setattr__(self, "assignable", assignable)

    @property
    def alpha(self) -> np.ndarray:
        return self.probe.alpha


@dataclass(frozen=True)
class Violation:
    t: int
    i: int | None
    component: int | None
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        agent = "-" if self.i is None else self.i + 1
        component = "-" if self.component is None else self.component + 1
        text = f"t={self.t + 1} i={agent} k={component}: {self.rule}"
        return f"{text} ({self.detail})" if self.detail else text


@dataclass(frozen=True)
class Dataset:
    """Ordered observations sharing M agents and N goods."""

    observations: tuple
    M: int
    N: int

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))

    @classmethod
    def from_arrays(cls, alphas, betas, beta_hats) -> "Dataset":
        alphas = np.asarray(alphas, dtype=float)
        betas = np.asarray(betas, dtype=float)
        beta_hats = np.asarray(beta_hats, dtype=float)
        observations = [Observation(Probe(a), b, bh) for a, b, bh in zip(alphas, betas, beta_hats)]
        return cls(tuple(observations), M=beta_hats.shape[1], N=alphas.shape[1])

    @property
    def T(self) -> int:
        return len(self.observations)

    @property
    def alphas(self) -> np.ndarray:
        return np.stack([o.alpha for o in self.observations])

    @property
    def betas(self) -> np.ndarray:
        return np.stack([o.aggregate for o in self.observations])

    @property
    def beta_hats(self) -> np.ndarray:
        return np.stack([o.assignable for o in self.observations])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.M == other.M and self.N == other.N and self.T == other.T
            and all(
                np.array_equal(a.alpha, b.alpha)
                and np.array_equal(a.aggregate, b.aggregate)
                and np.array_equal(a.assignable, b.assignable)
                for a, b in zip(self.observations, other.observations)
            )
        )

    __hash__ = None


@dataclass(frozen=True)
class PersonalizedAllocation:
    """Hypothesised hidden bundles q[t, i, k]."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def violations(self, dataset: Dataset, tol: float = TAU_FEAS) -> list[Violation]:
        found = []
        if self.q.shape != (dataset.T, dataset.M, dataset.N):
            return [Violation(0, None, None, "shape", f"{self.q.shape} vs {(dataset.T, dataset.M, dataset.N)}")]
        for t, observation in enumerate(dataset.observations):
            gap = self.q[t].sum(axis=0) - observation.aggregate
            for k in np.flatnonzero(np.abs(gap) > tol):
                found.append(Violation(t, None, int(k), "adding-up", f"gap {gap[k]:.3e}"))
            short = observation.assignable - self.q[t]
            for i, k in zip(*np.nonzero(short > tol)):
                found.append(Violation(t, int(i), int(k), "dominance", f"short by {short[i, k]:.3e}"))
            for i, k in zip(*np.nonzero(self.q[t] < -tol)):
                found.append(Violation(t, int(i), int(k), "nonnegativity"))
        return found

    def to_json(self) -> dict:
        T, M, N = self.q.shape
        return {"version": DATASET_SCHEMA_VERSION, "T": T, "M": M, "N": N, "q": self.q.tolist()}


def validate(dataset: Dataset) -> list[Violation]:
    """Report every broken invariant; never raises on finite input."""
    found: list[Violation] = []
    if dataset.T < 1:
        found.append(Violation(0, None, None, "empty", "T must be at least 1"))
    if dataset.M < 1 or dataset.N < 1:
        found.append(Violation(0, None, None, "dimension", f"M={dataset.M}, N={dataset.N}"))
        return found

    for t, observation in enumerate(dataset.observations):
        alpha = np.asarray(observation.alpha)
        beta = np.asarray(observation.aggregate)
        beta_hat = np.asarray(observation.assignable)
        if alpha.shape != (dataset.N,) or beta.shape != (dataset.N,) or beta_hat.shape != (dataset.M, dataset.N):
            found.append(Violation(t, None, None, "shape",
                                   f"alpha {alpha.shape}, beta {beta.shape}, beta_hat {beta_hat.shape}"))
            continue
        for k in np.flatnonzero(~(alpha > 0)):
            found.append(Violation(t, None, int(k), "positive-probe"))
        for k in np.flatnonzero(~(beta >= 0)):
            found.append(Violation(t, None, int(k), "nonnegative-aggregate"))
        for i, k in zip(*np.nonzero(~(beta_hat >= 0))):
            found.append(Violation(t, int(i), int(k), "nonnegative-assignable"))
        for i, k in zip(*np.nonzero(beta_hat > beta)):
            found.append(Violation(t, int(i), int(k), "dominance",
                                   f"assignable {beta_hat[i, k]:g} > aggregate {beta[k]:g}"))
        total = beta_hat.sum(axis=0)
        for k in np.flatnonzero(total > beta * (1 + 1e-12) + 1e-12):
            found.append(Violation(t, None, int(k), "assignable-sum",
                                   f"sum {total[k]:g} > aggregate {beta[k]:g}"))
    return found


def group_expenditure(dataset: Dataset, t: int) -> float:
    """y_t = alpha_t' beta_t (0-based t)."""
    if not 0 <= t < dataset.T:
        raise DatasetError(f"observation index {t} out of range for T={dataset.T}")
    observation = dataset.observations[t]
    return float(observation.alpha @ observation.aggregate)


def allocation_bounds(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Box implied by adding-up and dominance: beta_hat <= q <= beta - sum of the others' beta_hat."""
    beta_hats = dataset.beta_hats
    lower = beta_hats.copy()
    slack = dataset.betas - beta_hats.sum(axis=1)
    upper = beta_hats + np.maximum(slack, 0.0)[:, None, :]
    return lower, upper


# -----------------------------------------------------------------
# File formats
# -----------------------------------------------------------------

def dataset_to_json(dataset: Dataset) -> dict:
    return {
        "version": DATASET_SCHEMA_VERSION,
        "N": dataset.N,
        "M": dataset.M,
        "T": dataset.T,
        "observations": [
            {
                "alpha": o.alpha.tolist(),
                "beta": o.aggregate.tolist(),
                "beta_hat": o.assignable.tolist(),
            }
            for o in dataset.observations
        ],
    }


def _real_vector(value, length: int, where: str) -> list[float]:
    if not isinstance(value, list) or len(value) != length:
        raise SchemaError(f"{where}: expected a list of {length} numbers")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"{where}: non-finite or non-numeric entry {v!r}")
    return [float(v) for v in value]


def dataset_from_json(document) -> Dataset:
    if not isinstance(document, dict):
        raise SchemaError("top level must be an object")
    version = document.get("version")
    if version != DATASET_SCHEMA_VERSION:
        raise SchemaError(f"schema version {version!r} is not supported (expected {DATASET_SCHEMA_VERSION!r})")
    for key in ("N", "M", "T", "observations"):
        if key not in document:
            raise SchemaError(f"missing key {key!r}")
    N, M, T = document["N"], document["M"], document["T"]
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in (N, M, T)):
        raise SchemaError("N, M and T must be positive integers")
    observations = document["observations"]
    if not isinstance(observations, list) or len(observations) != T:
        raise SchemaError(f"expected {T} observations")

    parsed = []
    for t, record in enumerate(observations, start=1):
        if not isinstance(record, dict):
            raise SchemaError(f"observation {t}: expected an object")
        alpha = _real_vector(record.get("alpha"), N, f"observation {t} alpha")
        beta = _real_vector(record.get("beta"), N, f"observation {t} beta")
        blocks = record.get("beta_hat")
        if not isinstance(blocks, list) or len(blocks) != M:
            found = len(blocks) if isinstance(blocks, list) else "no"
            raise SchemaError(f"observation {t}: header says M={M} but found {found} assignable blocks")
        beta_hat = [_real_vector(b, N, f"observation {t} beta_hat agent {i}") for i, b in enumerate(blocks, start=1)]
        parsed.append(Observation(Probe(alpha), beta, beta_hat))
    return Dataset(tuple(parsed), M=M, N=N)


def write_dataset(dataset: Dataset, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataset_to_json(dataset), f, indent=2)
        f.write("\n")
    logger.info("Wrote dataset T=%d M=%d N=%d to %s", dataset.T, dataset.M, dataset.N, path)


def _load_json(path: str):
    """Parse a UTF-8 JSON file; undecodable bytes and bad JSON both become DatasetParseError."""
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line = raw.count(b"\n", 0, e.start) + 1
        column = e.start - (raw.rfind(b"\n", 0, e.start) + 1) + 1
        raise DatasetParseError(f"{path}: invalid UTF-8 byte 0x{raw[e.start]:02x}", line, column) from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"{path}: {e.msg}", e.lineno, e.colno) from e


def read_dataset(path: str) -> Dataset:
    dataset = dataset_from_json(_load_json(path))
    problems = validate(dataset)
    if problems:
        logger.warning("Dataset %s has %d invariant violations, first: %s", path, len(problems), problems[0])
    return dataset


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    """CSV mirror: one row per t, alpha, beta, then beta_hat grouped by agent."""
    columns = {"t": np.arange(1, dataset.T + 1)}
    alphas, betas, beta_hats = dataset.alphas, dataset.betas, dataset.beta_hats
    for k in range(dataset.N):
        columns[f"alpha_{k + 1}"] = alphas[:, k]
    for k in range(dataset.N):
        columns[f"beta_{k + 1}"] = betas[:, k]
    for i in range(dataset.M):
        for k in range(dataset.N):
            columns[f"beta_hat_{i + 1}_{k + 1}"] = beta_hats[:, i, k]
    return pd.DataFrame(columns)


def write_dataset_csv(dataset: Dataset, path: str) -> None:
    dataset_frame(dataset).to_csv(path, index=False, float_format="%.17g")


def read_allocation(path: str) -> PersonalizedAllocation:
    document = _load_json(path)
    if not isinstance(document, dict):
        raise SchemaError(f"{path}: witness must be a JSON object")
    try:
        q = np.array(document["q"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: witness needs a rectangular 'q' array") from e
    if q.shape != (document.get("T"), document.get("M"), document.get("N")):
        raise SchemaError(f"{path}: q has shape {q.shape}, header says {(document.get('T'), document.get('M'), document.get('N'))}")
    return PersonalizedAllocation(q)


def write_allocation(allocation: PersonalizedAllocation, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(allocation.to_json(), f, indent=2)
        f.write("\n")
