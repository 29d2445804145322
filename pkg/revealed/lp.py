"""Dense-tableau two-phase simplex.

Small, self-contained LP kernel shared by the coordination test (node
relaxations) and the Afriat certificate solver. Problems here are tiny and
well scaled, so the tableau is kept dense and pivots are plain numpy row
operations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from config import LP_DEGENERATE_STREAK, LP_ITERATION_FACTOR, PIVOT_TOLERANCE, TAU_LP

logger = logging.getLogger(__name__)


class MalformedProgramError(ValueError):
    """Raised when a LinearProgram breaks its structural invariants."""


class DimensionMismatchError(MalformedProgramError):
    """Raised when a vector or matrix disagrees with the number of variables."""


class NumericFailureError(RuntimeError):
    """Raised when pivoting runs past the iteration cap (ill-conditioned input)."""


class Relation(str, Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


class Sense(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"
    FEASIBILITY = "feasibility"


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


_FLIP = {Relation.LE: Relation.GE, Relation.GE: Relation.LE, Relation.EQ: Relation.EQ}


@dataclass(frozen=True)
class LinearProgram:
    """Objective, dense constraint rows and per-variable bounds.

    Rows read ``A[k] @ x  relations[k]  rhs[k]``. Missing bounds default to
    ``[0, +inf)``. Instances are immutable once built.
    """

    objective: np.ndarray
    A: np.ndarray
    relations: tuple
    rhs: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sense: Sense = Sense.MINIMIZE

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise DimensionMismatchError(f"constraint matrix has shape {A.shape}, expected (*, {n})")
        rhs = np.asarray(self.rhs, dtype=float).ravel()
        if rhs.size != A.shape[0] or len(self.relations) != A.shape[0]:
            raise DimensionMismatchError(
                f"{A.shape[0]} constraint rows but {rhs.size} right-hand sides and "
                f"{len(self.relations)} relations"
            )
        try:
            relations = tuple(Relation(r) for r in self.relations)
        except ValueError as e:
            raise MalformedProgramError(f"unsupported relation: {e}") from e

        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if lower.size != n or upper.size != n:
            raise DimensionMismatchError(f"bounds must have length {n}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
            raise MalformedProgramError("every variable needs lower <= upper")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
            raise MalformedProgramError("objective and constraints must be finite")

        for name, value in (("objective", c), ("A", A), ("rhs", rhs), ("lower", lower), ("upper", upper)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "relations", relations)
        object.__setattr__(self, "sense", Sense(self.sense))

    @classmethod
    def from_constraints(
        cls,
        objective: Sequence[float],
        constraints: Iterable[tuple[Sequence[float], str | Relation, float]],
        bounds: Sequence[tuple[float, float]] | None = None,
        sense: Sense | str = Sense.MINIMIZE,
    ) -> "LinearProgram":
        """Build from a list of ``(coefficients, relation, rhs)`` rows."""
        n = len(objective)
        rows, relations, rhs = [], [], []
        for coefficients, relation, value in constraints:
            if len(coefficients) != n:
                raise DimensionMismatchError(f"row of length {len(coefficients)} in a {n}-variable program")
            rows.append(coefficients)
            relations.append(relation)
            rhs.append(value)
        lower = upper = None
        if bounds is not None:
            if len(bounds) != n:
                raise DimensionMismatchError(f"{len(bounds)} bounds for {n} variables")
            lower = [lo for lo, _ in bounds]
            upper = [hi for _, hi in bounds]
        A = np.array(rows, dtype=float).reshape(len(rows), n)
        return cls(objective, A, tuple(relations), np.array(rhs, dtype=float), lower, upper, Sense(sense))

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    @property
    def constraints(self) -> list[tuple[np.ndarray, Relation, float]]:
        return [(self.A[k], self.relations[k], float(self.rhs[k])) for k in range(self.n_constraints)]

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Per-row violation (0 when satisfied) followed by per-variable bound violation."""
        x = np.asarray(x, dtype=float)
        lhs = self.A @ x
        out = np.zeros(self.n_constraints)
        for k, relation in enumerate(self.relations):
            gap = lhs[k] - self.rhs[k]
            if relation is Relation.LE:
                out[k] = max(gap, 0.0)
            elif relation is Relation.GE:
                out[k] = max(-gap, 0.0)
            else:
                out[k] = abs(gap)
        bound_gap = np.maximum(self.lower - x, 0.0) + np.maximum(x - self.upper, 0.0)
        return np.concatenate([out, bound_gap])


@dataclass(frozen=True)
class LpSolution:
    status: Status
    primal: np.ndarray
    objective_value: float
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Tableau:
    """Standard-form tableau; the last row holds reduced costs and -z."""

    def __init__(self, A: np.ndarray, b: np.ndarray, relations: list[Relation], verbose: bool):
        m, n = A.shape
        n_slack = sum(r is not Relation.EQ for r in relations)
        n_art = sum(r is not Relation.LE for r in relations)
        self.n_struct = n
        self.art_start = n + n_slack
        width = n + n_slack + n_art
        self.table = np.zeros((m + 1, width + 1))
        self.table[:m, :n] = A
        self.table[:m, -1] = b
        self.basis = np.empty(m, dtype=int)
        self.verbose = verbose
        self.iterations = 0

        slack, art = n, self.art_start
        for k, relation in enumerate(relations):
            if relation is Relation.LE:
                self.table[k, slack] = 1.0
                self.basis[k] = slack
                slack += 1
            else:
                if relation is Relation.GE:
                    self.table[k, slack] = -1.0
                    slack += 1
                self.table[k, art] = 1.0
                self.basis[k] = art
                art += 1

    @property
    def n_rows(self) -> int:
        return self.table.shape[0] - 1

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    def objective_value(self) -> float:
        return -self.table[-1, -1]

    def set_costs(self, costs: np.ndarray) -> None:
        row = np.zeros(self.width + 1)
        row[: costs.size] = costs
        basic_costs = row[self.basis]
        row -= basic_costs @ self.table[:-1]
        self.table[-1] = row

    def pivot(self, row: int, col: int) -> None:
        t = self.table
        t[row] /= t[row, col]
        factors = t[:, col].copy()
        factors[row] = 0.0
        nz = np.flatnonzero(factors)
        t[nz] -= np.outer(factors[nz], t[row])
        t[:, col] = 0.0
        t[row, col] = 1.0
        self.basis[row] = col
        self.iterations += 1
        if self.verbose:
            logger.debug("Pivot %d on (row %d, col %d)\n%s", self.iterations, row, col,
                         np.array2string(t, precision=4, suppress_small=True))

    def run(self, allowed: np.ndarray, max_iterations: int, bland_after: int) -> Status:
        streak = 0
        bland = bland_after <= 0
        while True:
            reduced = self.table[-1, :-1]
            candidates = allowed & (reduced < -TAU_LP)
            if not candidates.any():
                return Status.OPTIMAL
            if self.iterations >= max_iterations:
                raise NumericFailureError(f"simplex exceeded {max_iterations} pivots")

            if bland:
                col = int(np.flatnonzero(candidates)[0])
            else:
                col = int(np.argmin(np.where(candidates, reduced, np.inf)))

            column = self.table[:-1, col]
            positive = column > PIVOT_TOLERANCE
            if not positive.any():
                return Status.UNBOUNDED
            ratios = np.full(self.n_rows, np.inf)
            ratios[positive] = np.maximum(self.table[:-1, -1][positive], 0.0) / column[positive]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + PIVOT_TOLERANCE)
            row = int(ties[np.argmin(self.basis[ties])])
            self.pivot(row, col)

            streak = streak + 1 if best <= TAU_LP else 0
            if not bland and streak >= bland_after:
                logger.debug("Switching to Bland's rule after %d degenerate pivots", streak)
                bland = True

    def drive_out_artificials(self) -> None:
        """Pivot artificials out of the basis; drop rows that turn out redundant."""
        redundant = []
        for row in range(self.n_rows):
            if self.basis[row] < self.art_start:
                continue
            entries = np.abs(self.table[row, : self.art_start])
            col = int(np.argmax(entries)) if entries.size else -1
            if col < 0 or entries[col] <= PIVOT_TOLERANCE:
                redundant.append(row)
                continue
            self.table[row, -1] = 0.0
            self.pivot(row, col)
        if redundant:
            keep = np.setdiff1d(np.arange(self.n_rows), redundant)
            self.table = np.vstack([self.table[keep], self.table[-1:]])
            self.basis = self.basis[keep]

    def basic_solution(self) -> np.ndarray:
        y = np.zeros(self.width)
        y[self.basis] = self.table[:-1, -1]
        return y[: self.n_struct]


def _standard_form(lp: LinearProgram):
    """Map x = offset + D @ y with y >= 0 and rows with nonnegative rhs."""
    n = lp.n_vars
    columns: list[tuple[int, float]] = []
    offset = np.zeros(n)
    upper_rows: list[tuple[int, float]] = []
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            columns.append((j, 1.0))
            if np.isfinite(hi):
                upper_rows.append((len(columns) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            columns.append((j, -1.0))
        else:
            columns.append((j, 1.0))
            columns.append((j, -1.0))

    D = np.zeros((n, len(columns)))
    for k, (j, sign) in enumerate(columns):
        D[j, k] = sign

    A = lp.A @ D
    b = lp.rhs - lp.A @ offset
    relations = list(lp.relations)
    if upper_rows:
        extra = np.zeros((len(upper_rows), len(columns)))
        for r, (k, bound) in enumerate(upper_rows):
            extra[r, k] = 1.0
        A = np.vstack([A, extra])
        b = np.concatenate([b, [bound for _, bound in upper_rows]])
        relations += [Relation.LE] * len(upper_rows)

    negative = b < 0
    A[negative] *= -1.0
    b[negative] *= -1.0
    relations = [_FLIP[r] if flip else r for r, flip in zip(relations, negative)]

    if lp.sense is Sense.FEASIBILITY:
        costs = np.zeros(len(columns))
    else:
        costs = lp.objective @ D
        if lp.sense is Sense.MAXIMIZE:
            costs = -costs
    return A, b, relations, costs, D, offset


def solve(
    lp: LinearProgram,
    verbose: bool = False,
    bland_after: int | None = None,
    max_iterations: int | None = None,
) -> LpSolution:
    """Solve ``lp`` with the two-phase simplex method.

    Phase I minimises the sum of artificials; a phase-I optimum above TAU_LP
    means no feasible point exists. Dantzig pricing is used until a streak of
    degenerate pivots, then Bland's rule takes over.
    """
    A, b, relations, costs, D, offset = _standard_form(lp)
    tableau = _Tableau(A, b, relations, verbose)
    if bland_after is None:
        bland_after = LP_DEGENERATE_STREAK
    if max_iterations is None:
        max_iterations = LP_ITERATION_FACTOR * (tableau.n_rows + tableau.width) + 1000

    def finish(status: Status) -> LpSolution:
        x = offset + D @ tableau.basic_solution()
        value = float(lp.objective @ x) if status is Status.OPTIMAL else float("nan")
        if status is Status.UNBOUNDED:
            value = float("inf") if lp.sense is Sense.MAXIMIZE else float("-inf")
        return LpSolution(status, x, value, tableau.iterations)

    every = np.ones(tableau.width, dtype=bool)
    if tableau.art_start < tableau.width:
        phase_one = np.zeros(tableau.width)
        phase_one[tableau.art_start:] = 1.0
        tableau.set_costs(phase_one)
        tableau.run(every, max_iterations, bland_after)
        if tableau.objective_value() > TAU_LP:
            logger.debug("Phase I optimum %.3e: infeasible", tableau.objective_value())
            return LpSolution(Status.INFEASIBLE, np.full(lp.n_vars, np.nan), float("nan"), tableau.iterations)
        tableau.drive_out_artificials()

    allowed = np.zeros(tableau.width, dtype=bool)
    allowed[: tableau.art_start] = True
    tableau.set_costs(costs)
    status = tableau.run(allowed, max_iterations, bland_after)
    return finish(status)
