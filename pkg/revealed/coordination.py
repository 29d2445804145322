"""Coordination test: the collective-GARP mixed-integer feasibility system.

For every agent i and ordered pair s != t the system carries a binary
x[i, s, t] (1 when bundle s is revealed preferred to bundle t) next to the
hidden bundles q[t, i, :]:

    (i)   sum_i q_t^i = beta_t,  q_t^i >= beta_hat_t^i
    (ii)  eta_t^i = alpha_t' q_t^i
    (iii) eta_s^i - alpha_s' q_t^i <= -eps + (y_s + eps) x_st^i
    (iv)  x_su^i + x_ut^i <= 1 + x_st^i          (s, u, t pairwise distinct)
    (v)   eta_t^i - alpha_t' q_s^i <= y_t (1 - x_st^i)

with y_t = alpha_t' beta_t. decide() runs a depth-first branch-and-bound over
the binaries. eta is substituted away, node LPs range over q only, and (iv)
is enforced by propagation on the fixed binaries.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from config import EPSILON_STRICT_SCALE, NODE_BUDGET, PROGRESS_EVERY_NODES, TAU_FEAS, TAU_LP
from revealed.dataset import Dataset, DatasetError, PersonalizedAllocation, allocation_bounds, validate
from revealed.lp import LinearProgram, Relation, Sense, solve

logger = logging.getLogger(__name__)

FREE = -1


class NodeBudgetExceeded(RuntimeError):
    """The search ran out of nodes: the instance is undecided, not rejected."""

    def __init__(self, node_count: int, wall_time: float):
        self.node_count = node_count
        self.wall_time = wall_time
        super().__init__(f"node budget exhausted after {node_count} nodes ({wall_time:.1f}s)")


class PreconditionError(ValueError):
    pass


class Decision(str, Enum):
    COORDINATING = "coordinating"
    NOT_COORDINATING = "not-coordinating"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class MilpVerdict:
    decision: Decision
    witness: PersonalizedAllocation | None
    binaries: np.ndarray | None
    node_count: int
    wall_time: float

    @property
    def coordinating(self) -> bool:
        return self.decision is Decision.COORDINATING

    def to_json(self) -> dict:
        return {
            "decision": self.decision.value,
            "node_count": self.node_count,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class MilpProblem:
    """Encoded coordination system for one dataset."""

    dataset: Dataset
    epsilon_strict: float
    y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def T(self) -> int:
        return self.dataset.T

    @property
    def M(self) -> int:
        return self.dataset.M

    @property
    def N(self) -> int:
        return self.dataset.N

    @property
    def n_q(self) -> int:
        return self.T * self.M * self.N

    @property
    def n_eta(self) -> int:
        return self.T * self.M

    @property
    def n_binaries(self) -> int:
        return self.M * self.T * (self.T - 1)

    @property
    def n_transitivity(self) -> int:
        return self.M * self.T * (self.T - 1) * (self.T - 2)

    @property
    def offdiag(self) -> np.ndarray:
        return ~np.eye(self.T, dtype=bool)

    def index(self, t: int, i: int, k: int = 0) -> int:
        return (t * self.M + i) * self.N + k

    def unflatten(self, primal: np.ndarray) -> np.ndarray:
        return np.asarray(primal, dtype=float).reshape(self.T, self.M, self.N)

    def expenditures(self, q: np.ndarray) -> np.ndarray:
        """E[i, s, t] = alpha_s' q_t^i; the diagonal is eta."""
        return np.einsum("sk,tik->ist", self.dataset.alphas, q)

    # -----------------------------------------------------------------
    # Re-substitution
    # -----------------------------------------------------------------

    def residuals(self, q: np.ndarray, x: np.ndarray, eta: np.ndarray | None = None) -> dict[str, float]:
        """Largest violation of each condition family (0 when satisfied)."""
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        betas, beta_hats = self.dataset.betas, self.dataset.beta_hats
        E = self.expenditures(q)
        own = np.einsum("iss->is", E)
        eta = own if eta is None else np.asarray(eta, dtype=float).T
        off = self.offdiag[None]
        eps, y = self.epsilon_strict, self.y

        gap = {
            "adding-up": float(np.max(np.abs(q.sum(axis=1) - betas), initial=0.0)),
            "dominance": float(np.max(beta_hats - q, initial=0.0)),
            "nonnegativity": float(np.max(-q, initial=0.0)),
            "eta": float(np.max(np.abs(eta - own), initial=0.0)),
        }
        lhs = eta[:, :, None] - E
        cond3 = lhs - (-eps + (y[None, :, None] + eps) * x)
        gap["preference"] = float(np.max(np.where(off, cond3, -np.inf), initial=0.0))
        cond5 = lhs.transpose(0, 2, 1) - y[None, None, :] * (1.0 - x)
        gap["garp"] = float(np.max(np.where(off, cond5, -np.inf), initial=0.0))
        if self.T >= 3:
            cond4 = x[:, :, :, None] + x[:, None, :, :] - 1.0 - x[:, :, None, :]
            distinct = _distinct_triples(self.T)
            gap["transitivity"] = float(np.max(np.where(distinct[None], cond4, -np.inf), initial=0.0))
        else:
            gap["transitivity"] = 0.0
        gap["integrality"] = float(np.max(np.minimum(np.abs(x), np.abs(1.0 - x))[:, self.offdiag], initial=0.0))
        return {name: max(value, 0.0) for name, value in gap.items()}

    def is_satisfied(self, q: np.ndarray, x: np.ndarray, tol: float = TAU_FEAS) -> bool:
        return all(value <= tol for value in self.residuals(q, x).values())

    # -----------------------------------------------------------------
    # Node relaxation
    # -----------------------------------------------------------------

    def presolve_fixings(self) -> np.ndarray:
        """Binaries decided by the q box alone; FREE elsewhere, 1 on the diagonal."""
        alphas = self.dataset.alphas
        lo = np.einsum("sk,tik->ist", alphas, self.lower)
        hi = np.einsum("sk,tik->ist", alphas, self.upper)
        own_lo = np.einsum("iss->is", lo)
        fixed = np.full((self.M, self.T, self.T), FREE, dtype=np.int8)
        # (iii) cannot hold with x_st = 0 once alpha_s'q_s - alpha_s'q_t > -eps is guaranteed
        forced_one = own_lo[:, :, None] - hi > -self.epsilon_strict
        # (v) cannot hold with x_st = 1 once alpha_t'q_t - alpha_t'q_s > 0 is guaranteed
        forced_zero = (own_lo[:, :, None] - hi).transpose(0, 2, 1) > TAU_LP
        fixed[forced_zero] = 0
        fixed[forced_one] = 1
        fixed[forced_one & forced_zero] = FREE - 1  # conflict marker, caught by propagate
        fixed[:, np.arange(self.T), np.arange(self.T)] = 1
        return fixed

    def relaxation(self, fixed: np.ndarray) -> LinearProgram:
        """Feasibility LP over q for a node; free binaries are projected out over [0, 1]."""
        T, M, N = self.T, self.M, self.N
        alphas, betas = self.dataset.alphas, self.dataset.betas
        eps, y = self.epsilon_strict, self.y
        rows, relations, rhs = [], [], []

        for t in range(T):
            for k in range(N):
                row = np.zeros(self.n_q)
                row[[self.index(t, i, k) for i in range(M)]] = 1.0
                rows.append(row)
                relations.append(Relation.EQ)
                rhs.append(betas[t, k])

        for i in range(M):
            for s, t in itertools.permutations(range(T), 2):
                state = fixed[i, s, t]
                qs = slice(self.index(s, i), self.index(s, i) + N)
                qt = slice(self.index(t, i), self.index(t, i) + N)
                row = np.zeros(self.n_q)
                if state == 1:
                    row[qt] += alphas[t]
                    row[qs] -= alphas[t]
                    bound = 0.0
                elif state == 0:
                    row[qs] += alphas[s]
                    row[qt] -= alphas[s]
                    bound = -eps
                else:
                    a = 1.0 / (y[s] + eps) if y[s] + eps > 0 else 0.0
                    b = 1.0 / y[t] if y[t] > 0 else 0.0
                    if a == 0.0 and b == 0.0:
                        continue
                    row[qs] += a * alphas[s] - b * alphas[t]
                    row[qt] += b * alphas[t] - a * alphas[s]
                    bound = 1.0 - eps * a
                rows.append(row)
                relations.append(Relation.LE)
                rhs.append(bound)

        A = np.array(rows).reshape(len(rows), self.n_q)
        return LinearProgram(
            np.zeros(self.n_q), A, tuple(relations), np.array(rhs),
            self.lower.ravel(), self.upper.ravel(), Sense.FEASIBILITY,
        )

    def relaxed_binaries(self, q: np.ndarray) -> np.ndarray:
        """Smallest x in [0, 1] allowed by (iii) at q, i.e. the relaxation's value for each binary."""
        E = self.expenditures(q)
        own = np.einsum("iss->is", E)
        denominator = self.y + self.epsilon_strict
        safe = np.where(denominator > 0, denominator, 1.0)
        a = (own[:, :, None] - E + self.epsilon_strict) / safe[None, :, None]
        return np.clip(a, 0.0, 1.0)

    def revealed_binaries(self, q: np.ndarray, fixed: np.ndarray) -> np.ndarray | None:
        """Closure of the revealed-preference relation at q merged with the node's fixings."""
        E = self.expenditures(q)
        own = np.einsum("iss->is", E)
        weak = own[:, :, None] - E > -self.epsilon_strict
        ones = weak | (fixed == 1)
        closure = np.stack([_warshall(ones[i]) for i in range(self.M)])
        if np.any(closure & (fixed == 0)):
            return None
        return closure & self.offdiag[None]


def _warshall(relation: np.ndarray) -> np.ndarray:
    closure = relation.copy()
    for k in range(closure.shape[0]):
        closure |= closure[:, k : k + 1] & closure[k : k + 1, :]
    return closure


def _distinct_triples(T: int) -> np.ndarray:
    s, u, t = np.meshgrid(np.arange(T), np.arange(T), np.arange(T), indexing="ij")
    return (s != u) & (u != t) & (s != t)


def propagate(fixed: np.ndarray) -> bool:
    """Close the fixings under transitivity and its contrapositives, in place.

    Returns False on a conflict (a binary forced to both values).
    """
    if np.any(fixed < FREE):
        return False
    for i in range(fixed.shape[0]):
        X = fixed[i]
        while True:
            closure = _warshall(X == 1)
            if np.any(closure & (X == 0)):
                return False
            new_one = closure & (X == FREE)
            X[new_one] = 1
            ones = (X == 1).astype(np.int64)
            zeros = (X == 0).astype(np.int64)
            # x_su = 1 and x_st = 0 force x_ut = 0; x_st = 0 and x_ut = 1 force x_su = 0
            forced_zero = ((ones.T @ zeros) > 0) | ((zeros @ ones.T) > 0)
            if np.any(forced_zero & (X == 1)):
                return False
            new_zero = forced_zero & (X == FREE)
            X[new_zero] = 0
            if not new_one.any() and not new_zero.any():
                break
    return True


def build_problem(dataset: Dataset, epsilon_strict: float | None = None) -> MilpProblem:
    problems = validate(dataset)
    if problems:
        raise DatasetError(f"dataset is invalid ({len(problems)} violations, first: {problems[0]})")
    y = np.einsum("tk,tk->t", dataset.alphas, dataset.betas)
    if epsilon_strict is None:
        epsilon_strict = EPSILON_STRICT_SCALE * float(y.max())
    if epsilon_strict < 0:
        raise ValueError("epsilon_strict must be nonnegative")
    lower, upper = allocation_bounds(dataset)
    for array in (y, lower, upper):
        array.setflags(write=False)
    return MilpProblem(dataset, float(epsilon_strict), y, lower, upper)


def proportional_split(problem: MilpProblem) -> np.ndarray:
    """Assignable quantities plus the unassigned remainder shared in proportion to them."""
    beta_hats = problem.dataset.beta_hats
    remainder = np.maximum(problem.dataset.betas - beta_hats.sum(axis=1), 0.0)
    totals = beta_hats.sum(axis=1, keepdims=True)
    shares = np.where(totals > 0, beta_hats / np.where(totals > 0, totals, 1.0), 1.0 / problem.M)
    return beta_hats + shares * remainder[:, None, :]


def _verdict(decision: Decision, start: float, nodes: int, q=None, x=None) -> MilpVerdict:
    witness = PersonalizedAllocation(q) if q is not None else None
    binaries = np.asarray(x, dtype=bool) if x is not None else None
    return MilpVerdict(decision, witness, binaries, nodes, time.perf_counter() - start)


def decide(problem: MilpProblem, node_budget: int = NODE_BUDGET) -> MilpVerdict:
    """Depth-first branch-and-bound over the revealed-preference binaries.

    Raises NodeBudgetExceeded when the budget runs out before a decision.
    """
    start = time.perf_counter()
    root = problem.presolve_fixings()
    if not propagate(root):
        logger.info("Coordination rejected during presolve")
        return _verdict(Decision.NOT_COORDINATING, start, 0)

    guess = proportional_split(problem)
    x = problem.revealed_binaries(guess, root)
    if x is not None and problem.is_satisfied(guess, x):
        logger.info("Proportional split already rationalizes the data")
        return _verdict(Decision.COORDINATING, start, 0, guess, x)

    stack = [root]
    nodes = 0
    while stack:
        fixed = stack.pop()
        nodes += 1
        if nodes > node_budget:
            raise NodeBudgetExceeded(nodes - 1, time.perf_counter() - start)
        if nodes % PROGRESS_EVERY_NODES == 0:
            logger.info("Progress: %d nodes explored, %d open", nodes, len(stack))

        solution = solve(problem.relaxation(fixed))
        if not solution.is_optimal:
            continue
        q = problem.unflatten(solution.primal)

        x = problem.revealed_binaries(q, fixed)
        if x is not None and problem.is_satisfied(q, x):
            logger.info("Coordination witness found after %d nodes", nodes)
            return _verdict(Decision.COORDINATING, start, nodes, q, x)

        free = (fixed == FREE) & problem.offdiag[None]
        if not free.any():
            x = fixed == 1
            if problem.is_satisfied(q, x):
                return _verdict(Decision.COORDINATING, start, nodes, q, x & problem.offdiag[None])
            continue

        relaxed = problem.relaxed_binaries(q)
        score = np.where(free, np.abs(relaxed - 0.5), np.inf)
        i, s, t = np.unravel_index(int(np.argmin(score)), score.shape)
        E = problem.expenditures(q)
        preferred = 1 if E[i, s, s] - E[i, s, t] > -problem.epsilon_strict else 0
        for value in (1 - preferred, preferred):
            child = fixed.copy()
            child[i, s, t] = value
            if propagate(child):
                stack.append(child)

    logger.info("Coordination rejected after %d nodes", nodes)
    return _verdict(Decision.NOT_COORDINATING, start, nodes)


def garp_oracle(dataset: Dataset, epsilon_strict: float | None = None, tol: float = TAU_LP) -> bool:
    """Direct GARP test for one fully observed agent (q_t = beta_t is forced).

    tol is the margin an expenditure gap must clear to count as strictly cheaper.
    """
    if dataset.M != 1:
        raise PreconditionError(f"the GARP oracle needs M = 1, got M = {dataset.M}")
    if not np.array_equal(dataset.beta_hats[:, 0, :], dataset.betas):
        raise PreconditionError("the GARP oracle needs beta_hat = beta at every observation")
    alphas, bundles = dataset.alphas, dataset.betas
    expenditure = alphas @ bundles.T  # [s, t] = alpha_s' beta_t
    own = np.diag(expenditure)
    if epsilon_strict is None:
        epsilon_strict = EPSILON_STRICT_SCALE * float(own.max())
    direct = own[:, None] - expenditure > -epsilon_strict
    closure = _warshall(direct)
    strictly_cheaper = (own[:, None] - expenditure).T > tol  # [s, t]: alpha_t'beta_t > alpha_t'beta_s
    violations = closure & strictly_cheaper & ~np.eye(dataset.T, dtype=bool)
    return not violations.any()


def exhaustive_decide(problem: MilpProblem) -> bool:
    """Enumerate every transitive binary assignment and test each with one LP."""
    T, M = problem.T, problem.M
    pairs = list(itertools.permutations(range(T), 2))
    per_agent = []
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        X = np.eye(T, dtype=np.int8)
        for (s, t), bit in zip(pairs, bits):
            X[s, t] = bit
        if np.array_equal(_warshall(X == 1), X == 1):
            per_agent.append(X)
    logger.debug("%d transitive relations per agent", len(per_agent))
    for combo in itertools.product(per_agent, repeat=M):
        fixed = np.stack(combo)
        if solve(problem.relaxation(fixed)).is_optimal:
            return True
    return False
