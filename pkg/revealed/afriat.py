"""Afriat certificates and the reconstructed min-of-affine utilities.

Given a witness allocation q, each agent's numbers (u_t, lambda_t) solve

    u_s - u_t <= lambda_t * (alpha_t' q_s - alpha_t' q_t)   for all s, t

and yield U(beta) = min_t { u_t + lambda_t * alpha_t' (beta - q_t) }.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
import pandas as pd

from config import CONTOUR_MARGIN, CONTOUR_RESOLUTION, RATIONALIZATION_SAMPLES, TAU_FEAS
from revealed.dataset import Dataset, PersonalizedAllocation
from revealed.lp import DimensionMismatchError, LinearProgram, Relation, Sense, Status, solve

logger = logging.getLogger(__name__)


class InfeasibleCertificateError(RuntimeError):
    """The supplied witness does not satisfy GARP for this agent."""


class UnsupportedDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class AfriatCertificate:
    agent: int
    u: np.ndarray
    lam: np.ndarray

    def to_json(self) -> dict:
        return {"agent": self.agent + 1, "u": self.u.tolist(), "lambda": self.lam.tolist()}


@dataclass(frozen=True)
class PiecewiseLinearUtility:
    """Pointwise minimum of T affine pieces anchored at the witness bundles."""

    intercepts: np.ndarray
    slopes: np.ndarray
    prices: np.ndarray
    anchors: np.ndarray

    @classmethod
    def from_certificate(cls, dataset: Dataset, witness: PersonalizedAllocation,
                         certificate: AfriatCertificate) -> "PiecewiseLinearUtility":
        return cls(
            certificate.u.copy(),
            certificate.lam.copy(),
            dataset.alphas,
            witness.q[:, certificate.agent, :].copy(),
        )

    @property
    def n_goods(self) -> int:
        return self.prices.shape[1]

    def __call__(self, beta) -> float:
        return evaluate(self, beta)


def _price_gaps(dataset: Dataset, witness: PersonalizedAllocation, agent: int) -> np.ndarray:
    """d[t, s] = alpha_t' q_s - alpha_t' q_t."""
    cost = dataset.alphas @ witness.q[:, agent, :].T
    return cost - np.diag(cost)[:, None]


def solve_certificate(dataset: Dataset, witness: PersonalizedAllocation, agent: int) -> AfriatCertificate:
    """Minimise sum(lambda) subject to the Afriat inequalities, u >= 1 and lambda >= 1."""
    T = dataset.T
    d = _price_gaps(dataset, witness, agent)
    rows = []
    for s in range(T):
        for t in range(T):
            if s == t:
                continue
            row = np.zeros(2 * T)
            row[s] += 1.0
            row[t] -= 1.0
            row[T + t] = -d[t, s]
            rows.append(row)
    A = np.array(rows).reshape(len(rows), 2 * T)
    objective = np.concatenate([np.zeros(T), np.ones(T)])
    lp = LinearProgram(objective, A, (Relation.LE,) * len(rows), np.zeros(len(rows)),
                       np.ones(2 * T), np.full(2 * T, np.inf), Sense.MINIMIZE)
    solution = solve(lp)
    if solution.status is not Status.OPTIMAL:
        raise InfeasibleCertificateError(
            f"agent {agent + 1}: Afriat inequalities are {solution.status.value} for the supplied witness"
        )
    u, lam = solution.primal[:T].copy(), solution.primal[T:].copy()
    logger.info("Agent %d certificate: sum(lambda) = %.4f", agent + 1, lam.sum())
    return AfriatCertificate(agent, u, lam)


def certificate_violations(dataset: Dataset, witness: PersonalizedAllocation,
                          certificate: AfriatCertificate) -> float:
    """Largest excess over all T^2 pairs of the Afriat inequalities (0 when sound)."""
    d = _price_gaps(dataset, witness, certificate.agent)
    u, lam = certificate.u, certificate.lam
    excess = (u[:, None] - u[None, :]) - lam[None, :] * d.T  # [s, t]
    positivity = max(float(np.max(1.0 - u)), float(np.max(1.0 - lam)), 0.0)
    return max(float(np.max(excess)), positivity, 0.0)


def solve_certificates(dataset: Dataset, witness: PersonalizedAllocation,
                       workers: int | None = None) -> list[AfriatCertificate]:
    with ThreadPoolExecutor(max_workers=workers or dataset.M) as executor:
        futures = {executor.submit(solve_certificate, dataset, witness, i): i for i in range(dataset.M)}
        certificates = {futures[f]: f.result() for f in as_completed(futures)}
    return [certificates[i] for i in range(dataset.M)]


def evaluate(utility: PiecewiseLinearUtility, beta) -> float:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (utility.n_goods,):
        raise DimensionMismatchError(f"bundle has shape {beta.shape}, utility expects ({utility.n_goods},)")
    return float(evaluate_many(utility, beta[None, :])[0])


def evaluate_many(utility: PiecewiseLinearUtility, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != utility.n_goods:
        raise DimensionMismatchError(f"points have shape {points.shape}, expected (*, {utility.n_goods})")
    offsets = np.einsum("tk,tk->t", utility.prices, utility.anchors)
    pieces = utility.intercepts[None, :] + utility.slopes[None, :] * (points @ utility.prices.T - offsets[None, :])
    return pieces.min(axis=1)


# -----------------------------------------------------------------
# Contours
# -----------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, float]
    upper: tuple[float, float]
    resolution: tuple[int, int] = (CONTOUR_RESOLUTION, CONTOUR_RESOLUTION)


def default_grid(utility: PiecewiseLinearUtility, resolution: int = CONTOUR_RESOLUTION) -> GridSpec:
    """Anchor bundles' bounding box widened by CONTOUR_MARGIN on each side, clipped at 0."""
    low = utility.anchors.min(axis=0)
    high = utility.anchors.max(axis=0)
    span = np.where(high > low, high - low, np.maximum(high, 1.0))
    lower = np.maximum(low - CONTOUR_MARGIN * span, 0.0)
    upper = high + CONTOUR_MARGIN * span
    return GridSpec(tuple(lower.tolist()), tuple(upper.tolist()), (resolution, resolution))


def tabulate(values_at, grid: GridSpec) -> pd.DataFrame:
    """Row-major table (beta1 outer, beta2 inner) of values_at(points) over a 2-D grid."""
    beta1 = np.linspace(grid.lower[0], grid.upper[0], grid.resolution[0])
    beta2 = np.linspace(grid.lower[1], grid.upper[1], grid.resolution[1])
    b1, b2 = np.meshgrid(beta1, beta2, indexing="ij")
    points = np.column_stack([b1.ravel(), b2.ravel()])
    return pd.DataFrame({"beta1": points[:, 0], "beta2": points[:, 1], "utility": values_at(points)})


def export_contour(utility: PiecewiseLinearUtility, grid: GridSpec | None = None) -> pd.DataFrame:
    if utility.n_goods != 2:
        raise UnsupportedDimensionError(f"contours need N = 2, got N = {utility.n_goods}")
    return tabulate(lambda points: evaluate_many(utility, points), grid or default_grid(utility))


def write_contour(frame: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g")


# -----------------------------------------------------------------
# Rationalization
# -----------------------------------------------------------------

@dataclass(frozen=True)
class RationalizationReport:
    max_violation: float
    n_violations: int
    samples_per_observation: int
    weights: np.ndarray
    welfare_gap: np.ndarray

    @property
    def passed(self) -> bool:
        return self.n_violations == 0 and float(np.max(np.abs(self.welfare_gap), initial=0.0)) <= TAU_FEAS

    def to_json(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "n_violations": self.n_violations,
            "samples_per_observation": self.samples_per_observation,
            "weights": self.weights.tolist(),
            "welfare_gap": self.welfare_gap.tolist(),
        }


def supporting_weights(certificates: list[AfriatCertificate]) -> np.ndarray:
    """w[t, i] proportional to 1 / lambda_t^i, normalised over agents."""
    inverse = np.stack([1.0 / c.lam for c in certificates], axis=1)
    return inverse / inverse.sum(axis=1, keepdims=True)


def sample_budget_bundles(rng: np.random.Generator, alpha: np.ndarray, budget: float,
                          n_agents: int, n_samples: int) -> np.ndarray:
    """Bundles zeta[k, i, :] with alpha' sum_i zeta[k, i] <= budget.

    A quarter of the draws spend the whole budget and put each agent's share on
    a single good.
    """
    N = alpha.size
    fractions = rng.uniform(0.0, 1.0, n_samples)
    shares = rng.dirichlet(np.ones(n_agents), n_samples)
    splits = rng.dirichlet(np.ones(N), (n_samples, n_agents))
    corner = n_samples // 4
    fractions[:corner] = 1.0
    goods = rng.integers(0, N, (corner, n_agents))
    splits[:corner] = np.eye(N)[goods]
    spend = budget * fractions[:, None, None] * shares[:, :, None] * splits
    return spend / alpha[None, None, :]


def welfare_optimum(dataset: Dataset, t: int, utilities: list[PiecewiseLinearUtility],
                    weights: np.ndarray) -> float:
    """max sum_i w_i U^i(zeta_i) subject to alpha_t' sum_i zeta_i <= y_t, as one LP."""
    M, N, T = dataset.M, dataset.N, dataset.T
    alpha = dataset.alphas[t]
    budget = float(alpha @ dataset.betas[t])
    n = M * N + M
    rows, rhs = [], []
    for i, utility in enumerate(utilities):
        for s in range(T):
            row = np.zeros(n)
            row[i * N:(i + 1) * N] = -utility.slopes[s] * utility.prices[s]
            row[M * N + i] = 1.0
            rows.append(row)
            rhs.append(utility.intercepts[s] - utility.slopes[s] * (utility.prices[s] @ utility.anchors[s]))
    budget_row = np.zeros(n)
    budget_row[: M * N] = np.tile(alpha, M)
    rows.append(budget_row)
    rhs.append(budget)
    lower = np.concatenate([np.zeros(M * N), np.full(M, -np.inf)])
    objective = np.concatenate([np.zeros(M * N), weights])
    lp = LinearProgram(objective, np.array(rows), (Relation.LE,) * len(rows), np.array(rhs),
                       lower, np.full(n, np.inf), Sense.MAXIMIZE)
    solution = solve(lp)
    if not solution.is_optimal:
        raise InfeasibleCertificateError(f"welfare LP at t={t + 1} is {solution.status.value}")
    return solution.objective_value


def rationalization_check(
    dataset: Dataset,
    witness: PersonalizedAllocation,
    certificates: list[AfriatCertificate],
    samples: int = RATIONALIZATION_SAMPLES,
    seed: int = 0,
    tol: float = TAU_FEAS,
) -> RationalizationReport:
    """Check that every q_t maximises the weighted reconstructed welfare on budget t."""
    if len(certificates) != dataset.M:
        raise ValueError(f"need one certificate per agent ({dataset.M}), got {len(certificates)}")
    rng = np.random.default_rng(seed)
    utilities = [PiecewiseLinearUtility.from_certificate(dataset, witness, c) for c in certificates]
    weights = supporting_weights(certificates)
    worst, count = 0.0, 0
    gaps = np.zeros(dataset.T)

    for t in range(dataset.T):
        alpha = dataset.alphas[t]
        budget = float(alpha @ dataset.betas[t])
        chosen = sum(weights[t, i] * evaluate(u, witness.q[t, i]) for i, u in enumerate(utilities))
        zeta = sample_budget_bundles(rng, alpha, budget, dataset.M, samples)
        zeta[0] = witness.q[t]
        welfare = sum(weights[t, i] * evaluate_many(u, zeta[:, i, :]) for i, u in enumerate(utilities))
        excess = welfare - chosen
        worst = max(worst, float(excess.max()))
        count += int(np.sum(excess > tol))
        gaps[t] = welfare_optimum(dataset, t, utilities, weights[t]) - chosen

    if count:
        logger.warning("Rationalization found %d violations (worst %.3e)", count, worst)
    return RationalizationReport(max(worst, 0.0), count, samples, weights, gaps)
