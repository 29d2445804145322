"""Forward model of a coordinating radar network.

Each radar i turns a spend m_i of the shared budget C into its best bundle at
prices alpha (closed-form demand), so the network's weighted-sum problem
reduces to splitting C over the M-simplex.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from config import (
    ALLOCATE_MAX_STEPS,
    ALLOCATE_RESTARTS,
    ALLOCATE_SEED,
    ASSIGNABLE_SCALE_BOUNDS,
    GRID_ORACLE_REFINE,
    GRID_ORACLE_RESOLUTION,
    INDEPENDENT_BUNDLE_BOUNDS,
    N_GOODS,
    NETWORK_BUDGET,
    PROBE_BOUNDS,
    TAU_FEAS,
    TAU_OPT,
    TRI_RADAR_AGENTS,
)
from revealed.dataset import Dataset, Observation, PersonalizedAllocation, Probe

logger = logging.getLogger(__name__)

UTILITY_KINDS = ("product", "sum", "powerprod")


class SpecError(ValueError):
    pass


class AllocationError(RuntimeError):
    """The weighted-sum solver failed to produce a finite, feasible optimum."""


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    exponents: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise SpecError(f"unknown utility {self.kind!r}; expected one of {UTILITY_KINDS}")
        exponents = tuple(float(a) for a in self.exponents)
        if self.kind == "powerprod" and (not exponents or any(a <= 0 for a in exponents)):
            raise SpecError("powerprod needs positive exponents")
        if self.kind == "product" and any(a != 1.0 for a in exponents):
            raise SpecError("product utility has unit exponents; use powerprod for others")
        object.__setattr__(self, "exponents", exponents)

    def powers(self, n_goods: int) -> np.ndarray:
        if self.kind in ("product", "sum"):
            return np.ones(n_goods)
        if len(self.exponents) != n_goods:
            raise SpecError(f"{len(self.exponents)} exponents for {n_goods} goods")
        return np.array(self.exponents)

    def utility(self, beta) -> float | np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if self.kind == "sum":
            return beta.sum(axis=-1)
        return np.prod(np.power(beta, self.powers(beta.shape[-1])), axis=-1)

    def demand(self, alpha: np.ndarray, spend: float) -> np.ndarray:
        """Utility-maximising bundle on the budget alpha' beta <= spend."""
        bundle = np.zeros(alpha.size)
        if spend <= 0:
            return bundle
        if self.kind == "sum":
            cheapest = int(np.argmin(alpha))
            bundle[cheapest] = spend / alpha[cheapest]
            return bundle
        a = self.powers(alpha.size)
        return spend * a / (a.sum() * alpha)

    def indirect(self, alpha: np.ndarray) -> tuple[float, float]:
        """(c, p) with best attainable utility c * spend**p."""
        if self.kind == "sum":
            return 1.0 / float(alpha.min()), 1.0
        a = self.powers(alpha.size)
        total = a.sum()
        return float(np.prod(np.power(a / (total * alpha), a))), float(total)


@dataclass(frozen=True)
class NetworkSpec:
    agents: tuple[AgentSpec, ...]
    pareto_weights: np.ndarray
    budget: float = NETWORK_BUDGET
    n_goods: int = N_GOODS

    def __post_init__(self):
        weights = np.array(self.pareto_weights, dtype=float)
        if len(self.agents) == 0:
            raise SpecError("network needs at least one agent")
        if weights.shape != (len(self.agents),):
            raise SpecError(f"{weights.size} Pareto weights for {len(self.agents)} agents")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise SpecError(f"Pareto weights must be positive and sum to 1, got {weights.tolist()}")
        if not self.budget > 0:
            raise SpecError(f"budget must be positive, got {self.budget}")
        for agent in self.agents:
            agent.powers(self.n_goods)
        weights.setflags(write=False)
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "pareto_weights", weights)

    @property
    def M(self) -> int:
        return len(self.agents)

    @classmethod
    def from_json(cls, document, budget: float = NETWORK_BUDGET, n_goods: int = N_GOODS) -> "NetworkSpec":
        if not isinstance(document, list):
            raise SpecError("agent spec must be a JSON list")
        try:
            agents = [AgentSpec(entry["utility"], tuple(entry.get("exponents", ()))) for entry in document]
            weights = [entry["weight"] for entry in document]
        except (KeyError, TypeError) as e:
            raise SpecError(f"malformed agent entry: {e}") from e
        return cls(tuple(agents), np.array(weights, dtype=float), budget, n_goods)

    def welfare(self, bundles: np.ndarray) -> float:
        return float(sum(w * agent.utility(b) for w, agent, b in zip(self.pareto_weights, self.agents, bundles)))


def tri_radar_network() -> NetworkSpec:
    return NetworkSpec.from_json(TRI_RADAR_AGENTS)


def load_network(path: str) -> NetworkSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except UnicodeDecodeError as e:
        raise SpecError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from e
    except json.JSONDecodeError as e:
        raise SpecError(f"{path}: {e.msg} at line {e.lineno}, column {e.colno}") from e
    return NetworkSpec.from_json(document)


def sample_probe(rng: np.random.Generator, n_goods: int = N_GOODS) -> Probe:
    return Probe(rng.uniform(*PROBE_BOUNDS, size=n_goods))


# -----------------------------------------------------------------
# Weighted-sum allocation
# -----------------------------------------------------------------

def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {m >= 0, sum(m) = total}."""
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - total
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - cumulative / ranks > 0)[0][-1]
    theta = cumulative[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


@dataclass
class _SpendObjective:
    coefficients: np.ndarray
    powers: np.ndarray

    def value(self, spend: np.ndarray) -> float:
        return float(np.sum(self.coefficients * np.power(spend, self.powers)))

    def gradient(self, spend: np.ndarray) -> np.ndarray:
        safe = np.maximum(spend, 1e-12)
        return self.coefficients * self.powers * np.power(safe, self.powers - 1.0)


def _ascend(objective: _SpendObjective, start: np.ndarray, budget: float, max_steps: int) -> np.ndarray:
    spend = project_simplex(start, budget)
    value = objective.value(spend)
    for _ in range(max_steps):
        g = objective.gradient(spend)
        scale = float(np.max(np.abs(g)))
        if not np.isfinite(scale):
            raise AllocationError(f"non-finite gradient at spend {spend.tolist()}")
        if scale == 0.0:
            break
        step = budget
        while step > budget * 1e-12:
            candidate = project_simplex(spend + step * g / scale, budget)
            candidate_value = objective.value(candidate)
            if candidate_value > value:
                break
            step *= 0.5
        else:
            break
        improvement = candidate_value - value
        spend, value = candidate, candidate_value
        if improvement <= TAU_OPT * 1e-3:
            break
    return spend


def optimal_spend(spec: NetworkSpec, probe: Probe) -> np.ndarray:
    """Best split of the budget across agents, over seeded interior starts and every vertex."""
    alpha = probe.alpha
    indirect = [agent.indirect(alpha) for agent in spec.agents]
    objective = _SpendObjective(
        spec.pareto_weights * np.array([c for c, _ in indirect]),
        np.array([p for _, p in indirect]),
    )
    rng = np.random.default_rng(ALLOCATE_SEED)
    starts = list(spec.budget * rng.dirichlet(np.ones(spec.M), ALLOCATE_RESTARTS))
    starts += list(spec.budget * np.eye(spec.M))

    best, best_value = None, -np.inf
    for start in starts:
        spend = _ascend(objective, start, spec.budget, ALLOCATE_MAX_STEPS)
        value = objective.value(spend)
        if value > best_value:
            best, best_value = spend, value
    if best is None or not np.isfinite(best_value):
        raise AllocationError(f"no finite optimum for probe {alpha.tolist()}")
    return best


def allocate(spec: NetworkSpec, probe: Probe) -> np.ndarray:
    """Pareto-optimal bundles beta[i, k] for one probe."""
    if probe.n_goods != spec.n_goods:
        raise SpecError(f"probe has {probe.n_goods} goods, network has {spec.n_goods}")
    spend = optimal_spend(spec, probe)
    bundles = np.array([agent.demand(probe.alpha, m) for agent, m in zip(spec.agents, spend)])
    slack = spec.budget - float(probe.alpha @ bundles.sum(axis=0))
    if np.any(bundles < 0) or abs(slack) > TAU_FEAS:
        raise AllocationError(f"allocation misses the budget by {slack:.3e}")
    return bundles


@dataclass
class OracleResult:
    value: float
    spend: np.ndarray
    bundles: np.ndarray = field(repr=False)


def _best_splits(agent: AgentSpec, weight: float, alpha: np.ndarray, spends: np.ndarray,
                 thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For every spend level, the best share theta of it placed on good 1."""
    beta1 = np.outer(spends, thetas) / alpha[0]
    beta2 = np.outer(spends, 1.0 - thetas) / alpha[1]
    values = weight * agent.utility(np.stack([beta1, beta2], axis=-1))
    best = values.argmax(axis=1)
    return values[np.arange(spends.size), best], thetas[best]


def _max_plus(tables: list[np.ndarray], target: int) -> tuple[float, list[int]]:
    """Best sum of one entry per table whose indices add up to target."""
    running = tables[0]
    choices = []
    for table in tables[1:]:
        size = running.size + table.size - 1
        combined = np.full(size, -np.inf)
        picked = np.zeros(size, dtype=int)
        for total in range(size):
            lo = max(0, total - table.size + 1)
            hi = min(total, running.size - 1)
            candidates = running[lo:hi + 1] + table[total - hi:total - lo + 1][::-1]
            j = int(np.argmax(candidates))
            combined[total], picked[total] = candidates[j], total - lo - j
        choices.append(picked)
        running = combined
    if target >= running.size or not np.isfinite(running[target]):
        return -np.inf, []
    indices = []
    remaining = target
    for picked in reversed(choices):
        indices.append(int(picked[remaining]))
        remaining -= indices[-1]
    indices.append(remaining)
    return float(running[target]), indices[::-1]


def grid_oracle(spec: NetworkSpec, probe: Probe, resolution: int = GRID_ORACLE_RESOLUTION,
                refine: int = GRID_ORACLE_REFINE) -> OracleResult:
    """Brute-force optimum of the weighted sum for N = 2, from utility evaluations only.

    A coarse grid over budget shares and within-agent splits is searched by
    max-plus convolution, then every share moves within one coarse step on a
    grid refine times finer.
    """
    if spec.n_goods != 2:
        raise SpecError("grid oracle handles two goods only")
    alpha = probe.alpha
    C = spec.budget
    levels = np.linspace(0.0, C, resolution + 1)
    thetas = np.linspace(0.0, 1.0, resolution + 1)
    pairs = list(zip(spec.agents, spec.pareto_weights))

    coarse = [_best_splits(agent, w, alpha, levels, thetas) for agent, w in pairs]
    value, indices = _max_plus([values for values, _ in coarse], resolution)
    spend = levels[indices]
    splits = np.array([best[j] for (_, best), j in zip(coarse, indices)])

    offsets = np.arange(-refine, refine + 1) * (C / resolution / refine)
    window = spend[:, None] + offsets[None, :]
    fine = []
    for (agent, w), split, shares in zip(pairs, splits, window):
        local = np.clip(split + np.linspace(-1.0, 1.0, 2 * refine + 1) / resolution, 0.0, 1.0)
        values, best = _best_splits(agent, w, alpha, np.clip(shares, 0.0, C), np.union1d(thetas, local))
        values[(shares < 0.0) | (shares > C)] = -np.inf
        fine.append((values, best))
    fine_value, fine_indices = _max_plus([values for values, _ in fine], spec.M * refine)
    if fine_value > value:
        value = fine_value
        spend = np.array([window[i, j] for i, j in enumerate(fine_indices)])
        splits = np.array([best[j] for (_, best), j in zip(fine, fine_indices)])

    bundles = np.column_stack([spend * splits / alpha[0], spend * (1.0 - splits) / alpha[1]])
    return OracleResult(value, spend, bundles)


# -----------------------------------------------------------------
# Observation and simulation
# -----------------------------------------------------------------

def observe(probe: Probe, bundles: np.ndarray, rng: np.random.Generator,
            scale_bounds: tuple[float, float] = ASSIGNABLE_SCALE_BOUNDS) -> Observation:
    """Aggregate sum plus assignable S_i * beta^i, one scale per agent."""
    bundles = np.asarray(bundles, dtype=float)
    scales = rng.uniform(*scale_bounds, size=bundles.shape[0])
    return Observation(probe, bundles.sum(axis=0), scales[:, None] * bundles)


def simulate(spec: NetworkSpec, T: int, seed: int,
             scale_bounds: tuple[float, float] = ASSIGNABLE_SCALE_BOUNDS) -> tuple[Dataset, PersonalizedAllocation]:
    """Coordinated dataset plus the hidden per-agent bundles that produced it."""
    if T < 1:
        raise SpecError(f"T must be at least 1, got {T}")
    rng = np.random.default_rng(seed)
    observations, truth = [], []
    for _ in range(T):
        probe = sample_probe(rng, spec.n_goods)
        bundles = allocate(spec, probe)
        observations.append(observe(probe, bundles, rng, scale_bounds))
        truth.append(bundles)
    logger.debug("Simulated %d coordinated observations (seed %s)", T, seed)
    return Dataset(tuple(observations), M=spec.M, N=spec.n_goods), PersonalizedAllocation(np.array(truth))


def simulate_independent(M: int, T: int, seed, n_goods: int = N_GOODS,
                         scale_bounds: tuple[float, float] = ASSIGNABLE_SCALE_BOUNDS) -> Dataset:
    """Dataset whose per-agent bundles are drawn uniformly, without any coordination."""
    if T < 1 or M < 1:
        raise SpecError(f"need T >= 1 and M >= 1, got T={T}, M={M}")
    rng = np.random.default_rng(seed)
    observations = []
    for _ in range(T):
        probe = sample_probe(rng, n_goods)
        bundles = rng.uniform(*INDEPENDENT_BUNDLE_BOUNDS, size=(M, n_goods))
        observations.append(observe(probe, bundles, rng, scale_bounds))
    return Dataset(tuple(observations), M=M, N=n_goods)
