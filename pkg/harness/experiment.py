"""Monte Carlo runs of the coordination test on simulated radar networks."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import pandas as pd

from config import ASSIGNABLE_SCALE_BOUNDS, DEFAULT_SEED, DEFAULT_T, DEFAULT_TRIALS, NODE_BUDGET, OUTPUT_DIR
from harness.artifacts import atomic_directory, release_handler, setup_file_logger, write_json
from radar.network import load_network, simulate, simulate_independent, tri_radar_network
from revealed.afriat import InfeasibleCertificateError, solve_certificates
from revealed.coordination import Decision, NodeBudgetExceeded, build_problem, decide
from revealed.dataset import Dataset, PersonalizedAllocation, write_allocation

logger = logging.getLogger(__name__)

MODES = ("coordinated", "independent")
SUMMARY_COLUMNS = ["trial", "verdict", "nodes", "ms"]
FULL_OBSERVATION = (1.0, 1.0)
# timings and timestamps differ between otherwise identical runs
VOLATILE_ARTIFACTS = ("summary.csv",)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "coordinated"
    network: str | None = None  # agent spec file; None runs the three-radar network
    T: int = DEFAULT_T
    trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    M: int = 3  # agents in independent mode
    epsilon_strict: float | None = None
    node_budget: int = NODE_BUDGET
    out: str = OUTPUT_DIR
    workers: int | None = None  # None uses every core; 1 runs inline
    keep_witnesses: bool = False
    keep_certificates: bool = False
    full_observation: bool = False  # S = 1, every bundle assignable

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError(f"trial count must be >= 1, got {self.trials!r}")
        if not isinstance(self.T, int) or self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T!r}")
        if not isinstance(self.M, int) or self.M < 1:
            raise ConfigError(f"M must be >= 1, got {self.M!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.node_budget < 1:
            raise ConfigError(f"node budget must be >= 1, got {self.node_budget}")
        if self.epsilon_strict is not None and self.epsilon_strict < 0:
            raise ConfigError(f"epsilon_strict must be >= 0, got {self.epsilon_strict}")
        if self.workers is not None and (not isinstance(self.workers, int) or self.workers < 1):
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}")
        return self

    @classmethod
    def from_json(cls, document: dict) -> "ExperimentConfig":
        if not isinstance(document, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**document).validate()

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except UnicodeDecodeError as e:
            raise ConfigError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e.msg} at line {e.lineno}, column {e.colno}") from e
        return cls.from_json(document)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Replace every field whose override is not None."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **changes).validate()


@dataclass(frozen=True)
class TrialResult:
    trial: int
    verdict: Decision
    node_count: int
    wall_time: float
    witness_path: str | None = None
    certificate_paths: tuple[str, ...] = ()

    def row(self) -> dict:
        return {"trial": self.trial, "verdict": self.verdict.value,
                "nodes": self.node_count, "ms": round(1000 * self.wall_time, 3)}


@dataclass(frozen=True)
class ExperimentSummary:
    config: ExperimentConfig
    results: list[TrialResult]

    def count(self, decision: Decision) -> int:
        return sum(r.verdict is decision for r in self.results)

    @property
    def exit_code(self) -> int:
        return 1 if self.count(Decision.UNDECIDED) else 0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.row() for r in self.results], columns=SUMMARY_COLUMNS)

    def to_json(self) -> dict:
        n = len(self.results)
        counts = {d.value: self.count(d) for d in Decision}
        return {
            "mode": self.config.mode,
            "T": self.config.T,
            "trials": n,
            "seed": self.config.seed,
            "full_observation": self.config.full_observation,
            "counts": counts,
            "rates": {k: v / n for k, v in counts.items()},
        }


def trial_dataset(config: ExperimentConfig, trial: int, network=None) -> Dataset:
    """The simulated dataset of one trial, on the stream (seed, trial)."""
    seed = [config.seed, trial]
    scale_bounds = FULL_OBSERVATION if config.full_observation else ASSIGNABLE_SCALE_BOUNDS
    if config.mode == "coordinated":
        dataset, _ = simulate(network or tri_radar_network(), config.T, seed, scale_bounds)
        return dataset
    return simulate_independent(config.M, config.T, seed, scale_bounds=scale_bounds)


def _write_certificates(dataset: Dataset, witness: PersonalizedAllocation, trial: int,
                        directory: str) -> tuple[str, ...]:
    os.makedirs(os.path.join(directory, "certificates"), exist_ok=True)
    try:
        certificates = solve_certificates(dataset, witness, workers=1)
    except InfeasibleCertificateError as e:
        logger.warning("Trial %d: no certificate for the witness: %s", trial, e)
        return ()
    paths = []
    for certificate in certificates:
        relative = f"certificates/trial{trial:04d}_agent{certificate.agent + 1}.json"
        write_json(certificate.to_json(), os.path.join(directory, relative))
        paths.append(relative)
    return tuple(paths)


def run_trial(config: ExperimentConfig, trial: int, network=None, directory: str | None = None) -> TrialResult:
    """One simulated dataset through the coordination test.

    With `directory` set, witnesses and certificates requested by the config are
    written under it and reported as paths relative to it.
    """
    dataset = trial_dataset(config, trial, network)
    problem = build_problem(dataset, config.epsilon_strict)
    start = time.perf_counter()
    try:
        verdict = decide(problem, config.node_budget)
    except NodeBudgetExceeded as e:
        logger.warning("Trial %d undecided: %s", trial, e)
        return TrialResult(trial, Decision.UNDECIDED, e.node_count, time.perf_counter() - start)

    witness_path, certificate_paths = None, ()
    if directory and verdict.witness is not None:
        if config.keep_witnesses:
            os.makedirs(os.path.join(directory, "witnesses"), exist_ok=True)
            witness_path = f"witnesses/witness_trial{trial:04d}.json"
            write_allocation(verdict.witness, os.path.join(directory, witness_path))
        if config.keep_certificates:
            certificate_paths = _write_certificates(dataset, verdict.witness, trial, directory)
    return TrialResult(trial, verdict.decision, verdict.node_count, verdict.wall_time,
                       witness_path, certificate_paths)


def effective_workers(config: ExperimentConfig) -> int:
    return config.workers or os.cpu_count() or 1


def _run_trials(config: ExperimentConfig, network, directory: str):
    workers = effective_workers(config)
    if workers == 1:
        for trial in range(config.trials):
            yield run_trial(config, trial, network, directory)
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(run_trial, config, trial, network, directory)
                   for trial in range(config.trials)]
        for future in as_completed(futures):
            yield future.result()


def run_experiment(config: ExperimentConfig) -> ExperimentSummary:
    """Run every trial and commit summary.csv / summary.json atomically.

    A single worker runs the trials inline; more share a thread pool.
    """
    config.validate()
    network = load_network(config.network) if config.network else tri_radar_network()

    with atomic_directory(config.out, volatile=VOLATILE_ARTIFACTS) as staging:
        handler = setup_file_logger(staging, ("Summary:", "Trial", "Running"))
        try:
            logger.info("Running %d %s trials (T=%d, seed=%d, workers=%d%s)", config.trials, config.mode,
                        config.T, config.seed, effective_workers(config),
                        ", full observation" if config.full_observation else "")
            results = []
            for done, result in enumerate(_run_trials(config, network, staging), start=1):
                results.append(result)
                if done % 10 == 0 or done == config.trials:
                    logger.info("Progress: %d/%d (%.1f%%)", done, config.trials, 100 * done / config.trials)
            results.sort(key=lambda r: r.trial)

            summary = ExperimentSummary(config, results)
            summary.frame().to_csv(os.path.join(staging, "summary.csv"), index=False)
            write_json(summary.to_json(), os.path.join(staging, "summary.json"))
            counts = summary.to_json()["counts"]
            logger.info("Summary: %d coordinating, %d not-coordinating, %d undecided",
                        counts["coordinating"], counts["not-coordinating"], counts["undecided"])
        finally:
            release_handler(handler)
    return summary
