"""Dataset file in, verdict and reconstructed utilities out."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

from config import NODE_BUDGET
from harness.artifacts import atomic_directory, write_json
from radar.network import NetworkSpec, SpecError
from revealed.afriat import (
    AfriatCertificate,
    GridSpec,
    PiecewiseLinearUtility,
    RationalizationReport,
    default_grid,
    export_contour,
    rationalization_check,
    solve_certificates,
    tabulate,
    write_contour,
)
from revealed.coordination import Decision, MilpVerdict, NodeBudgetExceeded, build_problem, decide
from revealed.dataset import (
    Dataset,
    DatasetError,
    PersonalizedAllocation,
    read_allocation,
    read_dataset,
    write_allocation,
)

logger = logging.getLogger(__name__)

# verdict.json records wall time
VOLATILE_ARTIFACTS = ("verdict.json",)


@dataclass(frozen=True)
class Reconstruction:
    certificates: list[AfriatCertificate]
    report: RationalizationReport | None


@dataclass(frozen=True)
class PipelineResult:
    verdict: MilpVerdict
    reconstruction: Reconstruction | None

    @property
    def exit_code(self) -> int:
        return 1 if self.verdict.decision is Decision.UNDECIDED else 0


def _check_network(dataset: Dataset, network: NetworkSpec) -> None:
    if network.M != dataset.M or network.n_goods != dataset.N:
        raise SpecError(f"network has M={network.M}, N={network.n_goods}; dataset has M={dataset.M}, N={dataset.N}")


def reconstruct(dataset: Dataset, witness: PersonalizedAllocation, directory: str,
                grid: GridSpec | None = None, rationalize: bool = True,
                network: NetworkSpec | None = None) -> Reconstruction:
    """Write one certificate per agent, plus contour tables when N = 2.

    With a known network, each agent's true utility is tabulated on the same grid
    as its reconstruction (true_contour_agent{i}.csv).
    """
    problems = witness.violations(dataset)
    if problems:
        raise DatasetError(f"witness does not fit the dataset ({len(problems)} violations, first: {problems[0]})")
    if network is not None:
        _check_network(dataset, network)
    certificates = solve_certificates(dataset, witness)
    for certificate in certificates:
        agent = certificate.agent + 1
        write_json(certificate.to_json(), os.path.join(directory, f"certificate_agent{agent}.json"))
        if dataset.N != 2:
            continue
        utility = PiecewiseLinearUtility.from_certificate(dataset, witness, certificate)
        agent_grid = grid or default_grid(utility)
        write_contour(export_contour(utility, agent_grid), os.path.join(directory, f"contour_agent{agent}.csv"))
        if network is not None:
            truth = tabulate(network.agents[certificate.agent].utility, agent_grid)
            write_contour(truth, os.path.join(directory, f"true_contour_agent{agent}.csv"))
    report = None
    if rationalize:
        report = rationalization_check(dataset, witness, certificates)
        write_json(report.to_json(), os.path.join(directory, "rationalization.json"))
    logger.info("Reconstructed %d utilities", len(certificates))
    return Reconstruction(certificates, report)


def _decide(dataset: Dataset, epsilon_strict: float | None, node_budget: int) -> MilpVerdict:
    problem = build_problem(dataset, epsilon_strict)
    try:
        return decide(problem, node_budget)
    except NodeBudgetExceeded as e:
        logger.warning("Coordination test undecided: %s", e)
        return MilpVerdict(Decision.UNDECIDED, None, None, e.node_count, e.wall_time)


def run_test(dataset_path: str, out_dir: str | None, epsilon_strict: float | None = None,
             node_budget: int = NODE_BUDGET) -> MilpVerdict:
    """Coordination test only: verdict.json, and witness.json when coordinating.

    With no out_dir the verdict is only logged.
    """
    verdict = _decide(read_dataset(dataset_path), epsilon_strict, node_budget)
    logger.info("Verdict: %s (%d nodes, %.3fs)", verdict.decision.value, verdict.node_count, verdict.wall_time)
    if out_dir is None:
        return verdict
    with atomic_directory(out_dir, volatile=VOLATILE_ARTIFACTS) as staging:
        write_json(verdict.to_json(), os.path.join(staging, "verdict.json"))
        if verdict.witness is not None:
            write_allocation(verdict.witness, os.path.join(staging, "witness.json"))
    return verdict


def run_pipeline(dataset_path: str, out_dir: str, epsilon_strict: float | None = None,
                 node_budget: int = NODE_BUDGET, grid: GridSpec | None = None,
                 rationalize: bool = True, network: NetworkSpec | None = None) -> PipelineResult:
    dataset = read_dataset(dataset_path)
    if network is not None:
        _check_network(dataset, network)
    verdict = _decide(dataset, epsilon_strict, node_budget)

    reconstruction = None
    with atomic_directory(out_dir, volatile=VOLATILE_ARTIFACTS) as staging:
        write_json(verdict.to_json(), os.path.join(staging, "verdict.json"))
        if verdict.coordinating:
            write_allocation(verdict.witness, os.path.join(staging, "witness.json"))
            reconstruction = reconstruct(dataset, verdict.witness, staging, grid, rationalize, network)
    logger.info("Pipeline verdict: %s", verdict.decision.value)
    return PipelineResult(verdict, reconstruction)


def run_reconstruct(dataset_path: str, witness_path: str, out_dir: str,
                    grid: GridSpec | None = None, network: NetworkSpec | None = None) -> Reconstruction:
    dataset = read_dataset(dataset_path)
    witness = read_allocation(witness_path)
    with atomic_directory(out_dir) as staging:
        return reconstruct(dataset, witness, staging, grid, network=network)
