"""Command line entry point: python -m harness.cli <subcommand> ..."""
import argparse
import logging
import sys

import numpy as np

from config import ASSIGNABLE_SCALE_BOUNDS, LOG_FORMAT
from harness.experiment import FULL_OBSERVATION, ConfigError, ExperimentConfig, run_experiment
from harness.pipeline import run_pipeline, run_reconstruct, run_test
from radar.network import SpecError, load_network, simulate, simulate_independent, tri_radar_network
from radar.tracker import TargetModel, track, write_track
from revealed.afriat import InfeasibleCertificateError, UnsupportedDimensionError
from revealed.coordination import Decision
from revealed.dataset import DatasetError, write_allocation, write_dataset, write_dataset_csv
from revealed.lp import MalformedProgramError

logger = logging.getLogger(__name__)

INPUT_ERRORS = (DatasetError, SpecError, ConfigError, MalformedProgramError,
                InfeasibleCertificateError, UnsupportedDimensionError, OSError)

# flags that map onto ExperimentConfig fields of the same name
CONFIG_FLAGS = ("mode", "network", "T", "trials", "seed", "M", "epsilon_strict", "node_budget",
                "workers", "keep_witnesses", "keep_certificates", "full_observation")


def load_config(args) -> ExperimentConfig:
    """--config file (or defaults) with every flag the user gave laid over it."""
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS if hasattr(args, name)}
    # store_true flags left unset must not clear a True from the file
    overrides = {name: (None if value is False else value) for name, value in overrides.items()}
    return config.with_overrides(**overrides)


def load_agents(config: ExperimentConfig):
    return load_network(config.network) if config.network else None


def cmd_simulate(args) -> int:
    config = load_config(args)
    scale_bounds = FULL_OBSERVATION if config.full_observation else ASSIGNABLE_SCALE_BOUNDS
    if config.mode == "independent":
        dataset = simulate_independent(config.M, config.T, config.seed, scale_bounds=scale_bounds)
        truth = None
    else:
        network = load_agents(config) or tri_radar_network()
        dataset, truth = simulate(network, config.T, config.seed, scale_bounds)
    write_dataset(dataset, args.out)
    if args.csv:
        write_dataset_csv(dataset, args.csv)
    if truth is None and (args.emit_truth or args.track):
        logger.warning("Independent datasets carry no coordinated truth; --emit-truth and --track ignored")
    elif truth is not None:
        if args.emit_truth:
            write_allocation(truth, args.emit_truth)
        if args.track:
            # tracker noise gets a stream of its own
            seed = np.random.SeedSequence(config.seed).spawn(1)[0]
            write_track(track(TargetModel.identity(dataset.N), dataset.alphas, truth.q, seed), args.track)
    logger.info("Wrote %d observations (M=%d, N=%d) to %s", dataset.T, dataset.M, dataset.N, args.out)
    return 0


def cmd_test(args) -> int:
    config = load_config(args)
    verdict = run_test(args.dataset, args.out, config.epsilon_strict, config.node_budget)
    if args.emit_witness and verdict.witness is not None:
        write_allocation(verdict.witness, args.emit_witness)
    return 1 if verdict.decision is Decision.UNDECIDED else 0


def cmd_reconstruct(args) -> int:
    config = load_config(args)
    reconstruction = run_reconstruct(args.dataset, args.witness, args.out, network=load_agents(config))
    for certificate in reconstruction.certificates:
        logger.info("Agent %d: sum(lambda) = %.4f", certificate.agent + 1, certificate.lam.sum())
    return 0


def cmd_montecarlo(args) -> int:
    config = load_config(args).with_overrides(out=args.out)
    summary = run_experiment(config)
    document = summary.to_json()
    logger.info("Counts: %s", document["counts"])
    return summary.exit_code


def cmd_pipeline(args) -> int:
    config = load_config(args)
    result = run_pipeline(args.dataset, args.out, config.epsilon_strict, config.node_budget,
                          network=load_agents(config))
    return result.exit_code


def _add_config(p) -> None:
    p.add_argument("--config", help="ExperimentConfig JSON; flags override it")


def _add_decision_flags(p) -> None:
    p.add_argument("--epsilon-strict", "--epsilon", dest="epsilon_strict", type=float,
                   help="strict-inequality margin (default scales with the largest expenditure)")
    p.add_argument("--node-budget", dest="node_budget", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harness.cli", description="Coordination detection for radar networks")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset")
    _add_config(p)
    p.add_argument("--agents", dest="network", help="agent spec JSON (defaults to the three-radar network)")
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--independent", dest="mode", action="store_const", const="independent",
                   help="uncoordinated uniform bundles")
    p.add_argument("--M", type=int, help="agents for --independent")
    p.add_argument("--full-observation", dest="full_observation", action="store_true",
                   help="every bundle assignable (S = 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write the CSV mirror here")
    p.add_argument("--emit-truth", dest="emit_truth", help="hidden per-agent bundles (test fixtures only)")
    p.add_argument("--track", help="run the Kalman trackers on the allocations and write a CSV here")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("test", help="run the coordination test on a dataset")
    p.add_argument("dataset")
    _add_config(p)
    _add_decision_flags(p)
    p.add_argument("--out", help="directory for verdict.json, witness.json and manifest.json")
    p.add_argument("--emit-witness", dest="emit_witness", metavar="PATH", help="also write the witness here")
    p.set_defaults(handler=cmd_test)

    p = sub.add_parser("reconstruct", help="certificates and contours from a dataset and witness")
    _add_config(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--witness", required=True)
    p.add_argument("--agents", dest="network", help="agent spec JSON; adds true_contour_agent*.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("montecarlo", help="repeated simulate + test")
    _add_config(p)
    _add_decision_flags(p)
    p.add_argument("--mode", choices=("coordinated", "independent"))
    p.add_argument("--agents", dest="network")
    p.add_argument("--T", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--full-observation", dest="full_observation", action="store_true")
    p.add_argument("--keep-witnesses", dest="keep_witnesses", action="store_true")
    p.add_argument("--keep-certificates", dest="keep_certificates", action="store_true")
    p.set_defaults(handler=cmd_montecarlo)

    p = sub.add_parser("pipeline", help="test, then reconstruct when coordinating")
    _add_config(p)
    _add_decision_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--agents", dest="network", help="agent spec JSON; adds true_contour_agent*.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except INPUT_ERRORS as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
