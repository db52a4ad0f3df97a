"""Command line front end: pretrain, simulate, run, report.

Every command is deterministic given its config file and inputs, and none
mutates its input files.  Exit codes: 0 success, 1 total failure, 2 invalid
input.  The only environment variable honored is the output-dir override;
everything else goes through flags or the config file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import acoustics, nn, pipeline, report
from .config import RunConfig, load_config

OUT_DIR_ENV = "MICFED_OUT"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CHECKPOINT_NAME = "checkpoint.ckpt"
LOSS_TRACE_NAME = "pretrain_loss.csv"


class CliError(Exception):
    """Unusable input (config, files, flag values); maps to exit code 2."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="micfed",
        description="Cluster microphone nodes by dominant sound source with "
                    "privacy-aware federated training on local features.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="key = value config file (defaults baked in)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR",
                        help=f"output directory (overrides ${OUT_DIR_ENV} "
                             "and the config out_dir)")

    p = sub.add_parser("pretrain", parents=[common],
                       help="pretrain the autoencoder on the synthetic corpus")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate the scenario batch as JSON files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", parents=[common],
                       help="cluster every scenario and write result files")
    p.add_argument("--checkpoint", required=True, metavar="FILE",
                   help="pretrained model checkpoint")
    p.add_argument("--scenarios", metavar="DIR",
                   help="directory of scenario files; generated from the "
                        "config when omitted")
    p.add_argument("--workers", type=int, default=1,
                   help="scenario-level parallelism (never changes results)")
    p.add_argument("--dry-run", action="store_true",
                   help="validate config, checkpoint, and scenarios; write nothing")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report",
                       help="render tables, CSVs, and figures from run results")
    p.add_argument("--results", required=True, metavar="DIR",
                   help="directory written by the run command")
    p.add_argument("--out", metavar="DIR",
                   help="report directory (default: <results>/report)")
    p.set_defaults(func=cmd_report)
    return parser


def _resolve_config(args) -> RunConfig:
    try:
        config = load_config(args.config) if args.config else RunConfig()
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"bad config: {exc}") from exc
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    out = args.out or os.environ.get(OUT_DIR_ENV)
    if out:
        overrides["out_dir"] = out
    if overrides:
        try:
            config = dataclasses.replace(config, **overrides)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    return config


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(config)
    model, losses = pipeline.pretrain_model(config)
    if not all(math.isfinite(loss) for loss in losses):
        print("error: pretraining diverged (non-finite loss)", file=sys.stderr)
        return EXIT_FAILURE
    nn.save_checkpoint(model, out / CHECKPOINT_NAME)
    with open(out / LOSS_TRACE_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(losses, start=1):
            writer.writerow([epoch, repr(loss)])
    print(f"wrote {out / CHECKPOINT_NAME} after {len(losses)} epochs")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _resolve_config(args)
    out = _output_dir(config)
    scenarios, skipped = pipeline.generate_batch(config)
    for seed, reason in skipped:
        print(f"warning: scenario seed {seed} skipped: {reason}", file=sys.stderr)
    for scenario in scenarios:
        acoustics.save_scenario(scenario, out / f"scenario_{scenario.seed}.json")
    if not scenarios:
        print("error: every scenario seed was unsatisfiable", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {len(scenarios)} scenario file(s) to {out}")
    return EXIT_OK


def _load_scenarios(config: RunConfig, scenarios_dir) -> list:
    if scenarios_dir is None:
        scenarios, skipped = pipeline.generate_batch(config)
        for seed, reason in skipped:
            print(f"warning: scenario seed {seed} skipped: {reason}",
                  file=sys.stderr)
        if not scenarios:
            raise CliError("every scenario seed was unsatisfiable")
        return scenarios
    paths = sorted(Path(scenarios_dir).glob("scenario_*.json"))
    if not paths:
        raise CliError(f"no scenario files under {scenarios_dir}")
    scenarios = []
    for path in paths:
        try:
            scenarios.append(acoustics.load_scenario(path))
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"bad scenario file {path}: {exc}") from exc
    scenarios.sort(key=lambda s: s.seed)
    return scenarios


def _scenario_fusion_scores(evaluation) -> dict:
    scores = {}
    for mode, pred in evaluation.predictions.items():
        matches = [int(p == t) for p, t in zip(pred, evaluation.cluster_truth)]
        scores[mode] = float(np.mean(matches))
    return scores


def _write_aggregate_csv(outcomes, path):
    """One row per scenario: distances, accuracy, per-mode fusion scores."""
    modes = list(outcomes[0].evaluation.predictions)
    header = (["seed", "split_round", "n_clusters",
               "d_c1_s1", "d_c1_s2", "d_c2_s1", "d_c2_s2",
               "assignment_accuracy"]
              + [f"fusion_{mode}" for mode in modes])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for outcome in outcomes:
            ev = outcome.evaluation
            cells = ["", "", "", ""]
            for ci in range(min(len(outcome.clusters), 2)):
                for sj in range(2):
                    cells[2 * ci + sj] = repr(float(ev.distance[ci, sj]))
            fusion = _scenario_fusion_scores(ev)
            writer.writerow(
                [outcome.seed,
                 "" if outcome.split_round is None else outcome.split_round,
                 len(outcome.clusters), *cells,
                 repr(ev.assignment_accuracy)]
                + [repr(fusion[mode]) for mode in modes])


def cmd_run(args) -> int:
    config = _resolve_config(args)
    if args.workers < 1:
        raise CliError("--workers must be at least 1")
    checkpoint_path = Path(args.checkpoint)
    try:
        nn.load_checkpoint(checkpoint_path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"bad checkpoint: {exc}") from exc
    scenarios = _load_scenarios(config, args.scenarios)
    if args.dry_run:
        print(f"dry run: checkpoint and {len(scenarios)} scenario(s) valid; "
              "nothing written")
        return EXIT_OK

    out = _output_dir(config)
    outcomes, errors = pipeline.run_batch(str(checkpoint_path), scenarios,
                                          config, workers=args.workers)
    for seed, message in errors:
        print(f"warning: scenario {seed} failed: {message}", file=sys.stderr)
    if not outcomes:
        print("error: every scenario failed", file=sys.stderr)
        return EXIT_FAILURE
    for outcome in outcomes:
        pipeline.save_json(pipeline.outcome_to_dict(outcome),
                           out / f"result_{outcome.seed}.json")
    # aggregate files go last so their presence marks a finished batch
    aggregate = pipeline.aggregate_outcomes(outcomes)
    _write_aggregate_csv(outcomes, out / "aggregate.csv")
    summary = aggregate.to_dict()
    summary["errors"] = [{"seed": seed, "message": message}
                         for seed, message in errors]
    pipeline.save_json(summary, out / "summary.json")
    print(report.format_overview(summary))
    return EXIT_OK


def cmd_report(args) -> int:
    results_dir = Path(args.results)
    if not results_dir.is_dir():
        raise CliError(f"results directory {results_dir} does not exist")
    out = Path(args.out) if args.out else results_dir / "report"
    try:
        text = report.write_report(results_dir, out)
    except report.EmptyResultsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(text)
    print(f"\nfiles in {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
