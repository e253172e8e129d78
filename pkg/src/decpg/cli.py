"""Experiment runner: `decpg run <config.json>` and `decpg accept <suite>`.

Each (algorithm, seed) cell writes one CSV of MetricRecords; a manifest
ties the cells to the exact config. Exit codes: 0 success, 2 invalid
config/suite, 3 runtime divergence (non-finite loss; step recorded).
"""

from __future__ import annotations

import os

# Keep each cell single-threaded; cells parallelize across processes.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import json
import sys
from multiprocessing import get_context

from .config import RunConfig, load_config, validate_config
from .envs import make_env
from .errors import ConfigError, TrainingError
from .metrics import CsvSink
from .probes import make_probe

TRAINER_FAMILIES = {}


def _build_trainer(cfg: RunConfig, seed: int, run_id: str):
    def env_factory():
        return make_env(cfg.env, **cfg.env_params)

    family = cfg.family
    if family == "stochastic":
        from .stochastic import StochasticTrainer

        return StochasticTrainer(env_factory, cfg.hparams, seed, run_id)
    if family == "coma":
        from .baselines import ComaTrainer

        return ComaTrainer(env_factory, cfg.hparams, seed, run_id)
    if family == "deterministic":
        from .deterministic import DeterministicTrainer

        return DeterministicTrainer(env_factory, cfg.hparams, seed, run_id)
    if family == "maddpg":
        from .baselines import MaddpgTrainer

        return MaddpgTrainer(env_factory, cfg.hparams, seed, run_id)
    raise ConfigError(f"no trainer for family {family!r}")


def run_cell(job: tuple) -> dict:
    """Execute one (algorithm, seed) cell; safe to call in a worker process."""
    cfg_dict, seed, csv_path = job
    cfg = validate_config(cfg_dict)
    run_id = f"{cfg.algorithm}-{cfg.env}-seed{seed}"
    entry = {"run_id": run_id, "seed": seed, "csv": os.path.basename(csv_path),
             "status": "ok"}
    with CsvSink(csv_path) as sink:
        trainer = _build_trainer(cfg, seed, run_id)
        probe = make_probe(trainer, cfg.env)
        try:
            trainer.run(cfg.total_steps, cfg.metric_period, sink, probe,
                        cfg.record_wall_clock)
        except TrainingError as exc:
            entry["status"] = "diverged"
            entry["divergence_step"] = int(getattr(exc, "step", -1))
            entry["error"] = str(exc)
    return entry


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    seeds = [s + args.seed_offset for s in cfg.seeds]
    jobs = []
    for seed in seeds:
        run_id = f"{cfg.algorithm}-{cfg.env}-seed{seed}"
        jobs.append((cfg.to_dict(), seed, os.path.join(out_dir, run_id + ".csv")))

    if args.parallel > 1:
        with get_context("fork").Pool(args.parallel) as pool:
            entries = pool.map(run_cell, jobs)
    else:
        entries = [run_cell(job) for job in jobs]

    manifest = {"config": cfg.to_dict(), "seed_offset": args.seed_offset,
                "cells": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    diverged = [e for e in entries if e["status"] == "diverged"]
    for entry in diverged:
        print(f"{entry['run_id']}: diverged at step {entry['divergence_step']}",
              file=sys.stderr)
    return 3 if diverged else 0


def cmd_accept(args) -> int:
    from . import acceptance

    if args.suite not in acceptance.SUITES:
        print(f"unknown suite {args.suite!r}; choose from "
              f"{sorted(acceptance.SUITES)}", file=sys.stderr)
        return 2
    ok = acceptance.run_suite(args.suite, out_dir=args.out,
                              parallel=args.parallel)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="decpg",
        description="Decomposed multi-agent policy-gradient experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute every (algorithm, seed) cell of a config")
    run_p.add_argument("config", help="path to a JSON run config")
    run_p.add_argument("--out", default=None, help="output directory (overrides config)")
    run_p.add_argument("--parallel", type=int, default=1, help="worker processes")
    run_p.add_argument("--seed-offset", type=int, default=0, dest="seed_offset")

    acc_p = sub.add_parser("accept", help="run a canned acceptance suite")
    acc_p.add_argument("suite", help="oracles | matrix_game | aggregation | mill | improvement")
    acc_p.add_argument("--out", default=None, help="directory for suite artifacts")
    acc_p.add_argument("--parallel", type=int, default=2)

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_accept(args)


if __name__ == "__main__":
    sys.exit(main())
