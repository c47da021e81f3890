"""Command-line front end.

Verbs:
  run              execute an experiment and write its result directory
  phylo            render lineage data from a result directory
  calibrate-tag    random-walk meeting-time calibration for the pursuit game
  validate-genome  structural check of a genome file

Exit codes: 0 success, 1 failed validation, 2 configuration errors,
3 data-file errors. A run is fully determined by its config snapshot plus
seed; the worker count changes wall-clock time only.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Optional

import numpy as np

from .config import (ConfigError, ExperimentConfig, config_to_text,
                     load_config, validate_config)
from .environments.mnist import MnistError
from .environments.tag import DEFAULT_REWARDS, tag_calibrate_samples
from .evolution import METRICS_HEADER, format_metrics_row, run_experiment
from .genome import GenomeParseError, deserialize, serialize, validate
from .netexec import save_params
from .netexec import compile as net_compile
from .phylogeny import (CHILD, PARENT, RANDOM, PhyloError, dominant_series,
                        export, tree_from_text)

MNIST_DIR_ENV = "FUNCNET_MNIST_DIR"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funcnet",
        description="Evolve function-graph networks and inspect the results.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment")
    run.add_argument("--config", help="config file; flags override its values")
    run.add_argument("--task", choices=["tag", "tag-prey", "tag-predator",
                                        "cartpole", "mnist"])
    run.add_argument("--n", type=int, help="population size (perfect square)")
    run.add_argument("--generations", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="result directory")
    run.add_argument("--workers", type=int)
    run.add_argument("--mnist-dir", dest="mnist_dir",
                     help=f"IDX data directory (or set {MNIST_DIR_ENV})")
    run.set_defaults(handler=cmd_run)

    phylo = sub.add_parser("phylo", help="lineage views from a result directory")
    phylo.add_argument("result_dir")
    mode = phylo.add_mutually_exclusive_group(required=True)
    mode.add_argument("--dot", action="store_true",
                      help="emit the tree in DOT syntax")
    mode.add_argument("--counts", action="store_true",
                      help="per-generation descendant totals by origin")
    phylo.set_defaults(handler=cmd_phylo)

    cal = sub.add_parser("calibrate-tag",
                         help="estimate random-walk first-meeting steps")
    cal.add_argument("--sims", type=int, default=1000)
    cal.add_argument("--seed", type=int, default=0)
    cal.set_defaults(handler=cmd_calibrate_tag)

    val = sub.add_parser("validate-genome", help="check a genome file")
    val.add_argument("file")
    val.set_defaults(handler=cmd_validate_genome)
    return parser


def resolve_config(args) -> ExperimentConfig:
    """Config file values, overridden by explicit flags, then the
    environment for the data directory."""
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for name in ("task", "n", "generations", "seed", "workers", "out",
                 "mnist_dir"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        config = dataclasses.replace(config, **overrides)
    if config.mnist_dir is None and os.environ.get(MNIST_DIR_ENV):
        config = dataclasses.replace(config, mnist_dir=os.environ[MNIST_DIR_ENV])
    validate_config(config)
    return config


def default_out_dir(config: ExperimentConfig) -> str:
    return os.path.join("runs", f"{config.task}-n{config.n}"
                                f"-g{config.generations}-s{config.seed}")


def cmd_run(args) -> int:
    config = resolve_config(args)
    if config.out is None:
        config = dataclasses.replace(config, out=default_out_dir(config))
    result = run_experiment(config)
    out = config.out
    os.makedirs(out, exist_ok=True)
    _write(out, "config.snapshot", config_to_text(config))
    rows = [METRICS_HEADER] + [format_metrics_row(r) for r in result.rows]
    _write(out, "metrics.csv", "\n".join(rows) + "\n")
    _write(out, "phylo.log", export(result.tree, "text"))
    _write(out, "best.genome", serialize(result.best_genome))
    net = net_compile(result.best_genome)
    net.params[:] = result.best_params
    save_params(net, os.path.join(out, "best.params"))

    score_cols = ("generation", "best_parent_score", "mean_score",
                  "std_score", "control_score", "best_ever_score",
                  "random_best_score")
    lines = ["\t".join(score_cols)]
    for r in result.rows:
        lines.append("\t".join(_cell(getattr(r, c)) for c in score_cols))
    _write(out, "score_vs_generation.tsv", "\n".join(lines) + "\n")

    loss_cols = ("batches_consumed", "best_parent_loss", "control_loss")
    lines = ["\t".join(loss_cols)]
    for r in result.rows:
        lines.append("\t".join(_cell(getattr(r, c)) for c in loss_cols))
    _write(out, "loss_vs_batches.tsv", "\n".join(lines) + "\n")

    last = result.rows[-1]
    print(f"wrote {out}: {len(result.rows)} generations")
    print(f"best member {result.best_id} (generation {result.best_generation})")
    if result.stopped_early:
        print(f"stopped early: {result.stop_reason} "
              f"at generation {last.generation}")
    return EXIT_OK


def _cell(value) -> str:
    return str(value) if isinstance(value, int) else f"{value:.10g}"


def _write(directory: str, name: str, text: str) -> None:
    with open(os.path.join(directory, name), "w") as fh:
        fh.write(text)


def cmd_phylo(args) -> int:
    path = os.path.join(args.result_dir, "phylo.log")
    with open(path) as fh:
        tree = tree_from_text(fh.read())
    if args.dot:
        sys.stdout.write(export(tree, "dot"))
        return EXIT_OK
    series = {role: dominant_series(tree, role)
              for role in (PARENT, CHILD, RANDOM)}
    print("generation\tparents\tchildren\trandom")
    for generation in range(tree.max_generation() + 1):
        cells = [str(series[role][generation]) for role in (PARENT, CHILD, RANDOM)]
        print(f"{generation}\t" + "\t".join(cells))
    return EXIT_OK


def cmd_calibrate_tag(args) -> int:
    if args.sims < 1:
        raise ConfigError("--sims must be at least 1")
    rng = np.random.default_rng(args.seed)
    samples = tag_calibrate_samples(rng, args.sims)
    mean, std = float(samples.mean()), float(samples.std())
    print(f"simulations: {args.sims}")
    print(f"mean first-meeting steps: {mean:.2f}")
    print(f"std: {std:.2f}")
    print(f"reward balance: one +{DEFAULT_REWARDS.catch:g} catch offsets "
          f"about {mean:.1f} step penalties of "
          f"{DEFAULT_REWARDS.predator_step:g} each")
    return EXIT_OK


def cmd_validate_genome(args) -> int:
    with open(args.file) as fh:
        text = fh.read()
    try:
        genome = deserialize(text)
    except GenomeParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    violations = validate(genome)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        print(f"invalid: {len(violations)} violation(s)", file=sys.stderr)
        return EXIT_INVALID
    print(f"valid: {len(genome.layers)} layers, "
          f"{genome.num_inputs} inputs, {genome.num_outputs} outputs")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError,
            MnistError, PhyloError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
