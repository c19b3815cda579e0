"""Command-line entry point: world generation, training, evaluation,
benchmarking, sweeps, and a gradient self-check.

All hyperparameters live in JSON config files; flags only override seeds and
paths. Exit codes: 0 success, 1 domain error (message on stderr), 2 usage
error. Every run is a pure function of (argv, config file, filesystem inputs);
randomness flows from explicit seeds only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .autodiff import grad_check
from .bench import BenchSpec, config_hash, run_benchmark, sweep, write_report
from .embedding import NetworkSpec, embed, init_network, load_checkpoint, save_checkpoint
from .episodes import (CorruptionSpec, corrupt, episode_hash, make_world, sample_episode,
                       world_from_manifest, world_to_manifest)
from .pll_core import RectifyConfig, rectify
from .trainer import TrainConfig, episode_loss_graph, meta_test, meta_train

CONFIG_KEYS = """\
config keys (JSON; defaults in parentheses):
  world.seed (1)            world.classes (50)       world.dim (16)
  world.sigma (1.0)         world.mean_scale (1.0)   world.path (load manifest instead)
  train_classes (30)        -- meta-train class pool: first N world classes
  network.hidden_dims ([64, 64])                     network.output_dim (64)
  train.max_epoch (200)     train.tasks_per_epoch (100)
  train.n_way (30)          train.k_support (5)      train.k_query (15)
  train.lr0 (0.001)         train.lr_half_period (20)
  train.init_seed (0)       train.task_seed (0)
  train.step_per_task (false)                        train.fixed_tasks (false)
  train.supervised_loss (false)  -- ablation: query loss uses ground truth
  rectify.iterations (10)   rectify.lambda (0.5)     rectify.k (null -> shots-1)
  rectify.distance ("euclidean" | "squared")
  corruption.p (1.0)        corruption.r (1)
  test.checkpoint (path)    test.n_way (5)           test.k_shot (5)
  test.k_query (15)         test.rounds (50)         test.eval_seed (1)
  bench.n_way ([5, 10])     bench.k_shot ([5, 10])   bench.r ([0, 1, 2])
  bench.p (1.0)             bench.rounds (50)        bench.k_query (15)
  bench.methods (["fspll", "fspll-nm", "pn"])        bench.eval_seed (1)
  bench.retrain_per_round (false)
  sweep.axis ("lambda" | "k")                        sweep.values (required)
  sweep.retrain (false)
"""


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None


def _resolve(path, base_dir):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _parse_world(doc: dict, base_dir: str, seed_override: int | None):
    section = doc.get("world", {})
    if "path" in section:
        manifest = _load_json(_resolve(section["path"], base_dir))
        return world_from_manifest(manifest)
    seed = seed_override if seed_override is not None else section.get("seed", 1)
    return make_world(seed, section.get("classes", 50), section.get("dim", 16),
                      section.get("sigma", 1.0), section.get("mean_scale", 1.0))


def _parse_rectify(doc: dict) -> RectifyConfig:
    section = doc.get("rectify", {})
    distance = section.get("distance", "euclidean")
    if distance == "squared-euclidean":
        distance = "squared"
    return RectifyConfig(
        iterations=section.get("iterations", 10),
        lam=section.get("lambda", 0.5),
        k=section.get("k"),
        distance=distance,
    )


def _parse_corruption(doc: dict) -> CorruptionSpec:
    section = doc.get("corruption", {})
    return CorruptionSpec(section.get("p", 1.0), section.get("r", 1))


def _parse_network(doc: dict, input_dim: int) -> NetworkSpec:
    section = doc.get("network", {})
    return NetworkSpec(input_dim,
                       tuple(section.get("hidden_dims", [64, 64])),
                       section.get("output_dim", 64))


def _parse_train(doc: dict, network: NetworkSpec, seed_override: int | None) -> TrainConfig:
    section = doc.get("train", {})
    init_seed = section.get("init_seed", 0)
    task_seed = section.get("task_seed", 0)
    if seed_override is not None:
        init_seed = task_seed = seed_override
    return TrainConfig(
        network=network,
        max_epoch=section.get("max_epoch", 200),
        tasks_per_epoch=section.get("tasks_per_epoch", 100),
        n_way=section.get("n_way", 30),
        k_support=section.get("k_support", 5),
        k_query=section.get("k_query", 15),
        rectify=_parse_rectify(doc),
        corruption=_parse_corruption(doc),
        lr0=section.get("lr0", 0.001),
        lr_half_period=section.get("lr_half_period", 20),
        train_classes=doc.get("train_classes", 30),
        init_seed=init_seed,
        task_seed=task_seed,
        step_per_task=section.get("step_per_task", False),
        fixed_tasks=section.get("fixed_tasks", False),
        supervised_loss=section.get("supervised_loss", False),
    )


def _parse_bench(doc: dict, base_dir: str, seed_override: int | None) -> BenchSpec:
    world = _parse_world(doc, base_dir, None)
    train = _parse_train(doc, _parse_network(doc, world.dim), None)
    section = doc.get("bench", {})
    eval_seed = seed_override if seed_override is not None else section.get("eval_seed", 1)
    return BenchSpec(
        world=world,
        train=train,
        train_classes=doc.get("train_classes", 30),
        n_way=list(section.get("n_way", [5, 10])),
        k_shot=list(section.get("k_shot", [5, 10])),
        r=list(section.get("r", [0, 1, 2])),
        p=section.get("p", 1.0),
        rounds=section.get("rounds", 50),
        methods=list(section.get("methods", ["fspll", "fspll-nm", "pn"])),
        k_query=section.get("k_query", 15),
        eval_seed=eval_seed,
        base_rectify=_parse_rectify(doc),
        retrain_per_round=section.get("retrain_per_round", False),
    )


def _require_out(args) -> str:
    if not args.out:
        raise ValueError("--out <dir> is required for this command")
    os.makedirs(args.out, exist_ok=True)
    return args.out


# -- subcommands ----------------------------------------------------------------

def cmd_gen_world(args) -> int:
    doc = _load_json(args.config)
    world = _parse_world(doc, os.path.dirname(os.path.abspath(args.config)), args.seed)
    out = _require_out(args)
    path = os.path.join(out, "world.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world_to_manifest(world), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path} ({world.classes} classes, dim {world.dim})")
    return 0


def cmd_train(args) -> int:
    doc = _load_json(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    world = _parse_world(doc, base_dir, None)
    config = _parse_train(doc, _parse_network(doc, world.dim), args.seed)
    out = _require_out(args)

    params, log = meta_train(config, world)

    snapshot = {
        "world": world_to_manifest(world),
        "train_classes": config.train_classes,
        "network": {"hidden_dims": list(config.network.hidden_dims),
                    "output_dim": config.network.output_dim},
        "train": {"max_epoch": config.max_epoch, "tasks_per_epoch": config.tasks_per_epoch,
                  "n_way": config.n_way, "k_support": config.k_support,
                  "k_query": config.k_query, "lr0": config.lr0,
                  "lr_half_period": config.lr_half_period, "init_seed": config.init_seed,
                  "task_seed": config.task_seed, "step_per_task": config.step_per_task,
                  "fixed_tasks": config.fixed_tasks,
                  "supervised_loss": config.supervised_loss},
        "rectify": {"iterations": config.rectify.iterations, "lambda": config.rectify.lam,
                    "k": config.rectify.k, "distance": config.rectify.distance},
        "corruption": {"p": config.corruption.p, "r": config.corruption.r},
    }
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=1, sort_keys=True)
        fh.write("\n")

    # Wall time is only written when asked for: it would break byte-level
    # reproducibility of the run directory.
    with open(os.path.join(out, "log.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,lr,seconds\n")
        for e in log.entries:
            seconds = f"{e.seconds:.6f}" if args.timing else "0.000000"
            fh.write(f"{e.epoch},{e.loss!r},{e.lr!r},{seconds}\n")

    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(params, ckpt)
    if log.entries:
        print(f"trained {config.max_epoch} epochs; "
              f"final loss {log.entries[-1].loss:.6f}; wrote {ckpt}")
    else:
        print(f"trained 0 epochs; wrote initialized params to {ckpt}")
    return 0


def cmd_test(args) -> int:
    doc = _load_json(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    world = _parse_world(doc, base_dir, None)
    section = doc.get("test", {})
    if "checkpoint" not in section:
        raise ValueError("config key test.checkpoint is required")
    params = load_checkpoint(_resolve(section["checkpoint"], base_dir))
    rect = _parse_rectify(doc)
    corruption = _parse_corruption(doc)
    train_classes = doc.get("train_classes", 30)
    n_way = section.get("n_way", 5)
    k_shot = section.get("k_shot", 5)
    k_query = section.get("k_query", 15)
    rounds = section.get("rounds", 50)
    eval_seed = args.seed if args.seed is not None else section.get("eval_seed", 1)

    held_out = np.arange(train_classes, world.classes)
    if len(held_out) < n_way:
        raise ValueError(f"held-out pool ({len(held_out)}) smaller than n_way={n_way}")
    accs, hashes = [], []
    for round_no in range(rounds):
        rng = np.random.default_rng([eval_seed, n_way, k_shot, corruption.r, round_no])
        class_ids = rng.choice(held_out, size=n_way, replace=False)
        episode = sample_episode(world, class_ids, k_shot, k_query, rng)
        episode = corrupt(episode, corruption, rng)
        hashes.append(episode_hash(episode))
        accs.append(meta_test(params, episode, rect).accuracy)

    mean, std = float(np.mean(accs)), float(np.std(accs))
    print(f"accuracy over {rounds} rounds: {mean:.6f} +/- {std:.6f}")
    if args.out:
        out = _require_out(args)
        with open(os.path.join(out, "test_rounds.csv"), "w", encoding="utf-8") as fh:
            fh.write("round,accuracy,episode_hash\n")
            for i, (acc, h) in enumerate(zip(accs, hashes)):
                fh.write(f"{i},{acc:.6f},{h}\n")
        with open(os.path.join(out, "test_summary.json"), "w", encoding="utf-8") as fh:
            json.dump({"mean": round(mean, 6), "std": round(std, 6), "rounds": rounds,
                       "n_way": n_way, "k_shot": k_shot, "eval_seed": eval_seed},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_bench(args) -> int:
    doc = _load_json(args.config)
    spec = _parse_bench(doc, os.path.dirname(os.path.abspath(args.config)), args.seed)
    out = _require_out(args)
    result = run_benchmark(spec)
    paths = write_report(result, out)
    for cell in result.cells:
        for method in result.methods:
            print(f"{cell.label()} {method}: "
                  f"{result.mean(cell.label(), method):.4f} "
                  f"+/- {result.std(cell.label(), method):.4f}")
    print(f"wrote {paths['rounds.csv']}, {paths['summary.csv']}, {paths['meta.json']}")
    return 0


def cmd_sweep(args) -> int:
    doc = _load_json(args.config)
    spec = _parse_bench(doc, os.path.dirname(os.path.abspath(args.config)), args.seed)
    section = doc.get("sweep", {})
    if "axis" not in section or "values" not in section:
        raise ValueError("config keys sweep.axis and sweep.values are required")
    out = _require_out(args)
    result = sweep(spec, section["axis"], list(section["values"]),
                   retrain=section.get("retrain", False))
    paths = write_report(result, out)
    for cell in result.cells:
        for method in result.methods:
            print(f"{cell.label()} {method}: {result.mean(cell.label(), method):.4f}")
    print(f"wrote {paths['rounds.csv']}, {paths['summary.csv']}, {paths['meta.json']}")
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    worst = 0.0
    excluded = 0
    for trial in range(3):
        world = make_world(int(rng.integers(2 ** 31)), classes=6, dim=5, sigma=0.6)
        episode = sample_episode(world, [0, 1, 2], 3, 4, rng)
        episode = corrupt(episode, CorruptionSpec(1.0, 1), rng)
        spec = NetworkSpec(5, (6,), 4)
        params = init_network(spec, int(rng.integers(2 ** 31)))
        rect = RectifyConfig(iterations=5, lam=0.5, k=2)
        _, Q = rectify(embed(params, episode.support), episode.candidates, rect)
        graph, sink, layers = episode_loss_graph(params, episode, Q, rect.distance)
        for w_node, b_node in layers:
            for leaf in (w_node, b_node):
                res = grad_check(graph, sink, leaf, step=1e-5)
                worst = max(worst, res.max_rel_error)
                excluded += res.excluded
    print(f"max relative gradient error: {worst:.3e} ({excluded} kink entries excluded)")
    return 0 if worst < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fspll",
        description="Few-shot partial-label learning toolkit",
        epilog=CONFIG_KEYS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"fspll {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text, epilog=CONFIG_KEYS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's primary seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="parallelism cap (1 = sequential, bit-reproducible; "
                            "execution is currently always sequential)")
        p.set_defaults(func=func)
        return p

    add("gen-world", cmd_gen_world, "generate a synthetic world manifest")
    train_p = add("train", cmd_train, "meta-train an embedding checkpoint")
    train_p.add_argument("--timing", action="store_true",
                         help="record wall time in log.csv (off: byte-reproducible runs)")
    add("test", cmd_test, "evaluate a checkpoint on fresh meta-test episodes")
    add("bench", cmd_bench, "run the paired benchmark grid")
    add("sweep", cmd_sweep, "sensitivity sweep over lambda or k")
    add("grad-check", cmd_grad_check, "finite-difference check of the loss gradient",
        needs_config=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return 0 if exc.code in (0, None) else int(exc.code)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if getattr(args, "config", None) is not None and not os.path.exists(args.config):
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        print(f"run `fspll {args.command} --help` for the config key list", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
