"""Paired benchmark harness: ablation variants, multi-round evaluation,
sensitivity sweeps, CSV/JSON report emission.

All methods of a grid cell are scored on the identical per-round episode
stream (one content hash per round is kept for auditing). Checkpoints are
trained once per distinct training signature and shared; "plus" variants
meta-train on clean labels, everything else meta-trains under the same
corruption as the cell it is evaluated in.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import NetworkParams
from .episodes import CorruptionSpec, World, corrupt, episode_hash, sample_episode, world_to_manifest
from .pll_core import RectifyConfig
from .trainer import TrainConfig, meta_test, meta_train

METHODS = ("fspll", "fspll-nm", "pn", "fspll-plus", "pn-plus")

SWEEP_AXES = ("lambda", "k")


@dataclass(frozen=True)
class MethodVariant:
    """One configured pipeline: how to rectify during training and testing,
    and whether meta-training sees clean labels."""

    name: str
    train_rectify: RectifyConfig
    test_rectify: RectifyConfig
    clean_meta_train: bool


def method_variant(name: str, base: RectifyConfig | None = None) -> MethodVariant:
    """fspll: the full pipeline; fspll-nm: smoothing disabled (lam=0);
    pn: no rectification (0 iterations, prototypes from uniform candidate
    confidence); *-plus: same pipelines but meta-trained on clean labels."""
    base = base if base is not None else RectifyConfig()
    if name == "fspll":
        return MethodVariant(name, base, base, False)
    if name == "fspll-nm":
        cfg = replace(base, lam=0.0)
        return MethodVariant(name, cfg, cfg, False)
    if name == "pn":
        cfg = replace(base, iterations=0)
        return MethodVariant(name, cfg, cfg, False)
    if name == "fspll-plus":
        return MethodVariant(name, base, base, True)
    if name == "pn-plus":
        cfg = replace(base, iterations=0)
        return MethodVariant(name, cfg, cfg, True)
    raise ValueError(f"unknown method {name!r}; valid methods: {', '.join(METHODS)}")


@dataclass(frozen=True)
class Cell:
    """One evaluation setting of the grid, optionally tagged by a sweep value."""

    n_way: int
    k_shot: int
    r: int
    p: float
    axis: str | None = None
    axis_value: float | None = None

    def label(self) -> str:
        tag = f"N{self.n_way}-K{self.k_shot}-r{self.r}-p{self.p:g}"
        if self.axis is not None:
            tag += f"-{self.axis}{self.axis_value:g}"
        return tag


@dataclass
class BenchSpec:
    """Everything a benchmark run depends on. The train config's rectify and
    corruption fields are overridden per method/cell."""

    world: World
    train: TrainConfig
    train_classes: int
    n_way: list[int] = field(default_factory=lambda: [5, 10])
    k_shot: list[int] = field(default_factory=lambda: [5, 10])
    r: list[int] = field(default_factory=lambda: [0, 1, 2])
    p: float = 1.0
    rounds: int = 50
    methods: list[str] = field(default_factory=lambda: ["fspll", "fspll-nm", "pn"])
    k_query: int = 15
    eval_seed: int = 1
    base_rectify: RectifyConfig = field(default_factory=RectifyConfig)
    retrain_per_round: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        for m in self.methods:
            method_variant(m, self.base_rectify)  # validates the name
        held_out = self.world.classes - self.train_classes
        if held_out < max(self.n_way):
            raise ValueError(
                f"held-out pool ({held_out} classes) is smaller than N2={max(self.n_way)}")

    def signature(self) -> dict:
        """Canonical JSON-ready description; hashing it identifies the run."""
        doc = dataclasses.asdict(self)
        doc["world"] = world_to_manifest(self.world)
        return doc


@dataclass
class BenchResult:
    """Per (cell, method) accuracy lists plus the audit metadata."""

    cells: list[Cell]
    methods: list[str]
    accuracies: dict[tuple[str, str], list[float]]  # (cell label, method) -> per-round acc
    episode_hashes: dict[str, list[str]]            # cell label -> per-round hash
    meta: dict

    def mean(self, cell_label: str, method: str) -> float:
        return float(np.mean(self.accuracies[(cell_label, method)]))

    def std(self, cell_label: str, method: str) -> float:
        return float(np.std(self.accuracies[(cell_label, method)]))  # population std


def config_hash(signature: dict) -> str:
    blob = json.dumps(signature, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _train_for(spec: BenchSpec, variant: MethodVariant, r_cell: int,
               cache: dict, task_seed: int) -> NetworkParams:
    r_train = 0 if variant.clean_meta_train else r_cell
    corruption = CorruptionSpec(spec.p, r_train)
    key = (variant.train_rectify, corruption, task_seed)
    if key not in cache:
        cfg = replace(spec.train, rectify=variant.train_rectify, corruption=corruption,
                      train_classes=spec.train_classes, task_seed=task_seed)
        params, _ = meta_train(cfg, spec.world)
        cache[key] = params
    return cache[key]


def _stream_rng(spec: BenchSpec, cell: Cell, round_no: int) -> np.random.Generator:
    # The stream key deliberately excludes method and sweep axis so paired
    # comparisons consume identical episodes.
    return np.random.default_rng(
        [spec.eval_seed, cell.n_way, cell.k_shot, cell.r, round_no])


def _draw_round_episode(spec: BenchSpec, cell: Cell, round_no: int):
    rng = _stream_rng(spec, cell, round_no)
    held_out = np.arange(spec.train_classes, spec.world.classes)
    class_ids = rng.choice(held_out, size=cell.n_way, replace=False)
    episode = sample_episode(spec.world, class_ids, cell.k_shot, spec.k_query, rng)
    return corrupt(episode, CorruptionSpec(cell.p, cell.r), rng)


def _run_cells(spec: BenchSpec, cells: list[Cell],
               variants: dict[str, list[MethodVariant]]) -> BenchResult:
    """Evaluate every cell. `variants` maps each cell label to the method
    pipelines to score on that cell's shared episode stream."""
    accuracies: dict[tuple[str, str], list[float]] = {}
    hashes: dict[str, list[str]] = {}
    cache: dict = {}
    for cell in cells:
        label = cell.label()
        cell_variants = variants[label]
        hashes[label] = []
        for variant in cell_variants:
            accuracies[(label, variant.name)] = []
        for round_no in range(spec.rounds):
            task_seed = (spec.train.task_seed if not spec.retrain_per_round
                         else hash_seed(spec.train.task_seed, round_no))
            episode = _draw_round_episode(spec, cell, round_no)
            hashes[label].append(episode_hash(episode))
            for variant in cell_variants:
                params = _train_for(spec, variant, cell.r, cache, task_seed)
                result = meta_test(params, episode, variant.test_rectify)
                accuracies[(label, variant.name)].append(result.accuracy)
    meta = {
        "config_hash": config_hash(spec.signature()),
        "seeds": {"world": spec.world.seed, "init": spec.train.init_seed,
                  "task": spec.train.task_seed, "eval": spec.eval_seed},
        "std": "population",
        "methods": [v.name for v in next(iter(variants.values()))],
        "cells": [c.label() for c in cells],
        "episode_hashes": hashes,
    }
    return BenchResult(cells, meta["methods"], accuracies, hashes, meta)


def hash_seed(*parts: int) -> int:
    """Stable derived seed from integer components."""
    h = hashlib.sha256(",".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


def run_benchmark(spec: BenchSpec) -> BenchResult:
    """Train the required checkpoints and score every (cell, method) pair over
    paired episode rounds."""
    cells = [Cell(n, k, r, spec.p)
             for n in spec.n_way for k in spec.k_shot for r in spec.r]
    variants = {c.label(): [method_variant(m, spec.base_rectify) for m in spec.methods]
                for c in cells}
    return _run_cells(spec, cells, variants)


def sweep(spec: BenchSpec, axis: str, values: list[float],
          retrain: bool = False) -> BenchResult:
    """One paired benchmark per axis value, sharing episode streams.

    axis "lambda" varies the smoothing trade-off, axis "k" the neighbor count,
    both at meta-test time; with retrain=True a lambda sweep also retrains the
    checkpoint at each value (a k sweep never does: the training-side k is
    pinned to the training shot count minus one).
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValueError("sweep needs at least one axis value")
    base_cells = [Cell(n, k, r, spec.p)
                  for n in spec.n_way for k in spec.k_shot for r in spec.r]
    if axis == "k":
        for v in values:
            if int(v) != v or v < 1:
                raise ValueError(f"neighbor count must be a positive integer, got {v}")
            for cell in base_cells:
                n_s = cell.n_way * cell.k_shot
                if v >= n_s:
                    raise ValueError(
                        f"k={int(v)} must be < n_s={n_s} for cell {cell.label()}")

    cells: list[Cell] = []
    variants: dict[str, list[MethodVariant]] = {}
    for base_cell in base_cells:
        for v in values:
            cell = replace(base_cell, axis=axis, axis_value=float(v))
            cell_variants = []
            for m in spec.methods:
                var = method_variant(m, spec.base_rectify)
                if axis == "lambda":
                    test = replace(var.test_rectify, lam=float(v))
                    train = replace(var.train_rectify, lam=float(v)) if retrain \
                        else var.train_rectify
                else:
                    test = replace(var.test_rectify, k=int(v))
                    train = var.train_rectify
                cell_variants.append(replace(var, train_rectify=train, test_rectify=test))
            cells.append(cell)
            variants[cell.label()] = cell_variants
    return _run_cells(spec, cells, variants)


def write_report(result: BenchResult, out_dir) -> dict[str, str]:
    """Emit rounds.csv, summary.csv and meta.json into out_dir (created if
    missing). Emission is deterministic: same result, same bytes."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("rounds.csv", "summary.csv", "meta.json")}

    with open(paths["rounds.csv"], "w", encoding="utf-8") as fh:
        fh.write("cell,method,round,accuracy\n")
        for cell in result.cells:
            label = cell.label()
            for method in result.methods:
                for i, acc in enumerate(result.accuracies[(label, method)]):
                    fh.write(f"{label},{method},{i},{acc:.6f}\n")

    with open(paths["summary.csv"], "w", encoding="utf-8") as fh:
        fh.write("cell,method,mean,std\n")
        for cell in result.cells:
            label = cell.label()
            for method in result.methods:
                fh.write(f"{label},{method},"
                         f"{result.mean(label, method):.6f},{result.std(label, method):.6f}\n")

    with open(paths["meta.json"], "w", encoding="utf-8") as fh:
        json.dump(result.meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
