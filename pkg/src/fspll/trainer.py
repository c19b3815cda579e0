"""Episodic meta-training of the embedding network, and meta-test adaptation.

Each epoch samples T fresh tasks. Per task: embed the support set, run the
rectification loop to get label confidences (held constant for gradients),
then build the differentiable loss -- support embeddings feed the prototypes,
query embeddings feed the posterior, the loss is the mean negative log of the
top posterior per query. One plain SGD step per epoch on the task-averaged
gradient (per-task stepping available by flag); the learning rate halves on a
fixed epoch period.

Meta-test freezes the network: embed, rectify, classify by nearest rectified
prototype via the posterior argmax.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph, Tensor
from .embedding import NetworkParams, NetworkSpec, embed, embed_nodes, init_network, param_leaves
from .episodes import CorruptionSpec, Episode, World, corrupt, sample_episode
from .pll_core import (RectifyConfig, classify_proba, distance_nodes, loss_nodes,
                       posterior_nodes, predict, prototype_nodes, rectify,
                       supervised_loss_nodes)


@dataclass(frozen=True)
class TrainConfig:
    """Meta-training hyperparameters. n_way/k_support/k_query shape the training
    tasks; rectify.k left unset resolves to k_support - 1."""

    network: NetworkSpec
    max_epoch: int = 200
    tasks_per_epoch: int = 100
    n_way: int = 30
    k_support: int = 5
    k_query: int = 15
    rectify: RectifyConfig = field(default_factory=RectifyConfig)
    corruption: CorruptionSpec = field(default_factory=lambda: CorruptionSpec(1.0, 1))
    lr0: float = 0.001
    lr_half_period: int = 20
    train_classes: int | None = None  # use the first N world classes; None = all
    init_seed: int = 0
    task_seed: int = 0
    step_per_task: bool = False
    fixed_tasks: bool = False
    supervised_loss: bool = False  # ablation only: query loss uses ground truth

    def __post_init__(self):
        if self.max_epoch < 0:
            raise ValueError("max_epoch must be >= 0")
        for name in ("tasks_per_epoch", "n_way", "k_support", "k_query", "lr_half_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")

    def resolved_rectify(self) -> RectifyConfig:
        # k is only meaningful when smoothing runs; resolving it lazily keeps
        # e.g. 1-shot configs with iterations=0 valid.
        cfg = self.rectify
        if cfg.k is None and cfg.iterations > 0 and cfg.lam > 0:
            return replace(cfg, k=self.k_support - 1)
        return cfg


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    entries: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str | None = None

    def losses(self) -> list[float]:
        return [e.loss for e in self.entries]


@dataclass
class TestResult:
    predictions: np.ndarray
    accuracy: float
    prototypes: np.ndarray
    confidence: np.ndarray


def lr_at(epoch: int, lr0: float, period: int) -> float:
    """Learning rate at a (0-based) epoch: lr0 halved once per `period` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * 2.0 ** (-(epoch // period))


def episode_loss_graph(params: NetworkParams, episode: Episode, Q: np.ndarray,
                       distance: str, supervised: bool = False) -> tuple[Graph, Tensor, list]:
    """Build the per-task loss graph. Q is the rectified confidence matrix,
    entering as a constant; gradients reach the parameters through both the
    support embeddings (prototypes) and the query embeddings (posterior).

    supervised=True scores queries against their hidden ground truth instead
    of the max posterior (ablation mode)."""
    g = Graph()
    layers = param_leaves(g, params)
    z_support = embed_nodes(g, layers, g.leaf(episode.support))
    protos = prototype_nodes(g, z_support, Q)
    z_query = embed_nodes(g, layers, g.leaf(episode.queries))
    distances = distance_nodes(g, protos, z_query, distance)
    probs = posterior_nodes(g, distances)
    if supervised:
        sink = supervised_loss_nodes(g, probs, episode.query_truth)
    else:
        sink = loss_nodes(g, probs)
    return g, sink, layers


def _sample_task(config: TrainConfig, world: World, pool: np.ndarray,
                 epoch: int, task: int) -> Episode:
    rng = np.random.default_rng([config.task_seed, epoch, task])
    class_ids = rng.choice(pool, size=config.n_way, replace=False)
    episode = sample_episode(world, class_ids, config.k_support, config.k_query, rng)
    return corrupt(episode, config.corruption, rng)


def meta_train(config: TrainConfig, world: World) -> tuple[NetworkParams, TrainLog]:
    """Train the embedding network and return (final params, per-epoch log)."""
    if world.dim != config.network.input_dim:
        raise ValueError(
            f"world dim {world.dim} does not match network input {config.network.input_dim}")
    n_pool = config.train_classes if config.train_classes is not None else world.classes
    if not config.n_way <= n_pool <= world.classes:
        raise ValueError(
            f"need n_way={config.n_way} <= train pool={n_pool} <= world classes={world.classes}")
    pool = np.arange(n_pool)
    rect = config.resolved_rectify()

    params = init_network(config.network, config.init_seed)
    log = TrainLog()
    for epoch in range(config.max_epoch):
        t0 = time.perf_counter()
        lr = lr_at(epoch, config.lr0, config.lr_half_period)
        grad_w = [np.zeros_like(w) for w in params.weights]
        grad_b = [np.zeros_like(b) for b in params.biases]
        loss_sum = 0.0
        for task in range(config.tasks_per_epoch):
            sample_epoch = 0 if config.fixed_tasks else epoch
            episode = _sample_task(config, world, pool, sample_epoch, task)
            z_support = embed(params, episode.support)
            _, Q = rectify(z_support, episode.candidates, rect)
            graph, sink, layers = episode_loss_graph(params, episode, Q, rect.distance,
                                                     supervised=config.supervised_loss)
            loss = sink.values[0, 0]
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, task {task}")
            graph.backward(sink)
            loss_sum += loss
            if config.step_per_task:
                for i, (w_node, b_node) in enumerate(layers):
                    params.weights[i] = params.weights[i] - lr * w_node.grad
                    params.biases[i] = params.biases[i] - lr * b_node.grad
            else:
                for i, (w_node, b_node) in enumerate(layers):
                    grad_w[i] += w_node.grad
                    grad_b[i] += b_node.grad
        if not config.step_per_task:
            scale = lr / config.tasks_per_epoch
            for i in range(len(params.weights)):
                params.weights[i] = params.weights[i] - scale * grad_w[i]
                params.biases[i] = params.biases[i] - scale * grad_b[i]
        log.entries.append(EpochStats(epoch, loss_sum / config.tasks_per_epoch, lr,
                                      time.perf_counter() - t0))
    return params, log


def meta_test(params: NetworkParams, episode: Episode,
              rectify_cfg: RectifyConfig) -> TestResult:
    """Adapt to one episode with the network frozen and score the queries.

    rectify_cfg.k left unset resolves to the episode's per-class shot count
    minus one.
    """
    if episode.support.shape[0] != params.spec.input_dim:
        raise ValueError(
            f"episode dim {episode.support.shape[0]} does not match "
            f"network input {params.spec.input_dim}")
    cfg = rectify_cfg
    if cfg.k is None and cfg.iterations > 0 and cfg.lam > 0:
        shots = episode.n_support // episode.n_classes
        cfg = replace(cfg, k=shots - 1)
    z_support = embed(params, episode.support)
    protos, confidence = rectify(z_support, episode.candidates, cfg)
    probs = classify_proba(embed(params, episode.queries), protos, cfg.distance)
    preds = predict(probs)
    accuracy = float((preds == episode.query_truth).mean())
    return TestResult(preds, accuracy, protos, confidence)
