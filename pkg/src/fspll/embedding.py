"""Feed-forward embedding network: an MLP mapping feature vectors to the
metric space in which prototypes live. Relu on hidden layers, identity output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Tensor


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of the embedding network (input -> hidden... -> output)."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    output_dim: int = 64

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        for d in dims:
            if int(d) < 1:
                raise ValueError(f"network dimensions must be positive, got {dims}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    def layer_dims(self) -> list[tuple[int, int]]:
        """(out_dim, in_dim) per affine layer."""
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class NetworkParams:
    """Per-layer weight matrices (out x in) and bias column vectors (out x 1)."""

    spec: NetworkSpec
    seed: int
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, self.seed,
                             [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])


def init_network(spec: NetworkSpec, seed: int) -> NetworkParams:
    """He-initialized weights (std sqrt(2/in_dim)), zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out_dim, in_dim in spec.layer_dims():
        weights.append(rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim)))
        biases.append(np.zeros((out_dim, 1)))
    return NetworkParams(spec, seed, weights, biases)


def embed(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """Map a d x n feature matrix through the network; returns m x n embeddings."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != params.spec.input_dim:
        raise ValueError(
            f"embed: expected {params.spec.input_dim} feature rows, got shape {X.shape}")
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = w @ h + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def param_leaves(graph: Graph, params: NetworkParams) -> list[tuple[Tensor, Tensor]]:
    """Bind the network parameters as graph leaves, one (W, b) pair per layer."""
    return [(graph.leaf(w), graph.leaf(b))
            for w, b in zip(params.weights, params.biases)]


def embed_nodes(graph: Graph, layers: list[tuple[Tensor, Tensor]], x: Tensor) -> Tensor:
    """Differentiable counterpart of embed(), built from graph leaves."""
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = graph.add_bias(graph.matmul(w, h), b)
        if i < last:
            h = graph.relu(h)
    return h


def save_checkpoint(params: NetworkParams, path) -> None:
    """Write spec, seed and per-layer arrays as JSON (row-major, repr floats,
    which round-trip float64 bit-exactly)."""
    doc = {
        "input_dim": params.spec.input_dim,
        "hidden_dims": list(params.spec.hidden_dims),
        "output_dim": params.spec.output_dim,
        "seed": params.seed,
        "layers": [
            {"weights": w.tolist(), "bias": b[:, 0].tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> NetworkParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    spec = NetworkSpec(doc["input_dim"], tuple(doc["hidden_dims"]), doc["output_dim"])
    params = NetworkParams(spec, int(doc["seed"]))
    for (out_dim, in_dim), layer in zip(spec.layer_dims(), doc["layers"]):
        w = np.asarray(layer["weights"], dtype=np.float64)
        b = np.asarray(layer["bias"], dtype=np.float64).reshape(-1, 1)
        if w.shape != (out_dim, in_dim) or b.shape != (out_dim, 1):
            raise ValueError(
                f"checkpoint layer shape {w.shape}/{b.shape} does not match "
                f"spec layer ({out_dim}, {in_dim})")
        params.weights.append(w)
        params.biases.append(b)
    if len(params.weights) != len(spec.layer_dims()):
        raise ValueError("checkpoint layer count does not match spec")
    return params
