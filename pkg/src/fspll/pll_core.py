"""Partial-label disambiguation over embedded support samples.

Given embeddings Z (m x n_s), a binary candidate matrix Y (l x n_s) and a
confidence matrix Q (l x n_s, each column a distribution over its candidate
labels), the rectification loop alternates three closed-form steps:

  1. class prototypes as confidence-weighted means of the support embeddings,
  2. a candidate-restricted softmax of negative prototype distances,
  3. k-nearest-neighbor smoothing of the confidences, then renormalization.

Queries are classified by a softmax over (negative) distances to the final
prototypes. Every function here is pure; the differentiable counterparts used
during meta-training are the *_nodes builders at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor, sqdist, sqrt_eps

DISTANCE_KINDS = ("euclidean", "squared")


@dataclass(frozen=True)
class RectifyConfig:
    """Knobs of the rectification loop.

    k is the neighbor count for confidence smoothing; None means "derive from
    the episode as shots-per-class minus one" and must be resolved before the
    loop runs with lam > 0.
    """

    iterations: int = 10
    lam: float = 0.5
    k: int | None = None
    distance: str = "euclidean"

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.distance not in DISTANCE_KINDS:
            raise ValueError(f"distance must be one of {DISTANCE_KINDS}, got {self.distance!r}")


def validate_candidates(Y: np.ndarray) -> None:
    """Reject candidate matrices violating the binary/coverage invariants."""
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise ValueError(f"candidate matrix must be 2-D, got shape {Y.shape}")
    if not np.isin(Y, (0, 1)).all():
        raise ValueError("candidate matrix entries must be 0 or 1")
    empty_cols = np.flatnonzero(Y.sum(axis=0) == 0)
    if empty_cols.size:
        raise ValueError(f"sample {empty_cols[0]} has no candidate label")
    empty_rows = np.flatnonzero(Y.sum(axis=1) == 0)
    if empty_rows.size:
        raise ValueError(f"class {empty_rows[0]} is not a candidate of any sample")


def compute_prototypes(Z: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Confidence-weighted mean embeddings: row c of the result is
    sum_i Q_ci z_i / sum_i Q_ci. Z is m x n_s, Q is l x n_s; returns l x m."""
    Z = np.asarray(Z, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if Z.shape[1] != Q.shape[1]:
        raise ValueError(f"sample count mismatch: Z {Z.shape} vs Q {Q.shape}")
    row_sums = Q.sum(axis=1)
    bad = np.flatnonzero(row_sums <= 0)
    if bad.size:
        raise ValueError(f"class {bad[0]} has no confident support")
    return (Q / row_sums[:, None]) @ Z.T


def pairwise_distance(A: np.ndarray, B: np.ndarray, kind: str = "euclidean") -> np.ndarray:
    """Distances between columns of A (m x a) and B (m x b), an a x b matrix.

    Euclidean distances follow the same epsilon-shifted square root as the
    autodiff sqrt primitive, so both code paths agree to the last bit.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"pairwise_distance: dimension mismatch {A.shape} vs {B.shape}")
    if kind not in DISTANCE_KINDS:
        raise ValueError(f"distance must be one of {DISTANCE_KINDS}, got {kind!r}")
    d2 = sqdist(A, B)
    return sqrt_eps(d2) if kind == "euclidean" else d2


def update_confidence(D: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Softmax of negative distances, restricted to each sample's candidates.

    D is the l x n_s matrix of prototype-to-sample distances. Columns are
    shifted by their minimal candidate distance before exponentiation.
    """
    D = np.asarray(D, dtype=np.float64)
    Y = np.asarray(Y)
    if D.shape != Y.shape:
        raise ValueError(f"update_confidence: shape mismatch D {D.shape} vs Y {Y.shape}")
    if not np.isfinite(D).all():
        raise ValueError("update_confidence: distances must be finite")
    cand = Y > 0
    if not cand.any(axis=0).all():
        raise ValueError("a sample has no candidate label")
    shift = np.where(cand, D, np.inf).min(axis=0, keepdims=True)
    expd = np.where(cand, np.exp(shift - D), 0.0)
    return expd / expd.sum(axis=0, keepdims=True)


def knn_indices(Z: np.ndarray, k: int) -> np.ndarray:
    """Per-sample indices of the k nearest other samples, by Euclidean distance
    in embedding space, ties broken by ascending sample index. Returns n_s x k."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    d2 = sqdist(Z, Z)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smooth_confidence(Q: np.ndarray, Y: np.ndarray, neighbors: np.ndarray,
                      lam: float) -> np.ndarray:
    """Blend each sample's confidences with the mean of its neighbors', scaled
    by lam, over candidate labels only; renormalize columns to sum to 1.

    lam == 0 returns Q unchanged (no renormalization drift).
    """
    Q = np.asarray(Q, dtype=np.float64)
    neighbors = np.asarray(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[1] == 0:
        raise ValueError("smooth_confidence: neighbor lists are empty")
    if lam == 0:
        return Q.copy()
    k = neighbors.shape[1]
    pooled = Q[:, neighbors].sum(axis=2)
    smoothed = np.where(Y > 0, Q + (lam / k) * pooled, 0.0)
    totals = smoothed.sum(axis=0, keepdims=True)
    if (totals <= 0).any():
        raise ValueError("smooth_confidence: a column lost all confidence mass")
    return smoothed / totals


def rectify(Z: np.ndarray, Y: np.ndarray, cfg: RectifyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Run the full rectification loop from uniform candidate confidence.

    Q starts as Y with each column normalized to sum to 1; each iteration
    recomputes prototypes, applies the candidate softmax update, then the
    neighbor smoothing. The neighbor graph is built once (Z is fixed here).
    Returns (P, Q) with P recomputed from the final Q.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y)
    validate_candidates(Y)
    Q = Y / Y.sum(axis=0, keepdims=True)
    neighbors = None
    if cfg.iterations > 0 and cfg.lam > 0:
        if cfg.k is None:
            raise ValueError("rectify: cfg.k must be resolved before smoothing runs")
        neighbors = knn_indices(Z, cfg.k)
    for _ in range(cfg.iterations):
        P = compute_prototypes(Z, Q)
        D = pairwise_distance(P.T, Z, cfg.distance)
        Q = update_confidence(D, Y)
        if neighbors is not None:
            Q = smooth_confidence(Q, Y, neighbors, cfg.lam)
    return compute_prototypes(Z, Q), Q


def classify_proba(Z_q: np.ndarray, P: np.ndarray, kind: str = "euclidean") -> np.ndarray:
    """Posterior over classes per query: column-wise softmax of negative
    distances to the prototypes (max-shifted). Z_q is m x n_q, P is l x m."""
    Z_q = np.asarray(Z_q, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if P.shape[1] != Z_q.shape[0]:
        raise ValueError(f"classify_proba: embedding dim mismatch P {P.shape} vs Z_q {Z_q.shape}")
    scores = -pairwise_distance(P.T, Z_q, kind)
    scores -= scores.max(axis=0, keepdims=True)
    expd = np.exp(scores)
    return expd / expd.sum(axis=0, keepdims=True)


def query_loss(probs: np.ndarray) -> float:
    """Mean negative log of each column's largest posterior entry."""
    probs = np.asarray(probs, dtype=np.float64)
    if not np.isfinite(probs).all():
        raise ValueError("query_loss: posteriors must be finite")
    return float(-np.log(probs.max(axis=0)).mean())


def predict(probs: np.ndarray) -> np.ndarray:
    """Label index of each column's largest posterior; ties go to the lowest index."""
    return np.asarray(probs).argmax(axis=0)


# -- differentiable builders (meta-training loss path) ------------------------

def prototype_nodes(graph: Graph, z: Tensor, Q: np.ndarray) -> Tensor:
    """Prototypes as graph nodes, columns = classes (m x l). Q is a constant:
    gradients flow into the support embeddings only."""
    Q = np.asarray(Q, dtype=np.float64)
    row_sums = Q.sum(axis=1)
    if (row_sums <= 0).any():
        raise ValueError("prototype_nodes: a class has no confident support")
    weights = (Q / row_sums[:, None]).T
    return graph.matmul(z, graph.leaf(weights))


def distance_nodes(graph: Graph, a: Tensor, b: Tensor, kind: str = "euclidean") -> Tensor:
    if kind not in DISTANCE_KINDS:
        raise ValueError(f"distance must be one of {DISTANCE_KINDS}, got {kind!r}")
    d2 = graph.pairwise_sqdist(a, b)
    return graph.sqrt(d2) if kind == "euclidean" else d2


def posterior_nodes(graph: Graph, distances: Tensor) -> Tensor:
    """Column-wise softmax of negative distances, via exp(x - logsumexp(x))."""
    neg = graph.scale(distances, -1.0)
    return graph.exp(graph.sub_row(neg, graph.logsumexp_cols(neg)))


def loss_nodes(graph: Graph, probs: Tensor) -> Tensor:
    """Mean negative log of per-column maxima, as a 1x1 node."""
    n_q = probs.shape[1]
    return graph.scale(graph.sum_all(graph.log(graph.col_max(probs))), -1.0 / n_q)


def supervised_loss_nodes(graph: Graph, probs: Tensor, truth: np.ndarray) -> Tensor:
    """Cross-entropy against known query labels (ablation-only training loss):
    mean negative log of each column's true-label entry."""
    truth = np.asarray(truth, dtype=int)
    l, n_q = probs.shape
    if truth.shape != (n_q,):
        raise ValueError(f"truth must have one label per query, got {truth.shape}")
    mask = np.zeros((l, n_q))
    mask[truth, np.arange(n_q)] = 1.0
    picked = graph.col_sum(graph.mul(probs, graph.leaf(mask)))
    return graph.scale(graph.sum_all(graph.log(picked)), -1.0 / n_q)
