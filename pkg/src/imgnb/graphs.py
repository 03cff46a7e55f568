"""Complete user-correlation graphs with RBF edge weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["UserGraph", "rbf_weight", "build_graph", "propagate",
           "propagation_matrix", "normalize_adjacency", "write_graph_csv"]


def rbf_weight(a: float, b: float, bandwidth: float) -> float:
    """Gaussian kernel ``exp(-(a - b)^2 / (2 bandwidth^2))``."""
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return float(np.exp(-(a - b) ** 2 / (2.0 * bandwidth ** 2)))


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with D the row sums of A (diagonal included)."""
    deg = A.sum(axis=-1)
    if np.any(deg <= 0):
        raise ValueError("adjacency has a node with non-positive degree")
    inv = 1.0 / np.sqrt(deg)
    return inv[..., :, None] * A * inv[..., None, :]


@dataclass(frozen=True)
class UserGraph:
    """Symmetric RBF weight matrix over ``m_users`` and its normalized form."""

    weights: np.ndarray
    normalized: np.ndarray = field(repr=False)

    @property
    def m_users(self) -> int:
        return self.weights.shape[0]


def build_graph(scores, bandwidth: float) -> UserGraph:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1:
        raise ValueError("scores must be a vector over users")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    bad = np.flatnonzero(~np.isfinite(scores))
    if bad.size:
        raise ValueError(f"non-finite score for user {int(bad[0])}")
    diff = scores[:, None] - scores[None, :]
    W = np.exp(-diff ** 2 / (2.0 * bandwidth ** 2))
    W.setflags(write=False)
    S = normalize_adjacency(W)
    S.setflags(write=False)
    return UserGraph(W, S)


def propagate(g: UserGraph, gamma: int, features) -> np.ndarray:
    """``S^gamma @ features`` by repeated multiplication (no activation)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    out = np.array(features, dtype=float)
    if out.shape[0] != g.m_users:
        raise ValueError(
            f"features have {out.shape[0]} rows, graph has {g.m_users} users")
    for _ in range(gamma):
        out = g.normalized @ out
    return out


def propagation_matrix(g: UserGraph, gamma: int) -> np.ndarray:
    """The dense operator ``S^gamma``."""
    return propagate(g, gamma, np.eye(g.m_users))


def batch_operators(scores, bandwidth: float, gamma: int) -> np.ndarray:
    """``S^gamma`` for a stack of score vectors, shape ``(n, m, m)``.

    Same arithmetic as :func:`build_graph` followed by
    :func:`propagation_matrix`, done for all rows of ``scores`` at once.
    """
    scores = np.asarray(scores, dtype=float)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite user score")
    diff = scores[..., :, None] - scores[..., None, :]
    S = normalize_adjacency(np.exp(-diff ** 2 / (2.0 * bandwidth ** 2)))
    out = np.broadcast_to(np.eye(scores.shape[-1]), S.shape).copy()
    for _ in range(gamma):
        out = S @ out
    return out


def write_graph_csv(g: UserGraph, path) -> None:
    """Debug dump: first line ``m``, then one comma-separated row per user."""
    with open(path, "w") as fh:
        fh.write(f"{g.m_users}\n")
        for row in g.weights:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
