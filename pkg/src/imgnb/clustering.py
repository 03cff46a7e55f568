"""k-means reduction of raw users to macro-nodes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = ["UserClusterer", "ClusterMap", "cluster_users", "read_cluster_map",
           "write_cluster_map"]


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


class UserClusterer(ClusterMixin, TransformerMixin, BaseEstimator):
    """Lloyd's k-means with k-means++ seeding.

    Iterates until assignments stop changing or ``max_iter`` is reached.
    An emptied cluster is refilled with the point of the largest cluster
    that lies farthest from that cluster's centroid.

    Attributes
    ----------
    labels_, cluster_centers_ : ndarray
    inertia_path_ : list of float
        Sum of squared distances after every assignment step.
    """

    def __init__(self, n_clusters=50, max_iter=100, random_state=None):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def _init_centers(self, X, rng):
        k = self.n_clusters
        centers = [X[rng.integers(len(X))]]
        d2 = _sq_dists(X, np.array(centers))[:, 0]
        for _ in range(1, k):
            total = d2.sum()
            if total <= 0:
                idx = int(rng.integers(len(X)))
            else:
                idx = int(rng.choice(len(X), p=d2 / total))
            centers.append(X[idx])
            d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
        return np.array(centers)

    def _repair(self, X, labels, centers):
        k = self.n_clusters
        for c in range(k):
            if np.any(labels == c):
                continue
            sizes = np.bincount(labels, minlength=k)
            big = int(np.argmax(sizes))
            members = np.flatnonzero(labels == big)
            far = members[np.argmax(_sq_dists(X[members], centers[big][None, :])[:, 0])]
            labels[far] = c
            centers[c] = X[far]
        return labels, centers

    def fit(self, X, y=None):
        X = check_array(X)
        k = self.n_clusters
        if k < 1:
            raise ValueError("n_clusters must be >= 1")
        if len(np.unique(X, axis=0)) < k:
            raise ValueError(f"fewer distinct vectors than n_clusters={k}")
        rng = np.random.default_rng(self.random_state)
        centers = self._init_centers(X, rng)
        labels = None
        path = []
        for it in range(self.max_iter):
            new = np.argmin(_sq_dists(X, centers), axis=1)
            new, centers = self._repair(X, new, centers.copy())
            path.append(float(_sq_dists(X, centers)[np.arange(len(X)), new].sum()))
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            centers = np.stack([X[labels == c].mean(axis=0) for c in range(k)])
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.inertia_path_ = path
        self.inertia_ = float(_sq_dists(X, centers)[np.arange(len(X)), labels].sum())
        self.n_iter_ = len(path)
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.argmin(_sq_dists(check_array(X), self.cluster_centers_), axis=1)

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(_sq_dists(check_array(X), self.cluster_centers_))


@dataclass
class ClusterMap:
    """Assignment of raw user ids to macro-nodes ``0 .. m_prime - 1``."""

    raw_ids: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray = None

    def __post_init__(self):
        self.raw_ids = np.asarray(self.raw_ids, dtype=int)
        self.labels = np.asarray(self.labels, dtype=int)
        self._index = dict(zip(self.raw_ids.tolist(), self.labels.tolist()))

    @property
    def m_prime(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.m_prime)

    @classmethod
    def identity(cls, raw_ids):
        raw_ids = np.asarray(raw_ids, dtype=int)
        return cls(raw_ids, np.arange(raw_ids.size))

    def __getitem__(self, raw_id) -> int:
        return self._index[int(raw_id)]

    def macro(self, raw_users) -> set:
        """Macro-nodes touched by a set of raw users."""
        return {self._index[u] for u in raw_users}

    def counts(self, raw_users) -> np.ndarray:
        """Number of members of each macro-node present in ``raw_users``."""
        out = np.zeros(self.m_prime)
        for u in raw_users:
            out[self._index[u]] += 1
        return out


def cluster_users(raw_ids, vectors, m_prime, rng=None, max_iter=100) -> ClusterMap:
    """k-means over per-user activity vectors."""
    vectors = np.asarray(vectors, dtype=float)
    if not 1 <= m_prime <= len(vectors):
        raise ValueError(f"m_prime={m_prime} must lie in [1, {len(vectors)}]")
    km = UserClusterer(m_prime, max_iter=max_iter, random_state=rng).fit(vectors)
    return ClusterMap(raw_ids, km.labels_, km.cluster_centers_)


def write_cluster_map(cmap: ClusterMap, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, c in zip(cmap.raw_ids.tolist(), cmap.labels.tolist()):
            fh.write(f"{u}\t{c}\n")


def read_cluster_map(path) -> ClusterMap:
    ids, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                u, c = line.split("\t")
                ids.append(int(u))
                labels.append(int(c))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected '<raw_uid>\\t<cluster_id>'") from None
    if not ids:
        raise ValueError(f"{path}: empty cluster map")
    cmap = ClusterMap(ids, labels)
    if np.any(cmap.sizes == 0) or cmap.labels.min() < 0:
        raise ValueError(f"{path}: cluster ids must cover 0..m'-1 without gaps")
    return cmap
