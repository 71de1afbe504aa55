"""Correlation-based feature clustering for the parallel IDS.

Two partitioning schemes are provided:

* ``distribution``: average-linkage agglomerative clustering on the
  distance ``1 - |rho|`` cut to at most K clusters; any singleton cluster
  is dissolved by moving its feature into the currently smallest other
  cluster (lowest index on ties).
* ``cut``: features are ordered by the leaf order of a single-linkage
  dendrogram on the same distance and split into K contiguous chunks whose
  sizes differ by at most one (larger chunks first).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, leaves_list, linkage
from scipy.spatial.distance import squareform

from .errors import ConfigurationError, DataError

METHODS = ("distribution", "cut")


@dataclass(frozen=True)
class FeatureClusters:
    clusters: tuple[tuple[int, ...], ...]
    method: str
    k_max: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown clustering method {self.method!r}")
        flat = [i for c in self.clusters for i in c]
        if len(flat) != len(set(flat)) or sorted(flat) != list(range(len(flat))):
            raise ConfigurationError("clusters must partition the feature columns 0..n-1")
        if any(len(c) == 0 for c in self.clusters):
            raise ConfigurationError("empty cluster")

    @property
    def n_features(self) -> int:
        return sum(len(c) for c in self.clusters)

    def __len__(self) -> int:
        return len(self.clusters)

    def to_dict(self) -> dict:
        return {"method": self.method, "k_max": self.k_max,
                "clusters": [list(c) for c in self.clusters]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureClusters":
        return cls(tuple(tuple(int(i) for i in c) for c in d["clusters"]),
                   d["method"], int(d["k_max"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureClusters":
        return cls.from_dict(json.loads(Path(path).read_text()))


def correlation_matrix(data) -> np.ndarray:
    """Pearson correlation of the columns; constant columns correlate 0 with others."""
    X = np.asarray(getattr(data, "X", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("correlation needs at least two samples")
    centered = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(centered ** 2, axis=0))
    constant = np.all(X == X[0], axis=0) | (norms == 0)
    norms[constant] = 1.0
    unit = centered / norms
    corr = unit.T @ unit
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def _condensed_distance(corr: np.ndarray) -> np.ndarray:
    corr = np.asarray(corr, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ConfigurationError("correlation matrix must be square")
    dist = np.clip(1.0 - np.abs(corr), 0.0, 2.0)
    dist = (dist + dist.T) / 2.0
    np.fill_diagonal(dist, 0.0)
    return squareform(dist, checks=False)


def _relabel(labels) -> list[list[int]]:
    """Group feature indices by label, clusters ordered by their first feature."""
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def cluster_distribution(corr, k: int) -> FeatureClusters:
    n = np.shape(corr)[0]
    if k < 2:
        raise ConfigurationError("K must be at least 2")
    if n < 4:
        raise ConfigurationError("need at least 4 features for clusters of two or more")
    tree = linkage(_condensed_distance(corr), method="average")
    groups = _relabel(fcluster(tree, t=k, criterion="maxclust"))
    while True:
        single = next((i for i, g in enumerate(groups) if len(g) == 1), None)
        if single is None:
            break
        feature = groups.pop(single)[0]
        target = min(range(len(groups)), key=lambda i: (len(groups[i]), i))
        groups[target].append(feature)
    clusters = tuple(tuple(sorted(g)) for g in groups)
    return FeatureClusters(clusters, "distribution", k)


def cluster_cut(corr, k: int) -> FeatureClusters:
    n = np.shape(corr)[0]
    if k < 2:
        raise ConfigurationError("K must be at least 2")
    if k > n:
        raise ConfigurationError(f"K={k} exceeds the feature count {n}")
    order = leaves_list(linkage(_condensed_distance(corr), method="single"))
    base, extra = divmod(n, k)
    clusters, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        clusters.append(tuple(sorted(int(j) for j in order[start:start + size])))
        start += size
    return FeatureClusters(tuple(clusters), "cut", k)


def cluster_features(corr, k: int, method: str = "distribution") -> FeatureClusters:
    if method == "distribution":
        return cluster_distribution(corr, k)
    if method == "cut":
        return cluster_cut(corr, k)
    raise ConfigurationError(f"unknown clustering method {method!r}")
