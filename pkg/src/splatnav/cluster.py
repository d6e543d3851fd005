"""Trajectory decomposition into submaps: agglomerative clustering plus overlap augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

LINKAGES = ("average", "single", "complete")


@dataclass(frozen=True)
class ClusteringConfig:
    num_clusters: int = 15
    overlap_delta: float = 3.0
    linkage: str = "average"

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.overlap_delta < 0:
            raise ValueError("overlap_delta must be >= 0")
        if self.linkage not in LINKAGES:
            raise ValueError(f"linkage must be one of {LINKAGES}")


def cluster_trajectory(positions, cfg: ClusteringConfig) -> np.ndarray:
    """Bottom-up merge of camera positions until ``cfg.num_clusters`` remain.

    Clusters are keyed by their lowest member index; among equally close
    pairs the lexicographically smallest key pair merges first. Returned
    labels are numbered in order of each cluster's earliest frame.
    """
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(P)
    if n == 0:
        raise ValueError("no positions to cluster")
    C = cfg.num_clusters
    if C > n:
        raise ValueError(f"cannot form {C} clusters from {n} positions")

    D = cdist(P, P)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    rep = np.arange(n)  # rep[i] = key of the cluster point i belongs to
    active = np.ones(n, dtype=bool)
    for _ in range(n - C):
        flat = int(np.argmin(D))  # first occurrence -> smallest (row, col)
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        di, dj = D[i], D[j]
        if cfg.linkage == "average":
            new = (size[i] * di + size[j] * dj) / (size[i] + size[j])
        elif cfg.linkage == "single":
            new = np.minimum(di, dj)
        else:
            new = np.maximum(di, dj)
        new[~active] = np.inf
        new[i] = np.inf
        new[j] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] += size[j]
        active[j] = False
        rep[rep == j] = i

    keys = np.flatnonzero(active)  # ascending = order of earliest member
    lookup = np.full(n, -1)
    lookup[keys] = np.arange(len(keys))
    return lookup[rep]


def augment_overlap(positions, labels, delta: float) -> list[np.ndarray]:
    """Per-submap frame index sets: core members plus every frame within ``delta`` of a member."""
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels)
    out = []
    for c in range(int(labels.max()) + 1):
        core = np.flatnonzero(labels == c)
        dmin = cdist(P, P[core]).min(axis=1)
        out.append(np.flatnonzero((labels == c) | (dmin <= delta)))
    return out
