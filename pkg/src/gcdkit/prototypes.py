"""Category prototypes: estimation, bipartite matching, and calibration.

A prototype is the mean feature vector of a category (labeled split) or a
cluster (unlabeled split). Labeled prototypes act as anchors: each unlabeled
prototype is matched to at most one labeled prototype by minimum-cost
bipartite assignment, and every unlabeled prototype is calibrated toward a
softmax-weighted blend of its nearest labeled prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .assignment import solve_assignment
from .clustering import Clustering
from .data import Dataset, Instance, Split, load_feature_file, save_feature_file


class PrototypeKind(Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    CALIBRATED = "calibrated"
    GROUND_TRUTH = "ground_truth"


@dataclass(frozen=True)
class PrototypeSet:
    kind: PrototypeKind
    vectors: np.ndarray  # (K, D)
    ids: np.ndarray      # (K,) category or cluster ids aligned with vectors

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        ids = np.asarray(self.ids, dtype=int)
        if vectors.ndim != 2 or ids.ndim != 1 or vectors.shape[0] != ids.shape[0]:
            raise ValueError("vectors must be (K, D) with ids of length K")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("prototype vectors must be finite")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class MatchMap:
    """Injective map from labeled category ids to cluster ids."""

    pairs: tuple[tuple[int, int], ...]  # (labeled category id, cluster id)
    total_cost: float

    def cluster_for_category(self) -> dict[int, int]:
        return {cat: cl for cat, cl in self.pairs}

    def category_for_cluster(self) -> dict[int, int]:
        return {cl: cat for cat, cl in self.pairs}


@dataclass(frozen=True)
class TransferSpec:
    """Per-cluster transfer sets and weights used by calibration."""

    k: int
    alpha: float
    transfer_sets: tuple[np.ndarray, ...]  # labeled row indices, one array per cluster
    weights: tuple[np.ndarray, ...]        # softmax weights aligned with transfer_sets


def labeled_prototypes(ds: Dataset, features: np.ndarray) -> PrototypeSet:
    """Mean feature of each known category over the labeled split.

    `features` is an (n, d) array aligned with ds.instances.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != len(ds.instances):
        raise ValueError("features must align with ds.instances")
    cats = sorted(ds.known_categories)
    if not cats:
        raise ValueError("dataset has no labeled instances")
    vectors = np.empty((len(cats), features.shape[1]))
    for row, cat in enumerate(cats):
        idx = [
            k
            for k, inst in enumerate(ds.instances)
            if inst.split is Split.LABELED and inst.gt_label == cat
        ]
        vectors[row] = features[idx].mean(axis=0)
    return PrototypeSet(PrototypeKind.LABELED, vectors, np.array(cats))


def unlabeled_prototypes(cl: Clustering) -> PrototypeSet:
    """Cluster centers reused as the unlabeled prototypes."""
    return PrototypeSet(
        PrototypeKind.UNLABELED, cl.centers.copy(), np.arange(cl.n_clusters)
    )


def match_prototypes(pl: PrototypeSet, pu: PrototypeSet) -> MatchMap:
    """Match labeled prototypes to clusters minimizing total Euclidean distance."""
    if len(pl) > len(pu):
        raise ValueError(
            f"cannot match {len(pl)} labeled prototypes into {len(pu)} clusters"
        )
    diff = pl.vectors[:, None, :] - pu.vectors[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    col_for_row, total = solve_assignment(dist)
    pairs = tuple(
        (int(pl.ids[i]), int(pu.ids[col_for_row[i]])) for i in range(len(pl))
    )
    return MatchMap(pairs=pairs, total_cost=total)


def calibrate(
    pu: PrototypeSet, pl: PrototypeSet, k: int, alpha: float
) -> tuple[PrototypeSet, TransferSpec]:
    """Pull each unlabeled prototype toward its k nearest labeled prototypes.

    For cluster i with distances d_ij to the labeled prototypes: the transfer
    set is the k smallest d_ij (ties break toward the lower labeled id), the
    weights are softmax(-d_ij / sqrt(D)) over that set, and the calibrated
    prototype is alpha * mu_u_i + (1 - alpha) * sum_j w_ij * mu_l_j.
    """
    if not 1 <= k <= len(pl):
        raise ValueError(f"k must be in [1, {len(pl)}], got {k}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    dim = pu.dim
    diff = pu.vectors[:, None, :] - pl.vectors[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))  # (K', M)

    calibrated = np.empty_like(pu.vectors)
    transfer_sets = []
    weights_out = []
    for i in range(len(pu)):
        order = np.argsort(dist[i], kind="stable")  # stable: ties keep lower id first
        sel = order[:k]
        scores = -dist[i, sel] / np.sqrt(dim)
        scores = scores - scores.max()
        w = np.exp(scores)
        w = w / w.sum()
        blend = w @ pl.vectors[sel]
        calibrated[i] = alpha * pu.vectors[i] + (1.0 - alpha) * blend
        transfer_sets.append(sel.copy())
        weights_out.append(w)
    pc = PrototypeSet(PrototypeKind.CALIBRATED, calibrated, pu.ids.copy())
    spec = TransferSpec(
        k=k, alpha=alpha, transfer_sets=tuple(transfer_sets), weights=tuple(weights_out)
    )
    return pc, spec


def save_prototype_file(protos: PrototypeSet, path: str | Path) -> None:
    """Persist prototypes in the feature-file format (one row per category)."""
    instances = tuple(
        Instance(
            id=f"center-{int(cat)}",
            embedding=vec,
            split=Split.LABELED,
            gt_label=int(cat),
        )
        for cat, vec in zip(protos.ids, protos.vectors)
    )
    save_feature_file(Dataset(dim=protos.dim, instances=instances), path)


def load_prototype_file(path: str | Path) -> PrototypeSet:
    ds = load_feature_file(path)
    ids = np.array([inst.gt_label for inst in ds.instances])
    vectors = ds.embedding_matrix()
    return PrototypeSet(PrototypeKind.GROUND_TRUTH, vectors, ids)
