"""Clustering metrics: Hungarian-matched accuracy, H-score, diagnostics.

All accuracies are fractions in [0, 1]. Known/novel accuracies come from one
global cluster-to-category mapping computed on the full prediction set and
then restricted per subset (a per-subset remapping variant exists for
comparison but inflates scores).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_assignment
from .prototypes import MatchMap, PrototypeSet


@dataclass
class MetricsReport:
    h_score: float
    known_acc: float
    novel_acc: float
    overall_acc: float
    pseudo_label_acc: float = math.nan
    proto_dist_before: float = math.nan
    proto_dist_after: float = math.nan
    mapping: dict[int, int] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "h_score": self.h_score,
            "known_acc": self.known_acc,
            "novel_acc": self.novel_acc,
            "overall_acc": self.overall_acc,
            "pseudo_label_acc": self.pseudo_label_acc,
            "proto_dist_before": self.proto_dist_before,
            "proto_dist_after": self.proto_dist_after,
            "mapping": {str(k): v for k, v in sorted(self.mapping.items())},
            "flags": list(self.flags),
        }


def h_score(known_acc: float, novel_acc: float) -> float:
    """Harmonic mean of the two subset accuracies; 0 unless both positive."""
    if known_acc > 0 and novel_acc > 0:
        return 2.0 * known_acc * novel_acc / (known_acc + novel_acc)
    return 0.0


def hungarian_accuracy(pred: np.ndarray, gt: np.ndarray) -> tuple[float, dict[int, int]]:
    """Best injective cluster-to-category relabeling accuracy.

    Builds the cluster x category contingency table and maximizes the matched
    count with the assignment solver. Returns (accuracy, mapping) where
    mapping sends matched cluster ids to category ids.
    """
    pred = np.asarray(pred, dtype=int)
    gt = np.asarray(gt, dtype=int)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValueError("pred and gt must be 1-d arrays of equal length")
    if pred.size == 0:
        raise ValueError("empty input")
    pred_ids = np.unique(pred)
    gt_ids = np.unique(gt)
    pred_index = {int(p): i for i, p in enumerate(pred_ids)}
    gt_index = {int(g): i for i, g in enumerate(gt_ids)}
    table = np.zeros((pred_ids.size, gt_ids.size), dtype=np.float64)
    np.add.at(table, ([pred_index[int(p)] for p in pred], [gt_index[int(g)] for g in gt]), 1.0)

    # maximize matches == minimize negated counts; solver wants rows <= cols
    if table.shape[0] <= table.shape[1]:
        cols, _ = solve_assignment(-table)
        pairs = [(r, int(cols[r])) for r in range(table.shape[0])]
    else:
        rows, _ = solve_assignment(-table.T)
        pairs = [(int(rows[c]), c) for c in range(table.shape[1])]
    matched = sum(table[r, c] for r, c in pairs)
    mapping = {int(pred_ids[r]): int(gt_ids[c]) for r, c in pairs}
    return float(matched / pred.size), mapping


def split_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    known: set[int] | frozenset[int],
    per_subset_mapping: bool = False,
) -> MetricsReport:
    """Overall, known-subset, and novel-subset accuracy plus their H-score."""
    pred = np.asarray(pred, dtype=int)
    gt = np.asarray(gt, dtype=int)
    overall, mapping = hungarian_accuracy(pred, gt)
    known_mask = np.array([int(g) in known for g in gt], dtype=bool)
    flags = []

    def subset_acc(mask: np.ndarray) -> float:
        if not mask.any():
            return math.nan
        if per_subset_mapping:
            acc, _ = hungarian_accuracy(pred[mask], gt[mask])
            return acc
        mapped = np.array([mapping.get(int(p), -1) for p in pred[mask]])
        return float((mapped == gt[mask]).mean())

    known_acc = subset_acc(known_mask)
    novel_acc = subset_acc(~known_mask)
    if math.isnan(known_acc):
        flags.append("known_subset_empty")
    if math.isnan(novel_acc):
        flags.append("novel_subset_empty")
    hs = 0.0
    if not (math.isnan(known_acc) or math.isnan(novel_acc)):
        hs = h_score(known_acc, novel_acc)
    return MetricsReport(
        h_score=hs,
        known_acc=known_acc,
        novel_acc=novel_acc,
        overall_acc=overall,
        mapping=mapping,
        flags=tuple(flags),
    )


def pseudo_label_accuracy(assignment: np.ndarray, gt: np.ndarray) -> float:
    """Hungarian-matched accuracy of cluster ids against ground truth."""
    acc, _ = hungarian_accuracy(assignment, gt)
    return acc


@dataclass(frozen=True)
class ProtoDistanceReport:
    before: float            # mean ||unlabeled prototype - true center|| over matched clusters
    after: float             # same for calibrated prototypes, same pairing
    before_known: float      # restricted to clusters matched to a labeled category
    after_known: float
    pairs: tuple[tuple[int, int], ...]  # (cluster id, truth id)


def prototype_distance_report(
    pu: PrototypeSet,
    pc: PrototypeSet,
    truth: PrototypeSet,
    mm: MatchMap | None = None,
) -> ProtoDistanceReport:
    """Distance of prototypes to true centers before and after calibration.

    Clusters are paired with true centers by minimum-cost assignment on the
    pre-calibration distances; the same pairing scores both prototype sets so
    the comparison is like-for-like.
    """
    if len(pu) != len(pc) or not np.array_equal(pu.ids, pc.ids):
        raise ValueError("prototype sets must cover the same clusters")
    diff = pu.vectors[:, None, :] - truth.vectors[None, :, :]
    dist_u = np.sqrt((diff * diff).sum(axis=2))
    if len(pu) <= len(truth):
        cols, _ = solve_assignment(dist_u)
        pairs = [(i, int(cols[i])) for i in range(len(pu))]
    else:
        rows, _ = solve_assignment(dist_u.T)
        pairs = [(int(rows[j]), j) for j in range(len(truth))]

    diff_c = pc.vectors[:, None, :] - truth.vectors[None, :, :]
    dist_c = np.sqrt((diff_c * diff_c).sum(axis=2))
    before = float(np.mean([dist_u[i, j] for i, j in pairs]))
    after = float(np.mean([dist_c[i, j] for i, j in pairs]))

    before_known = after_known = math.nan
    if mm is not None:
        matched_clusters = {cl for _, cl in mm.pairs}
        kn = [(i, j) for i, j in pairs if int(pu.ids[i]) in matched_clusters]
        if kn:
            before_known = float(np.mean([dist_u[i, j] for i, j in kn]))
            after_known = float(np.mean([dist_c[i, j] for i, j in kn]))
    return ProtoDistanceReport(
        before=before,
        after=after,
        before_known=before_known,
        after_known=after_known,
        pairs=tuple((int(pu.ids[i]), int(truth.ids[j])) for i, j in pairs),
    )
