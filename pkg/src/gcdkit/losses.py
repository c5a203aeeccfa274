"""Loss terms for alignment training, each returning value and gradient.

All gradients are with respect to the feature (or logit) inputs; prototypes
are treated as constants. The combined objective is

    total = pull_to_matched_labeled + pull_to_calibrated + contrastive
            + pseudo_label_ce + beta * labeled_ce

Distance pulls use the plain Euclidean norm (not squared), with zero
subgradient at coincidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prototypes import MatchMap, PrototypeSet


@dataclass(frozen=True)
class LossBreakdown:
    l_p2i: float
    l_i2p: float
    l_i2i: float
    l_u: float
    l_ce: float
    total: float
    beta: float
    tau: float


def total_loss(
    l_p2i: float,
    l_i2p: float,
    l_i2i: float,
    l_u: float,
    l_ce: float,
    beta: float,
    tau: float = 0.07,
) -> LossBreakdown:
    total = l_p2i + l_i2p + l_i2i + l_u + beta * l_ce
    return LossBreakdown(
        l_p2i=l_p2i, l_i2p=l_i2p, l_i2i=l_i2i, l_u=l_u, l_ce=l_ce,
        total=total, beta=beta, tau=tau,
    )


def _norm_pull(features: np.ndarray, targets: np.ndarray, denom: int):
    """Mean Euclidean distance to per-row targets, with gradient."""
    diff = features - targets
    dist = np.sqrt((diff * diff).sum(axis=1))
    value = float(dist.sum() / denom)
    grads = np.zeros_like(features)
    nz = dist > 0
    grads[nz] = diff[nz] / (dist[nz, None] * denom)
    return value, grads


def loss_p2i(
    features: np.ndarray,
    cluster_ids: np.ndarray,
    pl: PrototypeSet,
    mm: MatchMap,
) -> tuple[float, np.ndarray, int]:
    """Pull features in labeled-matched clusters toward the labeled prototype.

    Only rows whose cluster appears in `mm` contribute; the value averages
    over that matched count. Returns (value, per-row gradients, n_matched);
    an empty matched set yields value 0 with zero gradients.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    cluster_ids = np.asarray(cluster_ids, dtype=int)
    cat_row = {int(c): r for r, c in enumerate(pl.ids)}
    cluster_to_proto = {
        cl: pl.vectors[cat_row[cat]] for cat, cl in mm.pairs
    }
    mask = np.array([int(c) in cluster_to_proto for c in cluster_ids], dtype=bool)
    n_matched = int(mask.sum())
    grads = np.zeros_like(features)
    if n_matched == 0:
        return 0.0, grads, 0
    targets = np.stack([cluster_to_proto[int(c)] for c in cluster_ids[mask]])
    value, g = _norm_pull(features[mask], targets, n_matched)
    grads[mask] = g
    return value, grads, n_matched


def loss_i2p(
    features: np.ndarray,
    cluster_ids: np.ndarray,
    pc: PrototypeSet,
) -> tuple[float, np.ndarray]:
    """Pull every feature toward its cluster's calibrated prototype."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    cluster_ids = np.asarray(cluster_ids, dtype=int)
    id_row = {int(c): r for r, c in enumerate(pc.ids)}
    rows = np.array([id_row[int(c)] for c in cluster_ids], dtype=int)
    targets = pc.vectors[rows]
    return _norm_pull(features, targets, features.shape[0])


def loss_i2i(
    z1: np.ndarray, z2: np.ndarray, tau: float
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Symmetric InfoNCE over the 2B stacked views.

    Inputs must be L2-normalized, B >= 2. For each of the 2B anchors the
    positive is its paired view and the denominator runs over the other
    2B - 1 views (self excluded). Value is the mean over all anchors.
    """
    z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    z2 = np.atleast_2d(np.asarray(z2, dtype=np.float64))
    if z1.shape != z2.shape:
        raise ValueError("view batches must have identical shapes")
    B = z1.shape[0]
    if B < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    V = np.concatenate([z1, z2], axis=0)          # (2B, d)
    n = 2 * B
    sim = (V @ V.T) / tau
    np.fill_diagonal(sim, -np.inf)                # self excluded
    pos = np.concatenate([np.arange(B, n), np.arange(0, B)])
    row_max = sim.max(axis=1, keepdims=True)
    exp = np.exp(sim - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    logp = (sim - row_max) - np.log(denom)
    value = float(-logp[np.arange(n), pos].mean())

    softmax = exp / denom                          # zero on the diagonal
    dsim = softmax
    dsim[np.arange(n), pos] -= 1.0
    dsim /= n
    dV = (dsim + dsim.T) @ V / tau
    return value, (dV[:B], dV[B:])


def loss_ce(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; gradient is (softmax - onehot) / batch."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=int))
    B, C = logits.shape
    if B == 0:
        raise ValueError("empty batch")
    if targets.shape[0] != B:
        raise ValueError("targets must align with logits")
    if targets.min() < 0 or targets.max() >= C:
        raise ValueError(f"targets must be in [0, {C})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(denom)
    value = float(-logp[np.arange(B), targets].mean())
    grads = exp / denom
    grads[np.arange(B), targets] -= 1.0
    grads /= B
    return value, grads
