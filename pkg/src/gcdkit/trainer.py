"""Training orchestration: pretraining, the per-epoch alignment loop, ablations.

Each training epoch re-derives its targets from a frozen feature snapshot:
cluster the unlabeled features, estimate prototypes, match labeled prototypes
to clusters, calibrate, then run mini-batch optimization against those fixed
targets. Prototypes never receive gradients. Labeled category i trains the
classifier output of its matched cluster, so the pseudo-label and labeled
cross-entropies share one head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import estimate_k, kmeans
from .data import Dataset, Split
from .encoder import (
    AdamState,
    EncoderHead,
    Grads,
    adam_step,
    backward,
    classifier_backward,
    classifier_forward,
    forward,
    init_head,
    l2_normalize,
    l2_normalize_backward,
    reinit_classifier,
)
from .evaluation import MetricsReport, prototype_distance_report, pseudo_label_accuracy, split_metrics
from .losses import LossBreakdown, loss_ce, loss_i2i, loss_i2p, loss_p2i, total_loss
from .prototypes import (
    PrototypeKind,
    PrototypeSet,
    calibrate,
    labeled_prototypes,
    match_prototypes,
    unlabeled_prototypes,
)
from .rng import rng

# phase tags for seed derivation
_INIT, _PRETRAIN, _TRAIN, _EVAL, _CLF, _FINAL = 1, 2, 3, 4, 5, 6

ABLATION_VARIANTS = ("full", "no_p2i", "no_p2p", "no_ce", "no_i2i", "no_u", "no_i2p")


@dataclass(frozen=True)
class TrainConfig:
    # defaults follow the published configuration: top-k 5, blend 0.8,
    # labeled-loss weight 100, contrastive temperature 0.07
    k_top: int = 5
    alpha: float = 0.8
    beta: float = 100.0
    tau: float = 0.07
    epochs: int = 20
    batch_size: int = 64
    lr_pretrain: float = 1e-3
    lr_train: float = 1e-3
    k_clusters: int | str = "true"  # int, "true", "estimate", or "overcluster_1.2"
    seed: int = 0
    early_stop_patience: int = 20
    pretrain_epochs: int = 200
    hidden: tuple[int, ...] = (64,)
    feature_dim: int = 32
    dropout_rate: float = 0.1
    aug_noise: float = 0.0
    normalize_distances: bool = False
    refresh_every: int = 1
    weight_decay: float = 0.0
    estimate_k_max: int = 0  # 0 -> 2 * true category count
    drop_ratio: float = 0.5
    kmeans_restarts: int = 5

    def __post_init__(self):
        if isinstance(self.k_clusters, str) and self.k_clusters not in (
            "true",
            "estimate",
            "overcluster_1.2",
        ):
            raise ValueError(f"bad k_clusters {self.k_clusters!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


def new_head(ds: Dataset, cfg: TrainConfig) -> EncoderHead:
    n_classes = max(ds.n_known, 1)
    return init_head(
        ds.dim,
        hidden=tuple(cfg.hidden),
        out_dim=cfg.feature_dim,
        n_classes=n_classes,
        dropout_rate=cfg.dropout_rate,
        seed=(cfg.seed, _INIT),
    )


def featurize(head: EncoderHead, X: np.ndarray, normalize: bool = False) -> np.ndarray:
    """Deterministic eval-mode features for a matrix of inputs."""
    z, _ = forward(head, X, mode="eval")
    if normalize:
        z, _ = l2_normalize(z)
    return z


def resolve_k_clusters(cfg: TrainConfig, ds: Dataset, unlabeled_features: np.ndarray) -> int:
    spec = cfg.k_clusters
    k_true = ds.n_categories
    if isinstance(spec, int):
        k = spec
    elif spec == "true":
        k = k_true
    elif spec == "overcluster_1.2":
        k = math.ceil(1.2 * k_true)
    elif spec == "estimate":
        k_max = cfg.estimate_k_max or 2 * k_true
        k = estimate_k(
            unlabeled_features,
            k_max=k_max,
            drop_ratio=cfg.drop_ratio,
            seed=(cfg.seed, _EVAL, 0xE5),
            n_restarts=cfg.kmeans_restarts,
        )
    else:  # pragma: no cover - guarded by TrainConfig
        raise ValueError(f"bad k_clusters {spec!r}")
    if k < ds.n_known:
        raise ValueError(
            f"k_clusters={k} is below the number of known categories {ds.n_known}"
        )
    return k


def pretrain(head: EncoderHead, ds: Dataset, cfg: TrainConfig) -> EncoderHead:
    """Supervised cross-entropy on the labeled split with early stopping.

    A held-out labeled slice tracks validation loss; training stops once it
    fails to improve for `early_stop_patience` epochs and the best snapshot
    is returned. With pretrain_epochs == 0 the head is returned unchanged.
    """
    lab_idx = ds.split_indices(Split.LABELED)
    if lab_idx.size == 0:
        raise ValueError("pretraining requires labeled instances")
    if cfg.pretrain_epochs == 0:
        return head.copy()

    cats = sorted(ds.known_categories)
    cat_index = {c: i for i, c in enumerate(cats)}
    labels = ds.labels()
    X = ds.embedding_matrix()
    head = reinit_classifier(head, len(cats), seed=(cfg.seed, _PRETRAIN, 0))

    order = rng(cfg.seed, _PRETRAIN, 1).permutation(lab_idx)
    n_val = int(round(0.2 * order.size)) if order.size >= 10 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    y_train = np.array([cat_index[labels[i]] for i in train_idx])
    y_val = np.array([cat_index[labels[i]] for i in val_idx])

    state = AdamState.for_head(head)
    best = head.copy()
    best_val = math.inf
    stale = 0
    bs = min(cfg.batch_size, train_idx.size)
    for epoch in range(cfg.pretrain_epochs):
        perm = rng(cfg.seed, _PRETRAIN, 2, epoch).permutation(train_idx.size)
        for step in range(0, train_idx.size, bs):
            rows = perm[step : step + bs]
            xb = X[train_idx[rows]]
            z, tape = forward(
                head, xb, mode="train", noise_seed=(cfg.seed, _PRETRAIN, 3, epoch, step),
                input_noise=cfg.aug_noise,
            )
            logits = classifier_forward(head, z)
            _, dlogits = loss_ce(logits, y_train[rows])
            cgrad, dz = classifier_backward(head, z, dlogits)
            grads = backward(head, tape, dz)
            grads.classifier = cgrad
            head = adam_step(
                head, grads, state, cfg.lr_pretrain, weight_decay=cfg.weight_decay
            )
        if n_val:
            zv = featurize(head, X[val_idx])
            val_loss, _ = loss_ce(classifier_forward(head, zv), y_val)
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best = head.copy()
                stale = 0
            else:
                stale += 1
                if stale > cfg.early_stop_patience:
                    break
        else:
            best = head.copy()
    return best


def labeled_training_accuracy(head: EncoderHead, ds: Dataset) -> float:
    """Classifier accuracy over the labeled split (pretraining sanity check)."""
    lab_idx = ds.split_indices(Split.LABELED)
    cats = sorted(ds.known_categories)
    cat_index = {c: i for i, c in enumerate(cats)}
    X = ds.embedding_matrix()[lab_idx]
    y = np.array([cat_index[ds.instances[i].gt_label] for i in lab_idx])
    pred = classifier_forward(head, featurize(head, X)).argmax(axis=1)
    return float((pred == y).mean())


@dataclass
class EpochTargets:
    """Frozen per-epoch training targets derived from a feature snapshot."""

    k_clusters: int
    pseudo: np.ndarray            # cluster id per unlabeled instance
    pl: PrototypeSet
    pu: PrototypeSet
    pc: PrototypeSet
    mm: "object"
    ce_targets: np.ndarray        # matched cluster id per labeled instance


def _align_cluster_ids(cl, prev_centers):
    """Relabel clusters to match the previous epoch's centers.

    Cluster ids would otherwise permute across refreshes (k-means restarts
    from a fresh seed), which would force the shared classifier to re-learn
    shuffled targets every epoch. Minimum-distance assignment keeps ids
    stable so the classifier and cross-entropy targets stay coherent.
    """
    from .assignment import solve_assignment

    diff = prev_centers[:, None, :] - cl.centers[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    cols, _ = solve_assignment(dist)  # prev id i <-> new cluster cols[i]
    relabel = np.empty(cl.centers.shape[0], dtype=int)
    relabel[cols] = np.arange(cl.centers.shape[0])
    cl.centers = cl.centers[cols]
    cl.assignment = relabel[cl.assignment]
    return cl


REFRESH_RESTARTS = 25


def _make_targets(ds, cfg, z_all, unlabeled_idx, lab_idx, k_clusters, epoch, disabled,
                  prev_centers=None):
    # Training targets use many more restarts than the default clusterer: a
    # transiently merged pair of categories would otherwise be *fused in
    # feature space* by the prototype pull, turning a bad local optimum into
    # permanent damage. Evaluation keeps the default restart count.
    cl = kmeans(
        z_all[unlabeled_idx],
        k_clusters,
        seed=(cfg.seed, _TRAIN, 0xC, epoch),
        n_restarts=max(cfg.kmeans_restarts, REFRESH_RESTARTS),
    )
    if prev_centers is not None and prev_centers.shape == cl.centers.shape:
        cl = _align_cluster_ids(cl, prev_centers)
    pl = labeled_prototypes(ds, z_all)
    pu = unlabeled_prototypes(cl)
    mm = match_prototypes(pl, pu)
    alpha_eff = 1.0 if "p2p" in disabled else cfg.alpha
    k_eff = min(cfg.k_top, len(pl))
    pc, _ = calibrate(pu, pl, k_eff, alpha_eff)
    cat_to_cluster = mm.cluster_for_category()
    labels = ds.labels()
    ce_targets = np.array([cat_to_cluster[labels[i]] for i in lab_idx], dtype=int)
    return EpochTargets(
        k_clusters=k_clusters,
        pseudo=cl.assignment,
        pl=pl,
        pu=pu,
        pc=pc,
        mm=mm,
        ce_targets=ce_targets,
    )


def _epoch_report(ds, cfg, head, z_all, targets, test_idx, unlabeled_idx, truth_features):
    labels = ds.labels()
    if test_idx.size:
        pred = classifier_forward(head, z_all[test_idx]).argmax(axis=1)
        report = split_metrics(pred, labels[test_idx], ds.known_categories)
    else:
        report = MetricsReport(
            h_score=0.0,
            known_acc=math.nan,
            novel_acc=math.nan,
            overall_acc=math.nan,
            flags=("test_split_empty",),
        )
    report.pseudo_label_acc = pseudo_label_accuracy(targets.pseudo, labels[unlabeled_idx])
    if truth_features is not None:
        truth_set = PrototypeSet(
            PrototypeKind.GROUND_TRUTH, truth_features, np.arange(truth_features.shape[0])
        )
        dist = prototype_distance_report(targets.pu, targets.pc, truth_set, targets.mm)
        report.proto_dist_before = dist.before
        report.proto_dist_after = dist.after
    return report


def train(
    head: EncoderHead,
    ds: Dataset,
    cfg: TrainConfig,
    disabled: frozenset[str] = frozenset(),
    truth: PrototypeSet | None = None,
    loss_log: Path | str | None = None,
) -> tuple[EncoderHead, list[MetricsReport]]:
    """Alignment training; returns the head and one report per epoch.

    Reports describe the state at the start of each epoch (the clustering,
    prototypes, and matched targets that epoch trains against). `disabled`
    names loss terms to drop ({"p2i", "p2p", "ce", "i2i", "u", "i2p"}).
    """
    unknown = disabled - {"p2i", "p2p", "ce", "i2i", "u", "i2p"}
    if unknown:
        raise ValueError(f"unknown loss terms to disable: {sorted(unknown)}")
    unlabeled_idx = ds.split_indices(Split.UNLABELED)
    lab_idx = ds.split_indices(Split.LABELED)
    test_idx = ds.split_indices(Split.TEST)
    if lab_idx.size == 0:
        raise ValueError("training requires labeled instances")
    if unlabeled_idx.size < 2:
        raise ValueError("training requires at least two unlabeled instances")
    X = ds.embedding_matrix()

    z_all = featurize(head, X, normalize=cfg.normalize_distances)
    k_clusters = resolve_k_clusters(cfg, ds, z_all[unlabeled_idx])
    head = reinit_classifier(head, k_clusters, seed=(cfg.seed, _CLF))
    state = AdamState.for_head(head)

    truth_features = None
    if truth is not None:
        truth_features = featurize(head, truth.vectors, normalize=cfg.normalize_distances)

    log_fh = None
    if loss_log is not None:
        log_fh = Path(loss_log).open("a", encoding="utf-8")
        if log_fh.tell() == 0:
            log_fh.write("epoch\tl_p2i\tl_i2p\tl_i2i\tl_u\tl_ce\ttotal\n")

    reports: list[MetricsReport] = []
    targets = None
    try:
        for epoch in range(cfg.epochs):
            z_all = featurize(head, X, normalize=cfg.normalize_distances)
            if truth is not None:
                truth_features = featurize(head, truth.vectors, normalize=cfg.normalize_distances)
            if targets is None or epoch % max(cfg.refresh_every, 1) == 0:
                prev_centers = targets.pu.vectors if targets is not None else None
                targets = _make_targets(
                    ds, cfg, z_all, unlabeled_idx, lab_idx, k_clusters, epoch, disabled,
                    prev_centers=prev_centers,
                )
            reports.append(
                _epoch_report(ds, cfg, head, z_all, targets, test_idx, unlabeled_idx, truth_features)
            )

            order = rng(cfg.seed, _TRAIN, epoch, 0).permutation(unlabeled_idx.size)
            lab_order = rng(cfg.seed, _TRAIN, epoch, 1).permutation(lab_idx.size)
            bs = min(cfg.batch_size, unlabeled_idx.size)
            lab_bs = min(cfg.batch_size, lab_idx.size)
            sums = np.zeros(5)
            n_steps = 0
            for step, start in enumerate(range(0, unlabeled_idx.size, bs)):
                pos = order[start : start + bs]
                if pos.size < 2:
                    continue  # contrastive term needs >= 2 rows
                xb = X[unlabeled_idx[pos]]
                clusters_b = targets.pseudo[pos]
                seed_base = (cfg.seed, _TRAIN, epoch, step)
                z1, tape1 = forward(head, xb, "train", (*seed_base, 0), cfg.aug_noise)
                grads = None
                d_feat1 = np.zeros_like(z1)
                v_p2i = v_i2p = v_i2i = v_u = v_ce = 0.0

                if cfg.normalize_distances:
                    f1, f1_norms = l2_normalize(z1)
                else:
                    f1, f1_norms = z1, None

                if "p2i" not in disabled:
                    v_p2i, g, _ = loss_p2i(f1, clusters_b, targets.pl, targets.mm)
                    d_feat1 += g
                if "i2p" not in disabled:
                    v_i2p, g = loss_i2p(f1, clusters_b, targets.pc)
                    d_feat1 += g

                dz1 = np.zeros_like(z1)
                if "i2i" not in disabled:
                    z2, tape2 = forward(head, xb, "train", (*seed_base, 1), cfg.aug_noise)
                    zn1, n1 = l2_normalize(z1)
                    zn2, n2 = l2_normalize(z2)
                    v_i2i, (gn1, gn2) = loss_i2i(zn1, zn2, cfg.tau)
                    if cfg.normalize_distances:
                        d_feat1 += gn1
                    else:
                        dz1 += l2_normalize_backward(zn1, n1, gn1)
                    grads = backward(head, tape2, l2_normalize_backward(zn2, n2, gn2))

                if cfg.normalize_distances:
                    dz1 += l2_normalize_backward(f1, f1_norms, d_feat1)
                else:
                    dz1 += d_feat1

                cgrads = None
                if "u" not in disabled:
                    logits1 = classifier_forward(head, z1)
                    v_u, dlog = loss_ce(logits1, clusters_b)
                    cgrads, dz_u = classifier_backward(head, z1, dlog)
                    dz1 += dz_u

                g1 = backward(head, tape1, dz1)
                if grads is None:
                    grads = g1
                else:
                    grads.add_(g1)
                if cgrads is not None:
                    grads.classifier = cgrads

                if "ce" not in disabled:
                    lpos = np.take(lab_order, np.arange(start, start + lab_bs), mode="wrap")
                    xl = X[lab_idx[lpos]]
                    zl, tapel = forward(head, xl, "train", (*seed_base, 2), cfg.aug_noise)
                    logitsl = classifier_forward(head, zl)
                    v_ce, dlogl = loss_ce(logitsl, targets.ce_targets[lpos])
                    cg_ce, dzl = classifier_backward(head, zl, cfg.beta * dlogl)
                    grads.add_(backward(head, tapel, dzl))
                    if grads.classifier is None:
                        grads.classifier = cg_ce
                    else:
                        grads.classifier[0][...] += cg_ce[0]
                        grads.classifier[1][...] += cg_ce[1]

                if grads.classifier is None:
                    grads.classifier = (
                        np.zeros_like(head.classifier[0]),
                        np.zeros_like(head.classifier[1]),
                    )
                head = adam_step(head, grads, state, cfg.lr_train, weight_decay=cfg.weight_decay)
                sums += (v_p2i, v_i2p, v_i2i, v_u, v_ce)
                n_steps += 1

            if log_fh is not None and n_steps:
                means = sums / n_steps
                bd = total_loss(*means, beta=cfg.beta, tau=cfg.tau)
                log_fh.write(
                    f"{epoch}\t{bd.l_p2i:.6f}\t{bd.l_i2p:.6f}\t{bd.l_i2i:.6f}"
                    f"\t{bd.l_u:.6f}\t{bd.l_ce:.6f}\t{bd.total:.6f}\n"
                )
    finally:
        if log_fh is not None:
            log_fh.close()
    return head, reports


def evaluate_head(
    head: EncoderHead,
    ds: Dataset,
    cfg: TrainConfig,
    truth: PrototypeSet | None = None,
    per_subset_mapping: bool = False,
    predictor: str = "kmeans",
) -> MetricsReport:
    """Score a head on the test split with Hungarian-matched accuracies.

    predictor "kmeans" (default, the protocol used throughout) clusters the
    test features; "classifier" instead takes argmax over the trained cluster
    classifier's logits, which stays heavily biased toward labeled-matched
    outputs and is exposed for diagnosis only. Pseudo-label accuracy
    always comes from clustering the unlabeled split, and with true centers
    supplied the prototype calibration distances are reported in feature
    space (truth centers mapped through the same encoder).
    """
    labels = ds.labels()
    X = ds.embedding_matrix()
    z_all = featurize(head, X, normalize=cfg.normalize_distances)
    unlabeled_idx = ds.split_indices(Split.UNLABELED)
    test_idx = ds.split_indices(Split.TEST)
    k_clusters = resolve_k_clusters(cfg, ds, z_all[unlabeled_idx])
    if predictor not in ("classifier", "kmeans"):
        raise ValueError(f"unknown predictor {predictor!r}")
    use_classifier = predictor == "classifier" and head.n_classes >= k_clusters

    if test_idx.size == 0:
        report = MetricsReport(
            h_score=0.0,
            known_acc=math.nan,
            novel_acc=math.nan,
            overall_acc=math.nan,
            flags=("test_split_empty",),
        )
    else:
        if use_classifier:
            pred = classifier_forward(head, z_all[test_idx]).argmax(axis=1)
        else:
            pred = kmeans(
                z_all[test_idx],
                k_clusters,
                seed=(cfg.seed, _FINAL, 0),
                n_restarts=cfg.kmeans_restarts,
            ).assignment
        report = split_metrics(
            pred,
            labels[test_idx],
            ds.known_categories,
            per_subset_mapping=per_subset_mapping,
        )

    if unlabeled_idx.size >= k_clusters:
        cl_u = kmeans(
            z_all[unlabeled_idx],
            k_clusters,
            seed=(cfg.seed, _FINAL, 1),
            n_restarts=cfg.kmeans_restarts,
        )
        report.pseudo_label_acc = pseudo_label_accuracy(cl_u.assignment, labels[unlabeled_idx])
        if truth is not None and ds.n_known:
            pl = labeled_prototypes(ds, z_all)
            pu = unlabeled_prototypes(cl_u)
            mm = match_prototypes(pl, pu)
            pc, _ = calibrate(pu, pl, min(cfg.k_top, len(pl)), cfg.alpha)
            truth_features = featurize(head, truth.vectors, normalize=cfg.normalize_distances)
            truth_set = PrototypeSet(
                PrototypeKind.GROUND_TRUTH, truth_features, np.arange(len(truth))
            )
            dist = prototype_distance_report(pu, pc, truth_set, mm)
            report.proto_dist_before = dist.before
            report.proto_dist_after = dist.after
    return report


def kmeans_baseline(
    pretrained: EncoderHead,
    ds: Dataset,
    cfg: TrainConfig,
    truth: PrototypeSet | None = None,
) -> MetricsReport:
    """Score of clustering pretrained features directly (no alignment training)."""
    return evaluate_head(pretrained, ds, cfg, truth=truth, predictor="kmeans")


_VARIANT_DISABLED = {
    "full": frozenset(),
    "no_p2i": frozenset({"p2i"}),
    "no_p2p": frozenset({"p2p"}),
    "no_ce": frozenset({"ce"}),
    "no_i2i": frozenset({"i2i"}),
    "no_u": frozenset({"u"}),
    "no_i2p": frozenset({"i2p"}),
}


def run_ablation(
    variant: str,
    ds: Dataset,
    cfg: TrainConfig,
    truth: PrototypeSet | None = None,
    loss_log: Path | str | None = None,
) -> MetricsReport:
    """Train one objective variant end to end and return final test metrics."""
    if variant not in _VARIANT_DISABLED:
        raise ValueError(f"unknown variant {variant!r}, expected one of {ABLATION_VARIANTS}")
    head = new_head(ds, cfg)
    head = pretrain(head, ds, cfg)
    head, _ = train(
        head, ds, cfg, disabled=_VARIANT_DISABLED[variant], truth=truth, loss_log=loss_log
    )
    return evaluate_head(head, ds, cfg, truth=truth)
