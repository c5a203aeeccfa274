"""Generalized category discovery over precomputed embedding vectors."""

__version__ = "0.1.0"

from .data import (
    Dataset,
    FeatureFileError,
    Instance,
    Split,
    load_feature_file,
    save_feature_file,
    split_summary,
)
from .synthetic import ACCEPTANCE_CONFIG, SyntheticConfig, make_synthetic
from .clustering import Clustering, estimate_k, kmeans
from .prototypes import (
    MatchMap,
    PrototypeKind,
    PrototypeSet,
    TransferSpec,
    calibrate,
    labeled_prototypes,
    match_prototypes,
    unlabeled_prototypes,
)
from .encoder import EncoderHead, forward, backward, init_head, load_checkpoint, save_checkpoint
from .losses import LossBreakdown, loss_ce, loss_i2i, loss_i2p, loss_p2i, total_loss
from .evaluation import (
    MetricsReport,
    h_score,
    hungarian_accuracy,
    prototype_distance_report,
    pseudo_label_accuracy,
    split_metrics,
)
from .trainer import TrainConfig, evaluate_head, kmeans_baseline, pretrain, run_ablation, train
