"""Gaussian-mixture benchmark generator with controllable separation.

Category centers are drawn from a spherical Gaussian of std center_scale;
instances from a spherical Gaussian of std noise_sigma around their center.
A fixed fraction of categories (rounded half-up) is marked novel and gets no
labeled instances; each category holds out a test slice; the remaining
training instances of known categories are partially labeled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Instance, Split
from .prototypes import PrototypeKind, PrototypeSet


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class SyntheticConfig:
    dim: int = 16
    n_categories: int = 20
    novel_fraction: float = 0.25
    labeled_fraction: float = 0.1
    per_category_count: int = 200
    center_scale: float = 1.0
    noise_sigma: float = 0.35
    test_fraction: float = 0.25
    seed: int = 0
    # "per-category" labels a fixed fraction inside each known category;
    # "global" draws one labeled pool across known categories (but keeps at
    # least one labeled instance per known category).
    labeled_sampling: str = "per-category"

    def __post_init__(self):
        if self.dim <= 0 or self.n_categories <= 0 or self.per_category_count <= 0:
            raise ValueError("dim, n_categories, per_category_count must be positive")
        if not 0.0 <= self.novel_fraction <= 1.0:
            raise ValueError("novel_fraction must be in [0, 1]")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.noise_sigma <= 0 or self.center_scale <= 0:
            raise ValueError("noise_sigma and center_scale must be positive")
        if self.labeled_sampling not in ("per-category", "global"):
            raise ValueError("labeled_sampling must be 'per-category' or 'global'")


# Defaults above are the desk-scale acceptance configuration.
ACCEPTANCE_CONFIG = SyntheticConfig()


def make_synthetic(cfg: SyntheticConfig) -> tuple[Dataset, PrototypeSet]:
    """Generate a dataset plus the true category centers (for diagnostics)."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    K = cfg.n_categories
    centers = rng.normal(0.0, cfg.center_scale, size=(K, cfg.dim))

    n_novel = round_half_up(cfg.novel_fraction * K)
    n_known = K - n_novel
    if n_known == 0:
        raise ValueError("configuration yields zero known categories")
    known = list(range(n_known))  # highest ids are the novel categories

    n_test = round_half_up(cfg.test_fraction * cfg.per_category_count)
    n_train = cfg.per_category_count - n_test
    if n_train <= 0:
        raise ValueError("test_fraction leaves no training instances")

    per_cat_points = {
        cat: rng.normal(centers[cat], cfg.noise_sigma, size=(cfg.per_category_count, cfg.dim))
        for cat in range(K)
    }

    # choose labeled slots among training instances of known categories
    labeled_slots: dict[int, set[int]] = {cat: set() for cat in range(K)}
    if cfg.labeled_sampling == "per-category":
        n_lab = round_half_up(cfg.labeled_fraction * n_train)
        for cat in known:
            labeled_slots[cat] = set(range(min(n_lab, n_train)))
    else:
        pool = [(cat, j) for cat in known for j in range(n_train)]
        n_lab_total = round_half_up(cfg.labeled_fraction * len(pool))
        if n_lab_total < n_known:
            raise ValueError(
                f"global labeled budget {n_lab_total} cannot cover {n_known} known categories"
            )
        chosen = rng.choice(len(pool), size=min(n_lab_total, len(pool)), replace=False)
        for c in chosen:
            cat, j = pool[c]
            labeled_slots[cat].add(j)
        # guarantee every known category keeps at least one labeled instance
        for cat in known:
            if not labeled_slots[cat]:
                donor = max(known, key=lambda c: (len(labeled_slots[c]), c))
                spare = max(labeled_slots[donor])
                labeled_slots[donor].remove(spare)
                labeled_slots[cat].add(0)

    if sum(len(s) for s in labeled_slots.values()) == 0:
        raise ValueError("configuration yields zero labeled instances")

    instances = []
    for cat in range(K):
        pts = per_cat_points[cat]
        for j in range(cfg.per_category_count):
            if j >= n_train:
                split = Split.TEST
            elif j in labeled_slots[cat]:
                split = Split.LABELED
            else:
                split = Split.UNLABELED
            instances.append(
                Instance(
                    id=f"c{cat}-i{j}",
                    embedding=pts[j],
                    split=split,
                    gt_label=cat,
                )
            )
    ds = Dataset(dim=cfg.dim, instances=tuple(instances))
    truth = PrototypeSet(PrototypeKind.GROUND_TRUTH, centers, np.arange(K))
    return ds, truth
