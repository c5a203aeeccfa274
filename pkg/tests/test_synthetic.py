import dataclasses

import numpy as np
import pytest

from gcdkit.clustering import kmeans
from gcdkit.data import Split, split_summary
from gcdkit.synthetic import ACCEPTANCE_CONFIG, SyntheticConfig, make_synthetic, round_half_up


def small_cfg(**kw):
    base = dict(
        dim=4,
        n_categories=4,
        novel_fraction=0.25,
        labeled_fraction=0.2,
        per_category_count=20,
        center_scale=2.0,
        noise_sigma=0.1,
        test_fraction=0.25,
        seed=1,
    )
    base.update(kw)
    return SyntheticConfig(**base)


def test_one_quarter_of_four_categories_is_novel():
    ds, _ = make_synthetic(small_cfg())
    assert ds.n_categories == 4
    assert ds.n_categories - ds.n_known == 1


def test_banking_shaped_split_counts():
    # 77 categories at 25% novel: round-half-up gives 19 novel, 58 known
    assert round_half_up(0.25 * 77) == 19
    cfg = small_cfg(n_categories=77, per_category_count=8, labeled_fraction=0.5)
    ds, _ = make_synthetic(cfg)
    s = split_summary(ds)
    assert s.n_novel == 19
    assert s.n_known == 58


def test_determinism_under_fixed_seed():
    cfg = small_cfg(seed=42)
    ds1, t1 = make_synthetic(cfg)
    ds2, t2 = make_synthetic(cfg)
    assert ds1 == ds2
    assert np.array_equal(t1.vectors, t2.vectors)


def test_different_seed_changes_data():
    ds1, _ = make_synthetic(small_cfg(seed=1))
    ds2, _ = make_synthetic(small_cfg(seed=2))
    assert ds1 != ds2


def test_degenerate_mixture_recovers_centers():
    cfg = small_cfg(noise_sigma=1e-12, n_categories=3, novel_fraction=0.0)
    ds, truth = make_synthetic(cfg)
    assert all(
        np.allclose(inst.embedding, truth.vectors[inst.gt_label], atol=1e-9)
        for inst in ds.instances
    )
    cl = kmeans(ds.embedding_matrix(), 3, seed=0)
    found = sorted(map(tuple, np.round(cl.centers, 6)))
    expect = sorted(map(tuple, np.round(truth.vectors, 6)))
    assert np.allclose(found, expect, atol=1e-6)


def test_novel_categories_have_no_labeled_instances():
    ds, _ = make_synthetic(small_cfg(n_categories=8, seed=5))
    labeled_cats = {i.gt_label for i in ds.instances if i.split is Split.LABELED}
    assert labeled_cats == set(ds.known_categories)
    for cat in ds.all_categories - ds.known_categories:
        assert all(
            i.split is not Split.LABELED for i in ds.instances if i.gt_label == cat
        )


def test_acceptance_config_shape():
    ds, truth = make_synthetic(ACCEPTANCE_CONFIG)
    s = split_summary(ds)
    assert s.n_categories == 20 and s.n_novel == 5
    assert s.n_total == 20 * 200
    assert s.n_test == 20 * 50
    # 10% of the 150 training instances of each of 15 known categories
    assert s.n_labeled == 15 * 15
    assert len(truth) == 20 and truth.dim == 16


def test_global_labeled_sampling_covers_every_known_category():
    cfg = small_cfg(labeled_sampling="global", n_categories=10, novel_fraction=0.2,
                    per_category_count=30, labeled_fraction=0.1, seed=3)
    ds, _ = make_synthetic(cfg)
    s = split_summary(ds)
    assert s.n_known == 8
    per_cat = {c: 0 for c in ds.known_categories}
    for inst in ds.instances:
        if inst.split is Split.LABELED:
            per_cat[inst.gt_label] += 1
    assert all(v >= 1 for v in per_cat.values())


def test_zero_known_categories_rejected():
    with pytest.raises(ValueError):
        make_synthetic(small_cfg(novel_fraction=1.0))


def test_bad_fractions_rejected():
    with pytest.raises(ValueError):
        small_cfg(novel_fraction=1.5)
    with pytest.raises(ValueError):
        small_cfg(labeled_fraction=0.0)
    with pytest.raises(ValueError):
        small_cfg(test_fraction=1.0)
