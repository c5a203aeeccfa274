import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcdkit.clustering import kmeans
from gcdkit.data import Dataset, Instance, Split
from gcdkit.prototypes import (
    MatchMap,
    PrototypeKind,
    PrototypeSet,
    calibrate,
    labeled_prototypes,
    load_prototype_file,
    match_prototypes,
    save_prototype_file,
    unlabeled_prototypes,
)


def dataset_from(rows):
    """rows: list of (split, label, embedding)"""
    dim = len(rows[0][2])
    return Dataset(
        dim=dim,
        instances=tuple(
            Instance(id=f"i{k}", embedding=np.array(e, dtype=float), split=s, gt_label=g)
            for k, (s, g, e) in enumerate(rows)
        ),
    )


def pset(kind, vectors, ids=None):
    vectors = np.asarray(vectors, dtype=float)
    if ids is None:
        ids = np.arange(vectors.shape[0])
    return PrototypeSet(kind, vectors, np.asarray(ids))


class TestLabeledPrototypes:
    def test_single_instance_per_category(self):
        ds = dataset_from([
            (Split.LABELED, 0, [1.0, 2.0]),
            (Split.LABELED, 1, [3.0, 4.0]),
        ])
        pl = labeled_prototypes(ds, ds.embedding_matrix())
        assert pl.kind is PrototypeKind.LABELED
        assert pl.ids.tolist() == [0, 1]
        assert np.allclose(pl.vectors, [[1, 2], [3, 4]])

    def test_mean_of_two(self):
        ds = dataset_from([
            (Split.LABELED, 3, [1.0, 0.0]),
            (Split.LABELED, 3, [0.0, 1.0]),
        ])
        pl = labeled_prototypes(ds, ds.embedding_matrix())
        assert np.allclose(pl.vectors[0], [0.5, 0.5])

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        rows = []
        for k in range(60):
            split = Split.LABELED if k % 3 else Split.UNLABELED
            rows.append((split, int(rng.integers(0, 4)), rng.normal(size=3)))
        ds = dataset_from(rows)
        feats = rng.normal(size=(60, 5))
        pl = labeled_prototypes(ds, feats)
        for row, cat in enumerate(pl.ids):
            acc, count = np.zeros(5), 0
            for i, inst in enumerate(ds.instances):
                if inst.split is Split.LABELED and inst.gt_label == cat:
                    acc += feats[i]
                    count += 1
            assert np.allclose(pl.vectors[row], acc / count)

    def test_unlabeled_only_category_excluded(self):
        ds = dataset_from([
            (Split.LABELED, 0, [0.0]),
            (Split.UNLABELED, 5, [1.0]),
        ])
        pl = labeled_prototypes(ds, ds.embedding_matrix())
        assert pl.ids.tolist() == [0]


class TestUnlabeledPrototypes:
    def test_mirrors_cluster_means(self):
        rng = np.random.default_rng(1)
        pts = np.concatenate([
            rng.normal([0, 0], 0.2, size=(30, 2)),
            rng.normal([9, 9], 0.2, size=(30, 2)),
        ])
        cl = kmeans(pts, 2, seed=0)
        pu = unlabeled_prototypes(cl)
        assert pu.kind is PrototypeKind.UNLABELED
        for j in range(2):
            assert np.allclose(pu.vectors[j], pts[cl.assignment == j].mean(axis=0))


class TestMatchPrototypes:
    def test_identical_sets_identity_zero_cost(self):
        v = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
        mm = match_prototypes(pset(PrototypeKind.LABELED, v), pset(PrototypeKind.UNLABELED, v))
        assert mm.pairs == ((0, 0), (1, 1), (2, 2))
        assert mm.total_cost == pytest.approx(0.0, abs=1e-12)

    def test_known_distance_matrix(self):
        # distances [[1,9,9],[9,9,1]] up to construction
        pl = pset(PrototypeKind.LABELED, [[0.0], [10.0]])
        pu = pset(PrototypeKind.UNLABELED, [[1.0], [-9.0], [9.0]])
        mm = match_prototypes(pl, pu)
        assert dict(mm.pairs) == {0: 0, 1: 2}
        assert mm.total_cost == pytest.approx(2.0)

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            m = int(rng.integers(1, 6))
            kp = int(rng.integers(m, 8))
            pl = pset(PrototypeKind.LABELED, rng.normal(size=(m, 3)))
            pu = pset(PrototypeKind.UNLABELED, rng.normal(size=(kp, 3)))
            dist = np.linalg.norm(pl.vectors[:, None] - pu.vectors[None], axis=2)
            best = min(
                sum(dist[i, c] for i, c in enumerate(cols))
                for cols in itertools.permutations(range(kp), m)
            )
            mm = match_prototypes(pl, pu)
            assert mm.total_cost == pytest.approx(best, abs=1e-9)
            clusters = [c for _, c in mm.pairs]
            assert len(set(clusters)) == m

    def test_more_labeled_than_clusters_rejected(self):
        pl = pset(PrototypeKind.LABELED, np.zeros((3, 2)))
        pu = pset(PrototypeKind.UNLABELED, np.zeros((2, 2)))
        with pytest.raises(ValueError):
            match_prototypes(pl, pu)


class TestCalibrate:
    def test_alpha_one_is_identity(self):
        rng = np.random.default_rng(3)
        pu = pset(PrototypeKind.UNLABELED, rng.normal(size=(4, 6)))
        pl = pset(PrototypeKind.LABELED, rng.normal(size=(3, 6)))
        pc, _ = calibrate(pu, pl, k=2, alpha=1.0)
        assert np.allclose(pc.vectors, pu.vectors)
        assert pc.kind is PrototypeKind.CALIBRATED

    def test_hand_worked_two_nearest(self):
        pu = pset(PrototypeKind.UNLABELED, [[0.0, 0.0]])
        pl = pset(PrototypeKind.LABELED, [[1.0, 0.0], [0.0, 1.0], [4.0, 0.0]])
        pc, spec = calibrate(pu, pl, k=2, alpha=0.8)
        assert spec.transfer_sets[0].tolist() == [0, 1]
        assert np.allclose(spec.weights[0], [0.5, 0.5])
        assert np.allclose(pc.vectors[0], [0.1, 0.1])

    def test_identical_prototypes_fixed_point(self):
        v = np.array([[2.0, -1.0]])
        pu = pset(PrototypeKind.UNLABELED, v)
        pl = pset(PrototypeKind.LABELED, np.repeat(v, 3, axis=0), ids=[0, 1, 2])
        for alpha in (0.0, 0.3, 1.0):
            pc, _ = calibrate(pu, pl, k=3, alpha=alpha)
            assert np.allclose(pc.vectors, v)

    def test_tie_break_prefers_lower_labeled_id(self):
        pu = pset(PrototypeKind.UNLABELED, [[0.0, 0.0]])
        pl = pset(PrototypeKind.LABELED, [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        _, spec = calibrate(pu, pl, k=2, alpha=0.5)
        assert spec.transfer_sets[0].tolist() == [0, 1]

    def test_k_out_of_range(self):
        pu = pset(PrototypeKind.UNLABELED, np.zeros((2, 2)))
        pl = pset(PrototypeKind.LABELED, np.zeros((2, 2)))
        with pytest.raises(ValueError):
            calibrate(pu, pl, k=3, alpha=0.5)
        with pytest.raises(ValueError):
            calibrate(pu, pl, k=0, alpha=0.5)
        with pytest.raises(ValueError):
            calibrate(pu, pl, k=1, alpha=1.5)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    m=st.integers(1, 6),
    kp=st.integers(1, 7),
    k=st.integers(1, 6),
    alpha=st.floats(0.0, 1.0),
    dim=st.integers(1, 8),
)
def test_calibration_weight_and_hull_properties(seed, m, kp, k, alpha, dim):
    if k > m:
        k = m
    rng = np.random.default_rng(seed)
    pu = pset(PrototypeKind.UNLABELED, rng.normal(scale=3.0, size=(kp, dim)))
    pl = pset(PrototypeKind.LABELED, rng.normal(scale=3.0, size=(m, dim)))
    pc, spec = calibrate(pu, pl, k=k, alpha=alpha)
    dist = np.linalg.norm(pu.vectors[:, None] - pl.vectors[None], axis=2)
    for i in range(kp):
        w = spec.weights[i]
        sel = spec.transfer_sets[i]
        assert w.min() >= 0.0
        assert w.sum() == pytest.approx(1.0, abs=1e-9)
        # weights non-increasing in distance within the transfer set
        order = np.argsort(dist[i, sel], kind="stable")
        assert np.all(np.diff(w[order]) <= 1e-12)
        # calibrated prototype inside the bounding box of its generators
        hull_pts = np.vstack([pu.vectors[i], pl.vectors[sel]])
        assert np.all(pc.vectors[i] >= hull_pts.min(axis=0) - 1e-9)
        assert np.all(pc.vectors[i] <= hull_pts.max(axis=0) + 1e-9)
    # exact convex-combination reconstruction
    for i in range(kp):
        blend = spec.weights[i] @ pl.vectors[spec.transfer_sets[i]]
        assert np.allclose(pc.vectors[i], alpha * pu.vectors[i] + (1 - alpha) * blend)


def test_translation_equivariance_of_calibration():
    rng = np.random.default_rng(9)
    pu_v = rng.normal(size=(5, 4))
    pl_v = rng.normal(size=(3, 4))
    t = np.array([5.0, -2.0, 0.5, 100.0])
    pc0, spec0 = calibrate(pset(PrototypeKind.UNLABELED, pu_v), pset(PrototypeKind.LABELED, pl_v), 2, 0.8)
    pc1, spec1 = calibrate(
        pset(PrototypeKind.UNLABELED, pu_v + t), pset(PrototypeKind.LABELED, pl_v + t), 2, 0.8
    )
    assert np.allclose(pc1.vectors, pc0.vectors + t, atol=1e-9)
    for a, b in zip(spec0.weights, spec1.weights):
        assert np.allclose(a, b, atol=1e-12)
    for a, b in zip(spec0.transfer_sets, spec1.transfer_sets):
        assert np.array_equal(a, b)


def test_match_translation_equivariance():
    rng = np.random.default_rng(10)
    pl_v = rng.normal(size=(3, 4))
    pu_v = rng.normal(size=(5, 4))
    t = rng.normal(size=4) * 10
    a = match_prototypes(pset(PrototypeKind.LABELED, pl_v), pset(PrototypeKind.UNLABELED, pu_v))
    b = match_prototypes(pset(PrototypeKind.LABELED, pl_v + t), pset(PrototypeKind.UNLABELED, pu_v + t))
    assert a.pairs == b.pairs
    assert a.total_cost == pytest.approx(b.total_cost, rel=1e-9)


def test_prototype_file_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    protos = pset(PrototypeKind.GROUND_TRUTH, rng.normal(size=(4, 3)), ids=[2, 5, 7, 9])
    path = tmp_path / "truth.tsv"
    save_prototype_file(protos, path)
    loaded = load_prototype_file(path)
    assert loaded.ids.tolist() == [2, 5, 7, 9]
    assert np.array_equal(loaded.vectors, protos.vectors)
