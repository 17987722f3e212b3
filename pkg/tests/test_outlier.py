import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.cluster import DBSCAN

from alphafair.dataio import two_group_fixture
from alphafair.model import Layout, Model, init_model
from alphafair.outlier import (
    ClusterLabels,
    OutlierError,
    cosine_distance_matrix,
    dbscan,
    decentralize,
    default_eps,
    detect_outliers,
    pairwise_euclidean,
    remove_outliers,
)
from alphafair.trainer import TrainConfig, train


def test_decentralize_examples():
    assert not decentralize(np.tile([1.0, 2.0, 3.0], (4, 1))).any()
    a = np.array([1.0, -2.0])
    np.testing.assert_array_equal(decentralize(np.stack([a, -a])), np.stack([a, -a]))
    g = np.random.default_rng(0).normal(size=(30, 4))
    np.testing.assert_allclose(decentralize(g).sum(axis=0), 0.0, atol=1e-12)


def test_cosine_examples():
    g = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [0.0, 3.0]])
    m = cosine_distance_matrix(g).matrix
    assert m[0, 1] == pytest.approx(0.0) and m[0, 2] == pytest.approx(2.0) and m[0, 3] == pytest.approx(1.0)


def test_zero_rows_are_neutral():
    m = cosine_distance_matrix(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])).matrix
    np.testing.assert_array_equal(m[0], [0.0, 1.0, 1.0])
    np.testing.assert_array_equal(m[:, 0], [0.0, 1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_distance_matrix_invariants(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(int(rng.integers(2, 40)), int(rng.integers(1, 8))))
    m = cosine_distance_matrix(decentralize(g)).matrix
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == 0) and m.min() >= 0 and m.max() <= 2


def test_dbscan_identical_points():
    labels = dbscan(np.zeros((10, 3)), eps=0.1, min_pts=5).labels
    assert set(labels.tolist()) == {0}


def test_dbscan_min_pts_above_n():
    labels = dbscan(np.random.default_rng(0).normal(size=(6, 2)), eps=1.0, min_pts=7).labels
    assert np.all(labels == -1)


def _blobs(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.1, size=(50, 2))
    b = rng.normal(0.0, 0.1, size=(50, 2)) + [5.0, 0.0]
    far = np.array([[20.0, 20.0], [-20.0, 15.0], [0.0, -25.0], [30.0, -5.0], [-15.0, -15.0]])
    return np.concatenate([a, b, far])


def test_dbscan_flags_exactly_the_far_points_and_matches_sklearn():
    x = _blobs()
    ours = dbscan(x, eps=0.5, min_pts=5).labels
    ref = DBSCAN(eps=0.5, min_samples=5).fit(x).labels_
    assert set(np.flatnonzero(ours == -1).tolist()) == {100, 101, 102, 103, 104}
    np.testing.assert_array_equal(ours, ref)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dbscan_matches_sklearn_on_random_data(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(int(rng.integers(5, 80)), 3))
    eps = float(rng.uniform(0.3, 1.5))
    mp = int(rng.integers(1, 8))
    ours = dbscan(x, eps=eps, min_pts=mp).labels
    ref = DBSCAN(eps=eps, min_samples=mp).fit(x).labels_
    # cores and noise agree exactly; border points may join either cluster
    assert np.array_equal(ours == -1, ref == -1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_outlier_set_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = np.concatenate([_blobs(seed), rng.normal(size=(10, 2)) * 3])
    perm = rng.permutation(len(x))
    a = dbscan(x, eps=0.5, min_pts=5).labels
    b = dbscan(x[perm], eps=0.5, min_pts=5).labels
    assert set(np.flatnonzero(a == -1).tolist()) == set(perm[b == -1].tolist())
    # clusters agree up to renaming (the blobs have no border ambiguity)
    assert len(set(zip(a[perm].tolist(), b.tolist()))) == len(set(a.tolist()))


def test_dbscan_errors():
    with pytest.raises(OutlierError):
        dbscan(np.zeros((3, 2)), eps=0.0)
    with pytest.raises(OutlierError):
        dbscan(np.zeros((3, 2)), eps=1.0, min_pts=0)


def test_pairwise_euclidean_matches_direct():
    x = np.random.default_rng(1).normal(size=(20, 5))
    direct = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    np.testing.assert_allclose(pairwise_euclidean(x), direct, atol=1e-10)


def test_default_eps_is_kdist_percentile():
    d = pairwise_euclidean(_blobs())
    kdist = np.sort(d, axis=1)[:, 4]
    assert default_eps(d, 5, 90.0) == pytest.approx(np.percentile(kdist, 90.0))


def test_representation_dimension_is_n_when_p_much_larger():
    ds = two_group_fixture(n=40, seed=0, d=60)
    model = init_model(Layout(ds.n_features, 2, hidden=50), np.random.default_rng(0))
    assert model.layout.n_params > 50 * len(ds)
    labels = detect_outliers(model, ds)
    assert labels.labels.shape == (len(ds),)


def test_remove_outliers_examples():
    ds = two_group_fixture(n=30, seed=1)
    assert remove_outliers(ds, ClusterLabels(np.zeros(30, dtype=int), 1.0, 5)) is ds
    labels = np.zeros(30, dtype=int)
    labels[7] = -1
    out = remove_outliers(ds, ClusterLabels(labels, 1.0, 5, ds.sample_ids))
    assert len(out) == 29 and 7 not in out.sample_ids.tolist()
    np.testing.assert_array_equal(out.sample_ids, np.delete(ds.sample_ids, 7))
    with pytest.raises(OutlierError, match="refusing"):
        remove_outliers(ds, ClusterLabels(np.full(30, -1), 1.0, 5))
    with pytest.raises(OutlierError):
        remove_outliers(ds, ClusterLabels(np.zeros(29, dtype=int), 1.0, 5))


def test_planted_outliers_found_on_well_separated_fixture():
    # One full-set pass with the data-driven defaults on a converged ERM model.
    recall, false = [], []
    for seed in range(4):
        ds = two_group_fixture(n=1000, seed=seed, outlier_frac=0.05, separation=5.0)
        model, _ = train(TrainConfig(method="erm", epochs=5, lr=0.05, seed=seed), ds)
        flagged = ds.sensitive["is_outlier"] == 1
        out = detect_outliers(model, ds).labels == -1
        recall.append((out & flagged).sum() / flagged.sum())
        false.append((out & ~flagged).sum() / (~flagged).sum())
    assert np.mean(recall) >= 0.9 and np.mean(false) <= 0.05


def test_detect_outliers_is_deterministic():
    ds = two_group_fixture(n=300, seed=2, outlier_frac=0.05)
    model = Model(np.random.default_rng(3).normal(size=Layout(ds.n_features, 2).n_params), Layout(ds.n_features, 2))
    a, b = detect_outliers(model, ds), detect_outliers(model, ds)
    assert a.labels.tobytes() == b.labels.tobytes() and a.eps == b.eps
