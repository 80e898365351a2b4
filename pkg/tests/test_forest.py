"""
forest 测试: Gini、树生长、森林投票与序列化
"""
import time

import numpy as np
import pytest

from src import forest
from src.dataset import N_FEATURES, Dataset
from src.evaluation import split
from src.resample import smote
from src.synth import ScenarioConfig, generate_dataset_direct


def quadrant_dataset(rng, n=400, margin=0.05):
    """类别 = 前两个特征的符号组合，坐标轴附近留出间隔"""
    xy = rng.uniform(margin, 1.0, size=(n, 2)) * rng.choice([-1.0, 1.0], size=(n, 2))
    X = np.zeros((n, N_FEATURES))
    X[:, :2] = xy
    labels = 2 * (xy[:, 0] > 0) + (xy[:, 1] > 0)
    return Dataset(X, labels)


def leaf_tree(counts):
    return forest.DecisionTree([forest.LEAF], [0.0], [forest.LEAF], [forest.LEAF], [counts])


@pytest.mark.parametrize("histogram, expected", [
    ((10, 0, 0, 0), 0.0),
    ((5, 5, 0, 0), 0.5),
    ((3, 3, 3, 3), 0.75),
])
def test_gini_values(histogram, expected):
    assert forest.gini(histogram) == pytest.approx(expected, abs=1e-15)


def test_gini_rejects_empty_histogram():
    with pytest.raises(ValueError):
        forest.gini((0, 0, 0, 0))


def test_quadrant_training_accuracy(rng):
    data = quadrant_dataset(rng)
    model = forest.fit_forest(data, n_trees=20, seed=7)
    assert forest.training_accuracy(model, data) == 1.0


def test_single_sample_forest():
    data = Dataset(np.ones((1, N_FEATURES)), [2])
    model = forest.fit_forest(data, n_trees=5, seed=1)
    assert all(tree.n_nodes == 1 for tree in model.trees)
    assert forest.predict_proba_forest(model, np.zeros(N_FEATURES)).tolist() == [0.0, 0.0, 1.0, 0.0]


def test_pure_leaf_tree_probability():
    model = forest.ForestModel([leaf_tree((0, 0, 4, 0))], 1, 0)
    assert forest.predict_proba_forest(model, np.zeros(N_FEATURES)).tolist() == [0.0, 0.0, 1.0, 0.0]


def test_vote_average_and_tie_rule():
    model = forest.ForestModel([leaf_tree((3, 0, 0, 0)), leaf_tree((0, 2, 0, 0))], 2, 0)
    x = np.zeros(N_FEATURES)
    assert forest.predict_proba_forest(model, x).tolist() == [0.5, 0.5, 0.0, 0.0]
    assert forest.predict(model, x).tolist() == [0]


def test_probabilities_sum_to_one(rng):
    data = Dataset(rng.normal(size=(300, N_FEATURES)), rng.integers(0, 4, size=300))
    model = forest.fit_forest(data, n_trees=10, seed=3)
    proba = forest.predict_proba_batch(model, rng.normal(0.0, 3.0, size=(500, N_FEATURES)))
    assert np.all(np.abs(proba.sum(axis=1) - 1.0) <= 1e-12)
    assert set(np.argmax(proba, axis=1)) <= {0, 1, 2, 3}


def test_non_finite_input_rejected(rng):
    model = forest.fit_forest(quadrant_dataset(rng, 40), n_trees=2, seed=0)
    x = np.zeros(N_FEATURES)
    x[3] = np.inf
    with pytest.raises(ValueError):
        forest.predict_proba_forest(model, x)


def test_deterministic_serialization(rng):
    data = Dataset(rng.normal(size=(200, N_FEATURES)), rng.integers(0, 4, size=200))
    a = forest.forest_to_bytes(forest.fit_forest(data, n_trees=8, seed=42))
    b = forest.forest_to_bytes(forest.fit_forest(data, n_trees=8, seed=42))
    assert a == b
    assert a.startswith(b"SCFOREST v1\n")


def test_parallel_training_matches_sequential(rng):
    data = quadrant_dataset(rng, 120)
    sequential = forest.fit_forest(data, n_trees=4, seed=9, n_jobs=1)
    parallel = forest.fit_forest(data, n_trees=4, seed=9, n_jobs=2)
    assert forest.forest_to_bytes(sequential) == forest.forest_to_bytes(parallel)


def test_threaded_prediction_matches_sequential(rng):
    data = Dataset(rng.normal(size=(150, N_FEATURES)), rng.integers(0, 4, size=150))
    model = forest.fit_forest(data, n_trees=6, seed=2)
    X = rng.normal(size=(400, N_FEATURES))
    assert np.array_equal(forest.predict_proba_batch(model, X, n_jobs=1),
                          forest.predict_proba_batch(model, X, n_jobs=3))


def test_save_load_round_trip(tmp_path, rng):
    data = Dataset(rng.normal(size=(100, N_FEATURES)), rng.integers(0, 4, size=100))
    model = forest.fit_forest(data, n_trees=5, seed=4)
    path = tmp_path / "forest.scf"
    forest.save_forest(model, path)
    loaded = forest.load_forest(path)
    assert all(a.equals(b) for a, b in zip(model.trees, loaded.trees))
    assert (loaded.n_trees, loaded.seed) == (5, 4)
    X = rng.normal(size=(50, N_FEATURES))
    assert np.array_equal(forest.predict_proba_batch(model, X), forest.predict_proba_batch(loaded, X))


def test_truncated_model_rejected(rng):
    raw = forest.forest_to_bytes(forest.fit_forest(quadrant_dataset(rng, 40), n_trees=2, seed=0))
    with pytest.raises(ValueError, match="截断"):
        forest.forest_from_bytes(raw[:-3])
    with pytest.raises(ValueError):
        forest.forest_from_bytes(b"NOPE" + raw)


def test_leaf_histograms_and_split_decrease(rng):
    X = rng.normal(size=(250, N_FEATURES))
    y = rng.integers(0, 4, size=250)
    tree = forest.build_tree(X, y, np.random.default_rng(5))

    leaves = tree.apply(X)
    for node in np.flatnonzero(tree.feature == forest.LEAF):
        routed = np.bincount(y[leaves == node], minlength=4)
        assert routed.tolist() == tree.counts[node].tolist()

    for node in np.flatnonzero(tree.feature != forest.LEAF):
        left, right = tree.counts[tree.left[node]], tree.counts[tree.right[node]]
        n_left, n_right = left.sum(), right.sum()
        weighted = (n_left * forest.gini(left) + n_right * forest.gini(right)) / (n_left + n_right)
        assert weighted < forest.gini(tree.counts[node])


def test_label_permutation_equivariance(rng):
    X = rng.normal(size=(200, N_FEATURES))
    y = rng.integers(0, 4, size=200)
    perm = np.array([2, 0, 3, 1])
    model = forest.fit_forest(Dataset(X, y), n_trees=6, seed=13)
    permuted = forest.fit_forest(Dataset(X, perm[y]), n_trees=6, seed=13)
    Xq = rng.normal(size=(100, N_FEATURES))
    proba = forest.predict_proba_batch(model, Xq)
    proba_permuted = forest.predict_proba_batch(permuted, Xq)
    assert np.array_equal(proba_permuted[:, perm], proba)


def test_separable_direct_data():
    config = ScenarioConfig(seed=2019, priors=(0.25, 0.25, 0.25, 0.25), overlap=0.0)
    data = generate_dataset_direct(config, 5000)
    train, validation = split(data, 0.75, 2019)
    model = forest.fit_forest(train, n_trees=100, seed=2019)
    assert forest.training_accuracy(model, train) == 1.0
    assert forest.training_accuracy(model, validation) >= 0.99


@pytest.mark.slow
def test_batch_prediction_throughput():
    config = ScenarioConfig(seed=2019, priors=(0.25, 0.25, 0.25, 0.25), overlap=0.25)
    model = forest.fit_forest(generate_dataset_direct(config, 5000), n_trees=100, seed=2019)
    X = generate_dataset_direct(ScenarioConfig(seed=7), 221_506).X
    start = time.perf_counter()
    proba = forest.predict_proba_batch(model, X)
    assert time.perf_counter() - start <= 5.0
    assert proba.shape == (221_506, 4)


@pytest.mark.slow
def test_imbalanced_direct_data_with_smote():
    data = generate_dataset_direct(ScenarioConfig(seed=2019), 20_000)
    train, validation = split(data, 0.75, 2019)
    model = forest.fit_forest(smote(train, seed=2019), n_trees=50, seed=2019)
    assert forest.training_accuracy(model, validation) >= 0.99
