"""
resample 测试: SMOTE 平衡与插值约束
"""
import numpy as np
import pytest

from src.dataset import N_FEATURES, Dataset
from src.resample import SmoteError, interpolate, nearest_neighbours, smote, smote_with_provenance, write_provenance
from src.synth import REFERENCE_PRIORS


def imbalanced(rng, counts, masks=False):
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    X = rng.normal(labels[:, None] * 3.0, 1.0, size=(labels.size, N_FEATURES))
    mask = rng.integers(0, 4, size=labels.size) if masks else None
    return Dataset(X, labels, mask)


def test_balanced_input_unchanged(rng):
    data = imbalanced(rng, (20, 20, 20, 20))
    balanced, records = smote_with_provenance(data, seed=1)
    assert records == []
    assert balanced.equals(data)


def test_interpolation_endpoints(rng):
    a, b = rng.normal(size=N_FEATURES), rng.normal(size=N_FEATURES)
    assert np.array_equal(interpolate(a, b, 0.0), a)
    assert np.array_equal(interpolate(a, b, 1.0), b)


def test_thousand_to_ten(rng):
    balanced = smote(imbalanced(rng, (1000, 10, 10, 10)), seed=3)
    assert balanced.class_counts == {0: 1000, 1: 1000, 2: 1000, 3: 1000}


def test_reference_imbalance_balanced_and_contained(rng):
    counts = tuple(int(round(20000 * p)) for p in REFERENCE_PRIORS)
    data = imbalanced(rng, counts)
    balanced, records = smote_with_provenance(data, k=5, seed=2019)

    assert set(balanced.class_counts.values()) == {max(counts)}
    assert len(records) == len(balanced) - len(data)
    assert np.array_equal(balanced.X[:len(data)], data.X)

    synthetic = balanced.X[len(data):]
    i = np.array([r.i for r in records])
    zi = np.array([r.zi for r in records])
    lam = np.array([r.lam for r in records])
    lo = np.minimum(data.X[i], data.X[zi])
    hi = np.maximum(data.X[i], data.X[zi])
    assert np.all((synthetic >= lo) & (synthetic <= hi))
    assert np.allclose(synthetic, data.X[i] + lam[:, None] * (data.X[zi] - data.X[i]))
    assert np.all(data.labels[i] == balanced.labels[len(data):])
    assert np.all(data.labels[zi] == data.labels[i])


def test_neighbour_is_among_k_nearest(rng):
    data = imbalanced(rng, (60, 12, 60, 60))
    _, records = smote_with_provenance(data, k=3, seed=5)
    members = np.flatnonzero(data.labels == 1)
    for r in records:
        d = np.linalg.norm(data.X[members] - data.X[r.i], axis=1)
        d[members == r.i] = np.inf
        nearest = set(members[np.argsort(d, kind="stable")[:3]].tolist())
        assert r.zi in nearest


def test_nearest_neighbours_excludes_self():
    X = np.array([[0.0], [1.0], [3.0], [6.0]])
    assert nearest_neighbours(X, 2).tolist() == [[1, 2], [0, 2], [1, 0], [2, 1]]


def test_deterministic(rng):
    data = imbalanced(rng, (200, 15, 9, 4))
    a = smote(data, seed=11)
    b = smote(data, seed=11)
    assert a.X.tobytes() == b.X.tobytes()
    assert a.equals(b)


def test_single_sample_class_rejected(rng):
    with pytest.raises(SmoteError, match="class 1"):
        smote(imbalanced(rng, (50, 1, 10, 10)))


def test_k_clamped_with_warning(rng, capsys):
    balanced = smote(imbalanced(rng, (30, 3, 30, 30)), k=5)
    assert balanced.class_counts[1] == 30
    assert "⚠️" in capsys.readouterr().out


def test_absent_class_rejected(rng):
    with pytest.raises(SmoteError, match="class 1"):
        smote(imbalanced(rng, (40, 0, 8, 5)), k=5, seed=1)


def test_every_class_reaches_majority_count(rng):
    counts = smote(imbalanced(rng, (40, 3, 8, 5)), k=5, seed=1).class_counts
    assert set(counts.values()) == {40}


def test_synthetic_masks_are_or_of_parents(rng):
    data = imbalanced(rng, (40, 6, 3, 2), masks=True)
    balanced, records = smote_with_provenance(data)
    for r, mask in zip(records, balanced.masks[len(data):]):
        assert mask == data.masks[r.i] | data.masks[r.zi]


def test_provenance_file(tmp_path, rng):
    _, records = smote_with_provenance(imbalanced(rng, (10, 4, 10, 10)))
    path = tmp_path / "provenance.txt"
    write_provenance(records, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6
    label, i, zi, lam = lines[0].split()
    assert label == "1" and 0.0 <= float(lam) < 1.0
