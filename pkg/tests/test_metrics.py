import numpy as np
import pytest

from selfrank.metrics import EvalError, auc, auc_bruteforce


def test_perfect_ranking():
    r = auc([0.9, 0.8, 0.1], [1, 1, 0])
    assert r.auc == 1.0


def test_inverted_ranking():
    assert auc([0.9, 0.8, 0.1], [0, 0, 1]).auc == 0.0


def test_all_ties_midrank():
    assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]).auc == 0.5


def test_bruteforce_basics():
    assert auc_bruteforce([1.0, 0.0], [1, 0]) == 1.0
    assert auc_bruteforce([0.0, 1.0], [0, 1]) == 1.0


def test_oracle_equivalence_seeded():
    rng = np.random.default_rng(0)
    for trial in range(100):
        k = int(rng.integers(5, 200))
        labels = np.zeros(k, dtype=int)
        labels[: int(rng.integers(1, k))] = 1
        rng.shuffle(labels)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        if trial % 3 == 0:  # force heavy ties
            scores = np.round(rng.random(k), 1)
        elif trial % 7 == 0:
            scores = np.full(k, 0.5)
        else:
            scores = rng.standard_normal(k)
        assert abs(auc(scores, labels).auc - auc_bruteforce(scores, labels)) < 1e-12


def test_curve_endpoints_and_monotonicity():
    rng = np.random.default_rng(3)
    scores = rng.random(50)
    labels = (rng.random(50) < 0.3).astype(int)
    labels[0], labels[1] = 1, 0
    curve = auc(scores, labels).curve
    assert np.array_equal(curve[0], [0.0, 0.0])
    assert np.array_equal(curve[-1], [1.0, 1.0])
    assert np.all(np.diff(curve[:, 0]) >= 0)
    assert np.all(np.diff(curve[:, 1]) >= 0)


def test_invariance_under_increasing_transform():
    rng = np.random.default_rng(4)
    scores = rng.standard_normal(80)
    labels = (rng.random(80) < 0.25).astype(int)
    labels[:2] = [0, 1]
    base = auc(scores, labels).auc
    assert auc(3.0 * scores + 7.0, labels).auc == pytest.approx(base, abs=1e-12)
    assert auc(np.exp(scores), labels).auc == pytest.approx(base, abs=1e-12)


def test_negation_complement_without_ties():
    rng = np.random.default_rng(5)
    scores = rng.permutation(60).astype(float)  # distinct
    labels = (rng.random(60) < 0.4).astype(int)
    labels[:2] = [0, 1]
    assert auc(scores, labels).auc + auc(-scores, labels).auc == pytest.approx(1.0, abs=1e-12)


def test_errors():
    with pytest.raises(EvalError):
        auc([1.0, 2.0], [1, 1])
    with pytest.raises(EvalError):
        auc([1.0, 2.0], [1, 0, 1])
    with pytest.raises(EvalError):
        auc_bruteforce([1.0, 2.0], [0, 0])
