import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccan import metrics
from ccan.errors import ConfigError, UsageError

from oracles import brute_accuracy, brute_assignment, direct_nmi


def test_hungarian_identity():
    assignment, total = metrics.hungarian(1 - np.eye(4))
    assert list(assignment) == [0, 1, 2, 3] and total == 0.0


def test_hungarian_two_by_two():
    assignment, total = metrics.hungarian([[4, 1], [2, 3]])
    assert list(assignment) == [1, 0] and total == 3.0


def test_hungarian_random_sweep():
    rng = np.random.default_rng(0)
    for _ in range(200):
        cost = rng.integers(0, 10, size=(6, 6)).astype(float)  # integer costs produce ties
        assignment, total = metrics.hungarian(cost)
        perm, best = brute_assignment(cost)
        assert total == best
        assert list(assignment) == perm


def test_hungarian_ties_prefer_lexicographic_order():
    assignment, _ = metrics.hungarian(np.zeros((3, 3)))
    assert list(assignment) == [0, 1, 2]


def test_hungarian_pads_rectangles():
    assignment, total = metrics.hungarian([[5.0, 0.0, 1.0]])
    assert assignment[0] == 1 and total == 0.0


@pytest.mark.parametrize("bad", [[[np.nan, 1.0], [1.0, 1.0]], [[np.inf]], np.zeros((0, 0))])
def test_hungarian_rejects_bad_input(bad):
    with pytest.raises(UsageError):
        metrics.hungarian(bad)


def test_accuracy_examples():
    assert metrics.clustering_accuracy([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert metrics.clustering_accuracy([0, 1, 0], [0, 0, 0]) == 2 / 3


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3)), min_size=1, max_size=30))
def test_accuracy_matches_brute_force(pairs):
    pred, truth = map(list, zip(*pairs))
    assert metrics.clustering_accuracy(pred, truth) == pytest.approx(brute_accuracy(pred, truth), abs=1e-12)


def test_accuracy_relabel_invariance(rng):
    pred, truth = rng.integers(0, 5, 100), rng.integers(0, 5, 100)
    perm = rng.permutation(5)
    assert metrics.clustering_accuracy(perm[pred], truth) == metrics.clustering_accuracy(pred, truth)
    assert metrics.nmi(perm[pred], truth) == pytest.approx(metrics.nmi(pred, truth), abs=1e-12)


def test_accuracy_majority_lower_bound(rng):
    truth = np.repeat(np.arange(4), 25)
    for k_pred in (1, 2, 3, 4):
        for _ in range(50):
            assert metrics.clustering_accuracy(rng.integers(0, k_pred, 100), truth) >= 0.25


def test_accuracy_lower_bound_with_extra_clusters(rng):
    # one-to-one matching over max(K_p, K_t) labels: the guarantee drops to 1 / K_p
    truth = np.repeat(np.arange(4), 25)
    assert metrics.clustering_accuracy(np.arange(100) % 8, truth) < 0.25
    for _ in range(50):
        assert metrics.clustering_accuracy(rng.integers(0, 6, 100), truth) >= 1 / 6


def test_nmi_examples():
    assert metrics.nmi([0, 1, 2, 0], [0, 1, 2, 0]) == pytest.approx(1.0, abs=1e-12)
    assert metrics.nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    assert metrics.nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert metrics.nmi([0, 0], [1, 1]) == 1.0


def test_nmi_against_direct_formula(rng):
    for _ in range(50):
        pred, truth = list(rng.integers(0, 4, 40)), list(rng.integers(0, 3, 40))
        assert metrics.nmi(pred, truth) == pytest.approx(direct_nmi(pred, truth), abs=1e-12)


def test_nmi_sqrt_normalization():
    pred, truth = [0, 0, 1, 1, 2, 2], [0, 0, 1, 1, 1, 1]
    a = metrics.nmi(pred, truth)
    s = metrics.nmi(pred, truth, normalization="sqrt")
    # I = H(truth) here, so sqrt normalization gives sqrt(H(truth) / H(pred))
    h_t = -(1 / 3 * np.log(1 / 3) + 2 / 3 * np.log(2 / 3))
    h_p = np.log(3)
    assert s == pytest.approx(np.sqrt(h_t / h_p))
    assert a == pytest.approx(2 * h_t / (h_t + h_p))
    with pytest.raises(ConfigError):
        metrics.nmi(pred, truth, normalization="max")


def test_metrics_bounded(rng):
    for _ in range(100):
        pred, truth = rng.integers(0, 7, 30), rng.integers(0, 4, 30)
        for v in (metrics.clustering_accuracy(pred, truth), metrics.nmi(pred, truth),
                  metrics.nmi(pred, truth, "sqrt")):
            assert 0.0 <= v <= 1.0


def test_contingency_and_errors():
    np.testing.assert_array_equal(metrics.contingency([0, 1, 1], [2, 2, 0]), [[0, 0, 1], [1, 0, 1]])
    with pytest.raises(UsageError):
        metrics.clustering_accuracy([], [])
    with pytest.raises(UsageError):
        metrics.nmi([0, 1], [0])
