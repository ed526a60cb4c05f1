import numpy as np
import pytest

from unimixer.errors import UndefinedMetricError
from unimixer.metrics import auc, uauc


def pair_oracle(scores, labels):
    """O(n^2) pair counting with half-credit ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    wins = 0.0
    for p in pos:
        wins += (p > neg).sum() + 0.5 * (p == neg).sum()
    return wins / (len(pos) * len(neg))


class TestAUC:
    def test_perfect_ranking(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_reversed_ranking(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_ties(self):
        assert auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_six_element_tie_case_exact(self):
        scores = [0.1, 0.4, 0.4, 0.6, 0.7, 0.2]
        labels = [0, 1, 0, 1, 1, 0]
        assert auc(scores, labels) == pair_oracle(scores, labels)

    def test_random_matches_pair_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(5, 60))
            scores = rng.choice(np.linspace(0, 1, 7), size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            assert abs(auc(scores, labels) - pair_oracle(scores, labels)) < 1e-12

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        base = auc(scores, labels)
        assert auc(np.exp(scores), labels) == base
        assert auc(3.0 * scores + 10.0, labels) == base

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])


class TestUAUC:
    def test_mean_of_group_aucs(self):
        scores = np.array([0.1, 0.9, 0.8, 0.2, 0.3, 0.7])
        labels = np.array([0, 1, 1, 0, 0, 1])
        groups = np.array([0, 0, 1, 1, 2, 2])
        assert uauc(scores, labels, groups) == 1.0

    def test_groups_missing_a_class_are_skipped_and_counted(self):
        scores = np.array([0.1, 0.9, 0.5, 0.6])
        labels = np.array([0, 1, 1, 1])
        groups = np.array([0, 0, 1, 1])
        value, n_valid, n_skipped = uauc(scores, labels, groups,
                                         return_detail=True)
        assert value == 1.0 and n_valid == 1 and n_skipped == 1

    def test_all_groups_invalid_rejected(self):
        with pytest.raises(UndefinedMetricError):
            uauc([0.1, 0.9], [1, 1], [0, 1])

    def test_unweighted_mean(self, rng):
        # two groups with different AUCs average evenly despite sizes
        s1 = np.array([0.1, 0.9])         # AUC 1
        s2 = np.array([0.9, 0.8, 0.2, 0.1, 0.5, 0.4])  # AUC 0 on 6 samples
        scores = np.concatenate([s1, s2])
        labels = np.array([0, 1] + [1, 1, 0, 0, 1, 0])
        groups = np.array([0, 0] + [1] * 6)
        per_group = [auc(s1, labels[:2]), auc(s2, labels[2:])]
        assert uauc(scores, labels, groups) == np.mean(per_group)
