import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsiprop.metrics import (
    classification_metrics,
    clustering_metrics,
    cohen_kappa,
    confusion_matrix,
    format_table,
    match_clusters,
)


class TestClassification:
    def test_perfect(self):
        t = np.array([1, 2, 3, 3, 2])
        m = classification_metrics(t, t)
        assert m["OA"] == m["AA"] == m["Kappa"] == 1.0

    def test_independent_balanced_kappa_zero(self):
        # p_o = 0.5, p_e = 0.5*0.5 + 0.5*0.5 = 0.5
        m = classification_metrics(np.array([1, 2, 1, 2]), np.array([1, 1, 2, 2]))
        assert m["OA"] == 0.5 and m["Kappa"] == 0.0

    def test_hand_table(self):
        truth = np.array([1, 1, 1, 2, 2, 3])
        pred = np.array([1, 1, 2, 2, 3, 3])
        m = classification_metrics(pred, truth)
        assert m["OA"] == pytest.approx(4 / 6)
        assert m["AA"] == pytest.approx((2 / 3 + 1 / 2 + 1) / 3)
        # p_e = (3*2 + 2*2 + 1*2) / 36 = 1/3
        assert m["Kappa"] == pytest.approx((4 / 6 - 1 / 3) / (1 - 1 / 3))
        assert m["confusion"] == [[2, 1, 0], [0, 1, 1], [0, 0, 1]]

    def test_mask_and_background(self):
        truth = np.array([[0, 1], [2, 2]])
        pred = np.array([[5, 1], [2, 1]])
        m = classification_metrics(pred, truth)
        assert m["n_evaluated"] == 3
        assert m["OA"] == pytest.approx(2 / 3)
        m2 = classification_metrics(pred, truth, mask=np.array([[0, 1], [1, 0]], bool))
        assert m2["OA"] == 1.0

    def test_unclassified_counts_as_error(self):
        m = classification_metrics(np.array([0, 1]), np.array([1, 1]), n_classes=1)
        assert m["OA"] == 0.5

    def test_empty_class_reported(self):
        m = classification_metrics(np.array([1, 1]), np.array([1, 1]), n_classes=3)
        assert m["empty_classes"] == [2, 3]
        assert m["AA"] == 1.0

    def test_kappa_matches_sklearn(self, rng):
        from sklearn.metrics import cohen_kappa_score

        t = rng.integers(1, 5, 300)
        p = np.where(rng.random(300) < 0.6, t, rng.integers(1, 5, 300))
        ours = classification_metrics(p, t)["Kappa"]
        assert ours == pytest.approx(cohen_kappa_score(t, p), abs=1e-12)

    def test_confusion_orientation(self):
        cm = confusion_matrix([1, 1, 2], [2, 2, 2], [1, 2])
        assert cm.tolist() == [[0, 2], [0, 1]]

    def test_cohen_kappa_degenerate(self):
        assert cohen_kappa(np.array([[4]])) == 1.0
        assert cohen_kappa(np.zeros((2, 2))) == 0.0


class TestClustering:
    def test_permuted_truth_is_perfect(self):
        truth = np.array([1, 1, 2, 2, 3, 3, 3])
        clusters = np.array([7, 7, 0, 0, 4, 4, 4])
        m = clustering_metrics(clusters, truth)
        for key in ("ACC", "Kappa", "NMI", "Purity", "ARI", "F-score"):
            assert m[key] == pytest.approx(1.0, abs=1e-12), key

    def test_one_giant_cluster(self):
        c = 4
        truth = np.repeat(np.arange(1, c + 1), 25)
        m = clustering_metrics(np.zeros_like(truth), truth)
        assert m["Purity"] == pytest.approx(1 / c)
        assert m["ARI"] == pytest.approx(0.0, abs=1e-12)
        assert m["NMI"] == pytest.approx(0.0, abs=1e-12)
        assert m["ACC"] == pytest.approx(1 / c)

    def test_against_sklearn(self, rng):
        from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

        truth = rng.integers(1, 6, 500)
        pred = np.where(rng.random(500) < 0.7, truth * 3, rng.integers(0, 9, 500))
        m = clustering_metrics(pred, truth)
        assert m["ARI"] == pytest.approx(adjusted_rand_score(truth, pred), abs=1e-12)
        assert m["NMI"] == pytest.approx(
            normalized_mutual_info_score(truth, pred, average_method="arithmetic"), abs=1e-12)

    def test_acc_matches_brute_force(self, rng):
        truth = rng.integers(1, 4, 60)
        pred = rng.integers(0, 3, 60)
        best = max(
            np.mean(np.array([perm[p] for p in pred]) == truth)
            for perm in itertools.permutations([1, 2, 3])
        )
        assert clustering_metrics(pred, truth)["ACC"] == pytest.approx(best)

    def test_pairwise_fscore_hand(self):
        # pairs: truth-same {01, 23}, cluster-same {01, 12, 13, 23}
        truth = np.array([1, 1, 2, 2])
        pred = np.array([0, 0, 1, 1])
        pred2 = np.array([0, 0, 0, 0])
        assert clustering_metrics(pred, truth)["F-score"] == 1.0
        # precision 2/6, recall 1
        assert clustering_metrics(pred2, truth)["F-score"] == pytest.approx(2 * (1 / 3) / (1 / 3 + 1))

    def test_more_clusters_than_classes(self):
        truth = np.array([1, 1, 2, 2])
        m = clustering_metrics(np.array([0, 1, 2, 3]), truth)
        assert m["ACC"] == 0.5 and m["Purity"] == 1.0

    def test_match_clusters(self):
        assert match_clusters([1, 1, 2], [5, 5, 9]) == {5: 1, 9: 2}

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(5, 80))
    def test_relabeling_invariance(self, seed, k, n):
        rng = np.random.default_rng(seed)
        truth = rng.integers(1, 5, n)
        pred = rng.integers(0, k, n)
        perm = rng.permutation(k) + 100
        a = clustering_metrics(pred, truth)
        b = clustering_metrics(perm[pred], truth)
        for key in ("ACC", "Kappa", "NMI", "Purity", "ARI", "F-score"):
            assert a[key] == pytest.approx(b[key], abs=1e-12)


def test_format_table():
    text = format_table({"OA": 0.9, "AA": 0.8, "Kappa": 0.7, "per_class": [1.0]}, "demo")
    assert "OA" in text and "0.9" in text
