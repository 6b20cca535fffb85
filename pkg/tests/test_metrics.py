import json
import math

import numpy as np
import pytest

from hiergi.metrics import (
    ConfusionMatrix,
    classification_report,
    dataset_seg_report,
    f1_micro,
    mcc,
    seg_scores,
)


def binary_mcc_oracle(cm):
    [[tn, fp], [fn, tp]] = np.asarray(cm, dtype=float)
    num = tp * tn - fp * fn
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return num / den if den else 0.0


def test_perfect_prediction_mcc_one():
    cm = ConfusionMatrix(np.diag([3, 5, 2]))
    assert mcc(cm) == pytest.approx(1.0, abs=1e-12)


def test_binary_closed_form():
    cm = ConfusionMatrix([[2, 1], [0, 3]])
    assert mcc(cm) == pytest.approx(6 / math.sqrt(72), abs=1e-9)
    assert mcc(cm) == pytest.approx(binary_mcc_oracle([[2, 1], [0, 3]]), abs=1e-12)


def test_binary_agrees_with_closed_form_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        cm = rng.integers(0, 20, size=(2, 2))
        if cm.sum() == 0:
            continue
        assert mcc(ConfusionMatrix(cm)) == pytest.approx(
            binary_mcc_oracle(cm), abs=1e-12)


def test_degenerate_predictor_is_zero():
    cm = ConfusionMatrix([[3, 0], [5, 0]])  # everything predicted as class 0
    assert mcc(cm) == 0.0
    report = classification_report([0, 0, 0, 1, 1, 1, 1, 1],
                                   [0] * 8, n_class=2)
    assert report.mcc == 0.0
    assert report.degenerate


def test_class_proportional_predictor_expected_mcc_zero():
    # expected confusion matrix of a predictor matching class proportions
    t = np.array([10, 30, 60])
    cm = np.outer(t, t) // t.sum()  # exact integer expected counts
    assert mcc(ConfusionMatrix(cm)) == pytest.approx(0.0, abs=1e-12)


def test_mcc_permutation_invariance():
    rng = np.random.default_rng(1)
    y_true = rng.integers(0, 5, size=200)
    y_pred = rng.integers(0, 5, size=200)
    perm = rng.permutation(5)
    a = classification_report(y_true, y_pred, 5)
    b = classification_report(perm[y_true], perm[y_pred], 5)
    assert a.mcc == pytest.approx(b.mcc, abs=1e-12)
    assert a.f1_micro == pytest.approx(b.f1_micro, abs=1e-12)


def test_f1_micro_perfect():
    assert f1_micro(ConfusionMatrix(np.diag([4, 4, 2]))) == 1.0


def test_f1_micro_is_accuracy():
    cm = ConfusionMatrix([[3, 1, 0], [1, 2, 1], [0, 0, 2]])
    assert f1_micro(cm) == pytest.approx(0.7, abs=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(100):
        y_true = rng.integers(0, 7, size=150)
        y_pred = rng.integers(0, 7, size=150)
        got = f1_micro(ConfusionMatrix.from_predictions(y_true, y_pred, 7))
        assert got == pytest.approx(np.mean(y_true == y_pred), abs=1e-12)


# --- segmentation scores ---

def test_identical_masks_all_ones():
    m = np.zeros((8, 8), dtype=np.uint8)
    m[2:5, 3:6] = 1
    assert seg_scores(m, m) == (1.0, 1.0, 1.0, 1.0)


def test_pixel_counting_example():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, :4] = 1  # area 4
    pred = np.zeros((4, 4), dtype=np.uint8)
    pred[0, 2:4] = 1
    pred[1, 0] = 1  # area 3, overlap 2
    j, f1, p, r = seg_scores(pred, gt)
    assert j == pytest.approx(0.4)
    assert f1 == pytest.approx(4 / 7)
    assert p == pytest.approx(2 / 3)
    assert r == pytest.approx(0.5)


def test_disjoint_masks_all_zero():
    a = np.zeros((5, 5), dtype=np.uint8)
    b = np.zeros((5, 5), dtype=np.uint8)
    a[0, 0] = 1
    b[4, 4] = 1
    assert seg_scores(a, b) == (0.0, 0.0, 0.0, 0.0)


def test_empty_empty_convention():
    z = np.zeros((6, 6), dtype=np.uint8)
    assert seg_scores(z, z) == (1.0, 1.0, 1.0, 1.0)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        seg_scores(np.zeros((3, 3)), np.zeros((3, 4)))


def test_f1_jaccard_relation_random_masks():
    rng = np.random.default_rng(3)
    for _ in range(100):
        pred = (rng.random((16, 16)) > 0.5).astype(np.uint8)
        gt = (rng.random((16, 16)) > 0.5).astype(np.uint8)
        j, f1, _, _ = seg_scores(pred, gt)
        assert f1 == pytest.approx(2 * j / (1 + j), abs=1e-12)


def test_report_mean_of_two():
    m = np.ones((4, 4), dtype=np.uint8)
    z = np.zeros((4, 4), dtype=np.uint8)
    # image 1: perfect (Dice 1), image 2: disjoint-ish (pred full, gt empty -> 0)
    report = dataset_seg_report([(m, m), (m, z)])
    assert report.f1 == pytest.approx(0.5)
    assert report.aggregation == "per-image-mean"


def test_report_single_image_equals_seg_scores():
    rng = np.random.default_rng(4)
    pred = (rng.random((10, 10)) > 0.4).astype(np.uint8)
    gt = (rng.random((10, 10)) > 0.6).astype(np.uint8)
    report = dataset_seg_report([(pred, gt)])
    j, f1, p, r = seg_scores(pred, gt)
    assert (report.jaccard, report.f1, report.precision, report.recall) == (j, f1, p, r)


def test_report_matches_loop_oracle():
    rng = np.random.default_rng(5)
    pairs = [((rng.random((12, 12)) > 0.5).astype(np.uint8),
              (rng.random((12, 12)) > 0.5).astype(np.uint8)) for _ in range(10)]
    report = dataset_seg_report(pairs)
    means = np.mean([seg_scores(p, g) for p, g in pairs], axis=0)
    assert report.jaccard == pytest.approx(means[0], abs=1e-12)
    assert report.f1 == pytest.approx(means[1], abs=1e-12)
    assert report.precision == pytest.approx(means[2], abs=1e-12)
    assert report.recall == pytest.approx(means[3], abs=1e-12)


def test_pooled_aggregation_mode():
    a = np.zeros((4, 4), dtype=np.uint8)
    a[0] = 1
    report = dataset_seg_report([(a, a), (a, np.zeros_like(a))],
                                aggregation="pooled")
    # pooled: tp=4, fp=4, fn=0
    assert report.jaccard == pytest.approx(0.5)
    assert report.aggregation == "pooled"


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        dataset_seg_report([])


def test_report_json_keys():
    m = np.ones((2, 2), dtype=np.uint8)
    doc = json.loads(dataset_seg_report([(m, m)]).to_json())
    for key in ("jaccard", "f1", "precision", "recall", "n_samples", "aggregation"):
        assert key in doc
