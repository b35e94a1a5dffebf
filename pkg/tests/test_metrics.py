import itertools

import numpy as np
import numpy.testing as npt
import pytest

from scenesed.errors import InputError, ShapeError
from scenesed.metrics import (
    MetricReport, binarize_events, confusion_recall, event_fscores,
    scene_fscores,
)


# -- brute-force oracles ------------------------------------------------------

def oracle_event_fscores(pred, ref):
    """Cell-by-cell tally, no vectorisation."""
    n_frames, n_classes = ref.shape
    per_class = []
    tp_all = fp_all = fn_all = 0
    for m in range(n_classes):
        tp = fp = fn = 0
        for t in range(n_frames):
            p, r = pred[t][m], ref[t][m]
            if p == 1 and r == 1:
                tp += 1
            elif p == 1 and r == 0:
                fp += 1
            elif p == 0 and r == 1:
                fn += 1
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
    denom = 2 * tp_all + fp_all + fn_all
    micro = 2 * tp_all / denom if denom else 0.0
    return micro, sum(per_class) / n_classes, per_class


def oracle_scene_fscores(pred, ref, n_classes):
    tp_all = fp_all = fn_all = 0
    per_class = []
    for c in range(n_classes):
        tp = sum(1 for p, r in zip(pred, ref) if p == c and r == c)
        fp = sum(1 for p, r in zip(pred, ref) if p == c and r != c)
        fn = sum(1 for p, r in zip(pred, ref) if p != c and r == c)
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
    denom = 2 * tp_all + fp_all + fn_all
    micro = 2 * tp_all / denom if denom else 0.0
    return micro, sum(per_class) / n_classes


class TestBinarize:
    def test_boundary_is_strict(self):
        probs = np.full((3, 2), 0.5)
        npt.assert_array_equal(binarize_events(probs, 0.5), np.zeros((3, 2)))

    def test_threshold_zero_on_positive(self):
        probs = np.full((2, 2), 0.01)
        npt.assert_array_equal(binarize_events(probs, 0.0), np.ones((2, 2)))

    def test_counts_match_brute_force(self):
        rng = np.random.default_rng(0)
        probs = rng.random((20, 7))
        out = binarize_events(probs, 0.3)
        expected = sum(1 for row in probs for v in row if v > 0.3)
        assert out.sum() == expected


class TestEventFscores:
    def test_perfect_detection(self):
        ref = np.array([[1, 0], [0, 1], [1, 1]], dtype=float)
        micro, macro, per = event_fscores(ref, ref)
        assert micro == 1.0 and macro == 1.0
        npt.assert_array_equal(per, [1.0, 1.0])

    def test_total_miss_and_silent_classes(self):
        ref = np.zeros((4, 3))
        ref[:, 0] = 1
        pred = np.zeros((4, 3))
        micro, macro, per = event_fscores(pred, ref)
        assert micro == 0.0
        npt.assert_array_equal(per, [0.0, 0.0, 0.0])
        assert macro == 0.0  # silent classes contribute F = 0

    def test_handcrafted_three_class_roll(self):
        pred = np.array([[1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 0]], dtype=float)
        ref = np.array([[1, 0, 0], [0, 1, 0], [0, 1, 1], [0, 0, 1]], dtype=float)
        micro, macro, per = event_fscores(pred, ref)
        o_micro, o_macro, o_per = oracle_event_fscores(pred, ref)
        assert micro == pytest.approx(o_micro, abs=1e-12)
        assert macro == pytest.approx(o_macro, abs=1e-12)
        npt.assert_allclose(per, o_per, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            event_fscores(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_oracle_equivalence_exhaustive_small(self):
        # every (pred, ref) pair for 2 frames x 2 classes
        cells = list(itertools.product([0, 1], repeat=4))
        for p_bits, r_bits in itertools.product(cells, cells):
            pred = np.array(p_bits, dtype=float).reshape(2, 2)
            ref = np.array(r_bits, dtype=float).reshape(2, 2)
            micro, macro, per = event_fscores(pred, ref)
            o_micro, o_macro, o_per = oracle_event_fscores(pred, ref)
            assert micro == pytest.approx(o_micro, abs=1e-12)
            assert macro == pytest.approx(o_macro, abs=1e-12)
            npt.assert_allclose(per, o_per, atol=1e-12)

    def test_oracle_equivalence_random_sizes(self):
        rng = np.random.default_rng(1)
        for clips in range(1, 6):
            for frames in range(1, 5):
                for classes in range(1, 4):
                    for _ in range(5):
                        pred = (rng.random((clips * frames, classes)) < 0.4).astype(float)
                        ref = (rng.random((clips * frames, classes)) < 0.4).astype(float)
                        micro, macro, per = event_fscores(pred, ref)
                        o = oracle_event_fscores(pred, ref)
                        assert micro == pytest.approx(o[0], abs=1e-12)
                        assert macro == pytest.approx(o[1], abs=1e-12)
                        npt.assert_allclose(per, o[2], atol=1e-12)

    def test_fp_to_tn_never_decreases_f(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pred = (rng.random((6, 3)) < 0.5).astype(float)
            ref = (rng.random((6, 3)) < 0.5).astype(float)
            fp_cells = np.argwhere((pred == 1) & (ref == 0))
            if fp_cells.size == 0:
                continue
            _, _, before = event_fscores(pred, ref)
            t, m = fp_cells[rng.integers(len(fp_cells))]
            fixed = pred.copy()
            fixed[t, m] = 0
            _, _, after = event_fscores(fixed, ref)
            assert after[m] >= before[m] - 1e-15


class TestSceneFscores:
    def test_all_correct(self):
        micro, macro = scene_fscores([0, 1, 2, 3], [0, 1, 2, 3], 4)
        assert micro == 1.0 and macro == 1.0

    def test_constant_predictor(self):
        ref = [0, 1, 2, 3, 0, 1, 2, 3]
        pred = [0] * 8
        micro, macro = scene_fscores(pred, ref, 4)
        assert micro == pytest.approx(0.25, abs=1e-12)
        assert macro == pytest.approx(0.1, abs=1e-12)  # mean(0.4, 0, 0, 0)

    def test_micro_equals_accuracy_random(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            c = int(rng.integers(2, 6))
            pred = rng.integers(0, c, n)
            ref = rng.integers(0, c, n)
            micro, _ = scene_fscores(pred, ref, c)
            accuracy = float((pred == ref).mean())
            assert micro == pytest.approx(accuracy, abs=1e-12)

    def test_oracle_equivalence_exhaustive(self):
        # all (pred, ref) assignments for up to 5 clips and up to 3 classes
        for n_classes in (1, 2, 3):
            for n_clips in range(1, 6):
                if n_classes ** n_clips > 250:  # keep the grid reasonable
                    labelings = None
                else:
                    labelings = list(itertools.product(range(n_classes),
                                                       repeat=n_clips))
                if labelings is None:
                    rng = np.random.default_rng(n_clips * 10 + n_classes)
                    pairs = [(rng.integers(0, n_classes, n_clips),
                              rng.integers(0, n_classes, n_clips))
                             for _ in range(300)]
                else:
                    pairs = itertools.product(labelings, labelings)
                for pred, ref in pairs:
                    got = scene_fscores(list(pred), list(ref), n_classes)
                    want = oracle_scene_fscores(list(pred), list(ref), n_classes)
                    assert got[0] == pytest.approx(want[0], abs=1e-12)
                    assert got[1] == pytest.approx(want[1], abs=1e-12)

    def test_empty_input(self):
        with pytest.raises(InputError):
            scene_fscores([], [], 4)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        pred = rng.integers(0, 4, 40)
        ref = rng.integers(0, 4, 40)
        base = scene_fscores(pred, ref, 4)
        order = rng.permutation(40)
        assert scene_fscores(pred[order], ref[order], 4) == base
        npt.assert_array_equal(confusion_recall(pred, ref, 4),
                               confusion_recall(pred[order], ref[order], 4))


class TestConfusionRecall:
    def test_perfect_classifier(self):
        conf = confusion_recall([0, 1, 2], [0, 1, 2], 3)
        npt.assert_array_equal(conf, 100.0 * np.eye(3))

    def test_rows_sum_to_100(self):
        rng = np.random.default_rng(5)
        pred = rng.integers(0, 4, 100)
        ref = rng.integers(0, 4, 100)
        conf = confusion_recall(pred, ref, 4)
        npt.assert_allclose(conf.sum(axis=1), 100.0, atol=1e-6)

    def test_handcrafted_two_class(self):
        ref = [0, 0, 0, 0, 1]
        pred = [0, 0, 0, 1, 1]
        conf = confusion_recall(pred, ref, 2)
        npt.assert_allclose(conf[0], [75.0, 25.0])
        npt.assert_allclose(conf[1], [0.0, 100.0])

    def test_missing_reference_class_is_nan(self):
        conf = confusion_recall([0, 0], [0, 0], 2)
        assert np.isnan(conf[1]).all()
        npt.assert_allclose(conf[0], [100.0, 0.0])


class TestMetricReport:
    def test_dict_round_trip_with_nan(self):
        report = MetricReport(0.5, 0.4, 0.3, 0.2,
                              np.array([0.1, 0.2]),
                              np.array([[100.0, 0.0], [np.nan, np.nan]]))
        back = MetricReport.from_dict(report.to_dict())
        assert back.scene_micro_f == 0.5
        npt.assert_array_equal(back.per_event_f, [0.1, 0.2])
        assert np.isnan(back.confusion[1]).all()
        npt.assert_array_equal(back.confusion[0], [100.0, 0.0])
