"""
Tests for ROC/AP, PRO and throughput against brute-force oracles
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid

from src.errors import UndefinedMetricError
from src.metrics import (
    ProCurve,
    ScoredSet,
    average_precision,
    connected_components,
    pixel_metrics,
    pro_auc,
    pro_curve,
    roc_auc,
    roc_curve,
    throughput,
)
from src.scoring import AnomalyMap


def _pair_oracle(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def _prefix_oracle(scores, labels):
    n_pos = sum(labels)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        predicted = [l for s, l in zip(scores, labels) if s >= t]
        tp = sum(predicted)
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / len(predicted)
        prev_recall = recall
    return ap


def _random_set(rng):
    n = int(rng.integers(2, 65))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    # coarse grid so ties occur
    scores = rng.integers(0, 10, size=n) / 10.0
    return scores, labels


class TestROCAUC:

    def test_worked_example(self):
        assert roc_auc(ScoredSet.of([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])) == pytest.approx(0.75, abs=1e-15)

    def test_perfect_separation(self):
        assert roc_auc(ScoredSet.of([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == 1.0

    def test_all_ties(self):
        assert roc_auc(ScoredSet.of([0.5] * 6, [0, 1, 0, 1, 1, 0])) == 0.5

    def test_single_class_is_undefined(self):
        with pytest.raises(UndefinedMetricError) as exc:
            roc_auc(ScoredSet.of([0.1, 0.2], [1, 1]))
        assert exc.value.error_code == "single_class"

    def test_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            scores, labels = _random_set(rng)
            assert abs(roc_auc(ScoredSet.of(scores, labels)) - _pair_oracle(scores, labels)) < 1e-12

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            ScoredSet.of([0.1, 0.2], [1])

    def test_curve_endpoints(self, rng):
        curve = roc_curve(ScoredSet.of(rng.random(20), [0, 1] * 10))
        assert curve.fprs[0] == 0.0 and curve.values[0] == 0.0
        assert curve.fprs[-1] == 1.0 and curve.values[-1] == 1.0
        assert np.all(np.diff(curve.fprs) >= 0) and np.all(np.diff(curve.values) >= 0)


class TestAveragePrecision:

    def test_perfect_ranking(self):
        assert average_precision(ScoredSet.of([0.9, 0.8, 0.1], [1, 1, 0])) == 1.0

    def test_positive_ranked_last(self):
        assert average_precision(ScoredSet.of([0.2, 0.9], [1, 0])) == pytest.approx(0.5, abs=1e-15)

    def test_no_positives(self):
        with pytest.raises(UndefinedMetricError):
            average_precision(ScoredSet.of([0.2, 0.9], [0, 0]))

    def test_prefix_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            scores, labels = _random_set(rng)
            ap = average_precision(ScoredSet.of(scores, labels))
            assert abs(ap - _prefix_oracle(list(scores), list(labels))) < 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        scores, labels = _random_set(rng)
        perm = rng.permutation(len(scores))
        assert average_precision(ScoredSet.of(scores, labels)) == average_precision(
            ScoredSet.of(scores[perm], labels[perm]))


class TestPixelMetrics:

    def test_maps_equal_masks(self, rng):
        masks = [(rng.random((8, 8)) > 0.7).astype(np.uint8) for _ in range(3)]
        masks[0][0, 0], masks[1][0, 0] = 1, 0
        px_auc, px_ap = pixel_metrics([AnomalyMap(m.astype(float)) for m in masks], masks)
        assert px_auc == 1.0 and px_ap == 1.0

    def test_constant_maps(self):
        masks = [np.eye(4, dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8)]
        px_auc, _ = pixel_metrics([AnomalyMap(np.full((4, 4), 0.3))] * 2, masks)
        assert px_auc == 0.5

    def test_flattened_oracle(self, rng):
        maps = [AnomalyMap(rng.random((4, 4))) for _ in range(2)]
        masks = [(rng.random((4, 4)) > 0.5).astype(np.uint8) for _ in range(2)]
        masks[0][0, 0], masks[0][0, 1] = 1, 0
        scores = [float(v) for m in maps for v in m.values.ravel()]
        labels = [int(v) for k in masks for v in k.ravel()]
        px_auc, px_ap = pixel_metrics(maps, masks)
        assert abs(px_auc - _pair_oracle(scores, labels)) < 1e-12
        assert abs(px_ap - _prefix_oracle(scores, labels)) < 1e-12

    def test_empty_split(self):
        with pytest.raises(UndefinedMetricError) as exc:
            pixel_metrics([], [])
        assert exc.value.error_code == "empty_split"


class TestConnectedComponents:

    def test_empty(self):
        assert connected_components(np.zeros((5, 5))) == []

    def test_single_pixel(self):
        mask = np.zeros((5, 5))
        mask[2, 3] = 1
        comps = connected_components(mask)
        assert len(comps) == 1 and comps[0].tolist() == [13]

    def test_diagonal_touch_is_one_component(self):
        mask = np.zeros((4, 4))
        mask[1, 1] = mask[2, 2] = 1
        assert len(connected_components(mask)) == 1

    def test_scanline_order(self):
        mask = np.zeros((6, 6))
        mask[4, 0] = 1
        mask[0, 5] = 1
        mask[2, 2:4] = 1
        firsts = [int(c[0]) for c in connected_components(mask)]
        assert firsts == [5, 14, 24]


def _flood_components(mask):
    h, w = mask.shape
    seen, comps = set(), []
    for i in range(h):
        for j in range(w):
            if mask[i, j] and (i, j) not in seen:
                stack, comp = [(i, j)], set()
                seen.add((i, j))
                while stack:
                    y, x = stack.pop()
                    comp.add((y, x))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and (ny, nx) not in seen:
                                seen.add((ny, nx))
                                stack.append((ny, nx))
                comps.append(comp)
    return comps


def _set_oracle(values, mask, t):
    """Per-threshold FPR and PRO by explicit pixel sets on one image"""
    h, w = mask.shape
    predicted = {(i, j) for i in range(h) for j in range(w) if values[i, j] >= t}
    normal = {(i, j) for i in range(h) for j in range(w) if mask[i, j] == 0}
    fpr = len(predicted & normal) / len(normal)
    overlaps = []
    for pixels in _flood_components(mask):
        overlaps.append(len(pixels & predicted) / len(pixels))
    return fpr, sum(overlaps) / len(overlaps)


class TestProCurve:

    def _case(self, rng):
        values = rng.random((8, 8))
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[1:3, 1:4] = 1
        mask[5:7, 6] = 1
        return values, mask

    def test_endpoints(self, rng):
        values, mask = self._case(rng)
        low = pro_curve([AnomalyMap(values)], [mask], thresholds=np.array([0.0]))
        assert low.fprs[0] == 1.0 and low.pros[0] == 1.0
        high = pro_curve([AnomalyMap(values)], [mask], thresholds=np.array([1.5]))
        assert high.fprs[0] == 0.0 and high.pros[0] == 0.0

    def test_set_arithmetic_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            values = np.round(rng.random((8, 8)), 2)
            mask = (rng.random((8, 8)) > 0.75).astype(np.uint8)
            mask[0, 0], mask[7, 7] = 1, 0
            curve = pro_curve([AnomalyMap(values)], [mask], n_thresholds=21)
            for t, fpr, pro in zip(curve.thresholds, curve.fprs, curve.pros):
                oracle_fpr, oracle_pro = _set_oracle(values, mask, t)
                assert abs(fpr - oracle_fpr) < 1e-12 and abs(pro - oracle_pro) < 1e-12

    def test_monotone_in_threshold(self, rng):
        values, mask = self._case(rng)
        curve = pro_curve([AnomalyMap(values)], [mask])
        assert np.all(np.diff(curve.thresholds) < 0)
        assert np.all(np.diff(curve.fprs) >= 0) and np.all(np.diff(curve.pros) >= 0)

    def test_no_components(self, rng):
        with pytest.raises(UndefinedMetricError) as exc:
            pro_curve([AnomalyMap(rng.random((4, 4)))], [np.zeros((4, 4))])
        assert exc.value.error_code == "no_components"

    def test_components_pooled_across_images(self):
        values = [np.zeros((4, 4)), np.zeros((4, 4))]
        masks = [np.zeros((4, 4), dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8)]
        masks[0][0, 0] = 1
        masks[1][3, 3] = 1
        masks[1][0:2, 0:2] = 1
        values[0][0, 0] = 1.0
        curve = pro_curve([AnomalyMap(v) for v in values], masks, thresholds=np.array([0.5]))
        assert curve.pros[0] == pytest.approx(1 / 3, abs=1e-15)
        assert curve.fprs[0] == 0.0


class TestProAUC:

    def test_diagonal(self):
        grid = np.linspace(0.0, 1.0, 101)
        curve = ProCurve(fprs=grid, pros=grid, thresholds=grid[::-1])
        assert pro_auc(curve, 0.3) == pytest.approx(0.15, abs=1e-12)

    def test_constant_one(self):
        grid = np.linspace(0.0, 1.0, 11)
        assert pro_auc(ProCurve(grid, np.ones_like(grid), grid[::-1])) == pytest.approx(1.0, abs=1e-12)

    def test_constant_zero_below_cut(self):
        grid = np.linspace(0.0, 1.0, 11)
        pros = np.where(grid < 0.35, 0.0, 1.0)
        assert pro_auc(ProCurve(grid, pros, grid[::-1]), 0.3) == 0.0

    def test_short_curve_is_extended_with_warning(self):
        warnings = []
        curve = ProCurve(np.array([0.0, 0.1]), np.array([0.5, 0.5]), np.array([1.0, 0.5]))
        assert pro_auc(curve, 0.3, warnings=warnings) == pytest.approx(0.5, abs=1e-12)
        assert len(warnings) == 1

    def test_invalid_max_fpr(self):
        grid = np.linspace(0.0, 1.0, 3)
        with pytest.raises(ValueError):
            pro_auc(ProCurve(grid, grid, grid[::-1]), 0.0)

    def test_single_full_component_matches_roc_area(self, rng):
        values = rng.random((6, 6))
        mask = np.zeros((6, 6), dtype=np.uint8)
        mask[1:4, 1:4] = 1
        thresholds = np.r_[np.inf, np.unique(values)[::-1]]
        curve = pro_curve([AnomalyMap(values)], [mask], thresholds=thresholds)
        roc = roc_curve(ScoredSet.of(values, mask))
        assert pro_auc(curve, 1.0) == pytest.approx(trapezoid(roc.values, roc.fprs), abs=1e-12)


class TestRankInvariance:

    def test_cubed_scores(self, rng):
        values = [rng.random((8, 8)) for _ in range(3)]
        masks = [(rng.random((8, 8)) > 0.7).astype(np.uint8) for _ in range(3)]
        masks[0][0, 0], masks[0][0, 1] = 1, 0
        cubed = [v ** 3 for v in values]
        img_scores = [v.max() for v in values]
        labels = [0, 1, 1]
        assert roc_auc(ScoredSet.of(img_scores, labels)) == roc_auc(ScoredSet.of(np.power(img_scores, 3), labels))
        assert pixel_metrics([AnomalyMap(v) for v in values], masks) == pixel_metrics(
            [AnomalyMap(v) for v in cubed], masks)
        thresholds = np.linspace(0.0, 1.0, 50)
        plain = pro_curve([AnomalyMap(v) for v in values], masks, thresholds=thresholds)
        mapped = pro_curve([AnomalyMap(v) for v in cubed], masks, thresholds=thresholds ** 3)
        assert np.array_equal(plain.fprs, mapped.fprs) and np.array_equal(plain.pros, mapped.pros)


class TestThroughput:

    def test_positive(self, synthetic_index, tiny_params):
        assert throughput(tiny_params, synthetic_index, batch_size=4) > 0.0

    def test_empty_split(self, synthetic_index, tiny_params):
        with pytest.raises(UndefinedMetricError):
            throughput(tiny_params, synthetic_index, images=np.zeros((0, 3, 32, 32)))

    def test_doubling_split_keeps_rate(self, synthetic_index, tiny_params, rng):
        images = rng.random((48, 3, 32, 32))
        doubled = np.concatenate([images, images])
        # best of five runs each
        single = max(throughput(tiny_params, synthetic_index, batch_size=8, images=images) for _ in range(5))
        double = max(throughput(tiny_params, synthetic_index, batch_size=8, images=doubled) for _ in range(5))
        assert abs(double - single) / single < 0.2
