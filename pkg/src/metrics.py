"""
Evaluation metrics: image/pixel ROC AUC and AP, PRO AUC, throughput
"""

import logging
import platform
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .autoencoder import ModelParams, forward
from .dataset import DatasetIndex, load_images
from .errors import UndefinedMetricError
from .scoring import AnomalyMap

logger = logging.getLogger(__name__)

DEFAULT_MAX_FPR = 0.3
EIGHT_CONNECTIVITY = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class ScoredSet:
    """Scores with binary labels"""
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.scores) != len(self.labels):
            raise ValueError(f"{len(self.scores)} scores but {len(self.labels)} labels")

    @classmethod
    def of(cls, scores, labels) -> "ScoredSet":
        return cls(np.asarray(scores, dtype=np.float64).ravel(), np.asarray(labels).ravel().astype(bool))

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(len(self.labels) - self.labels.sum())


@dataclass(frozen=True)
class Curve:
    """A threshold sweep: x and y rates at descending thresholds"""
    thresholds: np.ndarray
    fprs: np.ndarray
    values: np.ndarray  # tpr for ROC, pro for PRO


@dataclass(frozen=True)
class ProCurve:
    fprs: np.ndarray
    pros: np.ndarray
    thresholds: np.ndarray


def _require_both_classes(s: ScoredSet) -> None:
    if s.n_pos == 0 or s.n_neg == 0:
        raise UndefinedMetricError(
            "single_class",
            f"ROC AUC undefined: {s.n_pos} positives, {s.n_neg} negatives",
        )


def roc_auc(s: ScoredSet) -> float:
    """Mann-Whitney statistic via average ranks; ties count one half"""
    _require_both_classes(s)
    ranks = rankdata(s.scores, method="average")
    n_pos, n_neg = s.n_pos, s.n_neg
    rank_sum = float(ranks[s.labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _grouped_counts(s: ScoredSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative TP and FP at the end of each descending equal-score group"""
    order = np.argsort(-s.scores, kind="stable")
    scores = s.scores[order]
    labels = s.labels[order]
    group_ends = np.r_[np.flatnonzero(np.diff(scores)), len(scores) - 1]
    tp = np.cumsum(labels)[group_ends]
    fp = (group_ends + 1) - tp
    return scores[group_ends], tp, fp


def average_precision(s: ScoredSet) -> float:
    """Step-wise AP: sum over score groups of (recall increase) * precision"""
    if s.n_pos == 0:
        raise UndefinedMetricError("no_positives", "Average precision undefined without positives")
    _, tp, fp = _grouped_counts(s)
    precision = tp / (tp + fp)
    recall = tp / s.n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_curve(s: ScoredSet) -> Curve:
    """ROC points at every distinct score (descending), starting at (0, 0)"""
    _require_both_classes(s)
    thresholds, tp, fp = _grouped_counts(s)
    return Curve(
        thresholds=np.r_[np.inf, thresholds],
        fprs=np.r_[0.0, fp / s.n_neg],
        values=np.r_[0.0, tp / s.n_pos],
    )


def pixel_metrics(maps: Sequence[AnomalyMap], masks: Sequence[np.ndarray]) -> tuple[float, float]:
    """Pixel ROC AUC and AP over all pixels of all images pooled"""
    if len(maps) != len(masks):
        raise ValueError(f"{len(maps)} maps but {len(masks)} masks")
    if not maps:
        raise UndefinedMetricError("empty_split", "Pixel metrics undefined: no test images")
    scores = np.concatenate([m.values.ravel() for m in maps])
    labels = np.concatenate([np.asarray(k).ravel() for k in masks]).astype(bool)
    pooled = ScoredSet(scores.astype(np.float64), labels)
    return roc_auc(pooled), average_precision(pooled)


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """
    8-connected components of a binary mask

    Returns:
        Flat pixel indices per component, ordered by each component's
        first pixel in scanline order
    """
    labeled, count = ndimage.label(np.asarray(mask) > 0, structure=EIGHT_CONNECTIVITY)
    if count == 0:
        return []
    flat = labeled.ravel()
    pixels = np.flatnonzero(flat)
    ids = flat[pixels]
    order = np.argsort(ids, kind="stable")
    groups = np.split(pixels[order], np.cumsum(np.bincount(ids, minlength=count + 1)[1:])[:-1])
    return sorted(groups, key=lambda g: int(g[0]))


def pro_curve(maps: Sequence[AnomalyMap], masks: Sequence[np.ndarray], n_thresholds: int = 200,
              thresholds: Optional[np.ndarray] = None) -> ProCurve:
    """
    Per-region overlap against pooled FPR over a descending threshold sweep

    Args:
        maps: Maps normalized to [0, 1]
        masks: Binary ground-truth masks aligned with maps
        n_thresholds: Number of equally spaced thresholds in [0, 1]
        thresholds: Explicit thresholds instead of the uniform grid

    Returns:
        ProCurve; prediction at threshold t is map >= t
    """
    if thresholds is None:
        thresholds = np.linspace(1.0, 0.0, n_thresholds)
    thresholds = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]

    normal_values = []
    component_values = []
    for amap, mask in zip(maps, masks):
        values = amap.values.ravel()
        normal_values.append(values[np.asarray(mask).ravel() == 0])
        for comp in connected_components(mask):
            component_values.append(np.sort(values[comp]))

    if not component_values:
        raise UndefinedMetricError("no_components", "PRO undefined: no ground-truth components")
    normal = np.sort(np.concatenate(normal_values))
    if normal.size == 0:
        raise UndefinedMetricError("no_normal_pixels", "PRO undefined: no normal pixels for the FPR")

    # pooled integer counts of pixels >= t
    false_pos = normal.size - np.searchsorted(normal, thresholds, side="left")
    fprs = false_pos / normal.size
    overlap_sum = np.zeros_like(thresholds)
    for vals in component_values:
        overlap_sum += (vals.size - np.searchsorted(vals, thresholds, side="left")) / vals.size
    pros = overlap_sum / len(component_values)
    return ProCurve(fprs=fprs, pros=pros, thresholds=thresholds)


def pro_auc(curve: ProCurve, max_fpr: float = DEFAULT_MAX_FPR, warnings: Optional[list[str]] = None) -> float:
    """
    Trapezoidal area under PRO(FPR) on [0, max_fpr], divided by max_fpr

    A curve that does not start at FPR 0 gets the empty-prediction point
    (0, 0); one that stops short of max_fpr is extended with its last PRO.
    """
    if not 0.0 < max_fpr <= 1.0:
        raise ValueError(f"max_fpr must lie in (0, 1], got {max_fpr}")

    order = np.lexsort((curve.pros, curve.fprs))
    fprs = np.asarray(curve.fprs, dtype=np.float64)[order]
    pros = np.asarray(curve.pros, dtype=np.float64)[order]
    if fprs[0] > 0.0:
        fprs = np.r_[0.0, fprs]
        pros = np.r_[0.0, pros]

    if fprs[-1] < max_fpr:
        message = f"PRO curve reaches FPR {fprs[-1]:.4f} < {max_fpr}; extended with last PRO {pros[-1]:.4f}"
        logger.warning(message)
        if warnings is not None:
            warnings.append(message)
        fprs = np.r_[fprs, max_fpr]
        pros = np.r_[pros, pros[-1]]
    else:
        cut = int(np.searchsorted(fprs, max_fpr, side="right"))
        if fprs[cut - 1] < max_fpr:
            x0, x1 = fprs[cut - 1], fprs[cut]
            y0, y1 = pros[cut - 1], pros[cut]
            y_cut = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0)
            fprs = np.r_[fprs[:cut], max_fpr]
            pros = np.r_[pros[:cut], y_cut]
        else:
            fprs, pros = fprs[:cut], pros[:cut]

    return float(np.clip(trapezoid(pros, fprs) / max_fpr, 0.0, 1.0))


def throughput(params: ModelParams, index: DatasetIndex, batch_size: int = 8,
               images: Optional[np.ndarray] = None, threads: int = 1) -> float:
    """
    Test images per second of eval-mode forward passes

    Images are decoded before timing. One untimed warm-up pass over the
    whole split precedes the timed pass, so the figure is steady-state.
    """
    if images is None:
        images = load_images([s.path for s in index.test_samples], index.image_side, threads=threads)
    if len(images) == 0:
        raise UndefinedMetricError("empty_split", "Throughput needs a nonempty test split")

    def one_pass():
        for i in range(0, len(images), batch_size):
            forward(params, images[i:i + batch_size], mode="eval")

    one_pass()
    start = time.perf_counter()
    one_pass()
    elapsed = time.perf_counter() - start
    return len(images) / max(elapsed, 1e-9)


def hardware_descriptor(threads: int = 1) -> dict[str, str]:
    """Where FPS numbers were measured"""
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": str(threads),
    }
