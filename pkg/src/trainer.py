"""
Per-category training loop and evaluation pipeline
"""

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autoencoder import ModelParams, OptimState, adam_step, backward, forward, init_params
from .checkpoint import load_checkpoint, save_checkpoint
from .corruption import corrupt_batch
from .dataset import DatasetIndex, load_images
from .errors import TrainingError, UndefinedMetricError
from .losses import total_loss
from .metrics import (
    Curve,
    ProCurve,
    ScoredSet,
    average_precision,
    hardware_descriptor,
    pixel_metrics,
    pro_auc,
    pro_curve,
    roc_auc,
    roc_curve,
    throughput,
)
from .schemas import LossBreakdown, LossWeights, MetricsReport, TrainConfig
from .scoring import AnomalyMap, ScoredSample, normalize_maps, score_test_set

__all__ = [
    "TrainLog", "train_category", "fit", "evaluate_category", "evaluate_scored", "run_evaluation",
    "healing_examples", "save_checkpoint", "load_checkpoint",
]

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "mse", "fft", "ssim", "total")


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    loss: LossBreakdown


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    steps: int
    mean: LossBreakdown
    wall_time: float


@dataclass
class TrainLog:
    """Loss per optimizer step and per-epoch means; steps count from 1 across epochs"""
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    def record_step(self, epoch: int, step: int, loss: LossBreakdown) -> None:
        if self.steps and (epoch, step) <= (self.steps[-1].epoch, self.steps[-1].step):
            raise ValueError(f"Log keys must increase: ({epoch}, {step}) after "
                             f"({self.steps[-1].epoch}, {self.steps[-1].step})")
        self.steps.append(StepRecord(epoch, step, loss))

    def close_epoch(self, epoch: int, wall_time: float) -> EpochRecord:
        losses = [s.loss for s in self.steps if s.epoch == epoch]
        mean = LossBreakdown(**{
            k: float(np.mean([getattr(l, k) for l in losses])) if losses else 0.0
            for k in ("mse", "fft", "ssim", "total")
        })
        record = EpochRecord(epoch, len(losses), mean, wall_time)
        self.epochs.append(record)
        return record

    def totals(self) -> list[float]:
        return [s.loss.total for s in self.steps]

    def to_csv(self, path: Path, append: bool = False) -> None:
        """epoch, step, mse, fft, ssim, total; floats written with repr for exact round trip"""
        fresh = not append or not Path(path).exists()
        with open(path, "w" if fresh else "a", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            if fresh:
                writer.writerow(LOG_COLUMNS)
            for s in self.steps:
                writer.writerow([s.epoch, s.step, repr(s.loss.mse), repr(s.loss.fft), repr(s.loss.ssim), repr(s.loss.total)])

    def summary(self) -> dict:
        return {
            "epochs": len(self.epochs),
            "steps": len(self.steps),
            "final_total": self.steps[-1].loss.total if self.steps else None,
            "per_epoch": [
                {"epoch": e.epoch, "steps": e.steps, "wall_time": e.wall_time, **e.mean.model_dump()}
                for e in self.epochs
            ],
        }

    def write_summary(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded shuffle split into batches; a final batch smaller than 2 is dropped"""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def _sample_streams(seed: int, epoch: int, indices: np.ndarray) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, epoch, int(i)]) for i in indices]


def train_category(index: DatasetIndex, cfg: TrainConfig, **kwargs) -> tuple[ModelParams, TrainLog]:
    """Trains one category; see fit for the keyword arguments"""
    params, _, log = fit(index, cfg, **kwargs)
    return params, log


def fit(index: DatasetIndex, cfg: TrainConfig, *, images: Optional[np.ndarray] = None,
        resume: Optional[tuple[ModelParams, Optional[OptimState], int]] = None,
        checkpoint_dir: Optional[Path] = None, threads: int = 1,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> tuple[ModelParams, OptimState, TrainLog]:
    """
    Trains one autoencoder on the normal training images of a category

    Args:
        index: Dataset index; its train split is used
        cfg: Training recipe
        images: Preloaded (N, 3, S, S) training images, decoded from index if omitted
        resume: (params, optimizer state, epochs completed) to continue from
        checkpoint_dir: Where intermediate checkpoints go when cfg.checkpoint_every > 0
        threads: Image decoding workers
        on_epoch: Called after every epoch with its record

    Returns:
        (final params, optimizer state, training log)
    """
    if images is None:
        images = load_images(index.train_samples, cfg.image_side, threads=threads)
    n = len(images)
    if n < 2:
        raise TrainingError("train_too_small", f"Category '{index.category}' has {n} training image(s); need at least 2")

    if resume is None:
        params = init_params(cfg.seed, cfg.channels)
        state = OptimState.zeros_like(params)
        start_epoch = 0
    else:
        params, state, start_epoch = resume
        if state is None:
            state = OptimState.zeros_like(params)

    corrupting = cfg.corruption.probability > 0
    log = TrainLog()
    step = state.step
    logger.info("Training '%s' on %d images for epochs %d..%d", index.category, n, start_epoch + 1, cfg.epochs)

    for epoch in range(start_epoch, cfg.epochs):
        started = time.perf_counter()
        for batch_indices in epoch_batches(n, cfg.batch_size, cfg.seed, epoch):
            clean = images[batch_indices]
            if corrupting:
                inputs, _ = corrupt_batch(clean, cfg.corruption, _sample_streams(cfg.seed, epoch, batch_indices))
            else:
                inputs = clean

            recon, cache = forward(params, inputs, mode="train")
            breakdown, grad = total_loss(recon, clean, cfg.weights)
            if not np.isfinite(breakdown.total):
                raise TrainingError("non_finite_loss", f"Loss became {breakdown.total} at epoch {epoch + 1}, step {step + 1}")
            grads = backward(params, cache, grad)
            adam_step(params, grads, state, cfg.lr)

            step += 1
            log.record_step(epoch + 1, step, breakdown)
            logger.debug("epoch %d step %d total %.6f", epoch + 1, step, breakdown.total)

        record = log.close_epoch(epoch + 1, time.perf_counter() - started)
        logger.info(
            "Epoch %d/%d: total %.5f (mse %.5f, fft %.5f, ssim %.5f) in %.1fs",
            epoch + 1, cfg.epochs, record.mean.total, record.mean.mse, record.mean.fft, record.mean.ssim, record.wall_time,
        )
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(params, state, Path(checkpoint_dir) / f"checkpoint_epoch{epoch + 1:03d}.d3r", epoch + 1)
        if on_epoch is not None:
            on_epoch(record)

    return params, state, log


def healing_examples(params: ModelParams, images: np.ndarray, cfg: TrainConfig, count: int = 4
                     ) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(clean, corrupted, reconstruction of the corrupted input) for the first training images"""
    clean = images[:count]
    if len(clean) == 0:
        return []
    forced = cfg.corruption.model_copy(update={"probability": 1.0})
    corrupted, _ = corrupt_batch(clean, forced, _sample_streams(cfg.seed, 0, np.arange(len(clean))))
    recon, _ = forward(params, corrupted, mode="eval")
    return list(zip(clean, corrupted, recon))


@dataclass
class CategoryEvaluation:
    report: MetricsReport
    scored: list[ScoredSample]
    normalized_maps: list[AnomalyMap]
    image_roc: Optional[Curve] = None
    pro: Optional[ProCurve] = None


def evaluate_scored(scored: list[ScoredSample], category: str, method: str, n_thresholds: int = 200,
                    fps: Optional[float] = None, hardware: Optional[dict[str, str]] = None,
                    weights: Optional[LossWeights] = None) -> CategoryEvaluation:
    """
    Computes every metric from already scored samples

    Metrics undefined for this test set are left None and listed in
    report.undefined instead of failing the whole evaluation.
    """
    report = MetricsReport(category=category, method=method, fps=fps, hardware=hardware or {}, weights=weights)
    undefined: list[str] = []
    warnings: list[str] = []

    def attempt(names: tuple[str, ...], fn):
        try:
            return fn()
        except UndefinedMetricError as e:
            undefined.extend(names)
            warnings.append(f"{', '.join(names)}: {e.message}")
            logger.warning("%s/%s: %s", category, method, e.message)
            return None

    images = ScoredSet.of([s.anomaly_map.image_score for s in scored], [s.label for s in scored])
    maps = [s.anomaly_map for s in scored]
    masks = [s.mask for s in scored]

    img_auc = attempt(("img_auc",), lambda: roc_auc(images))
    img_ap = attempt(("img_ap",), lambda: average_precision(images))
    image_roc = attempt((), lambda: roc_curve(images)) if img_auc is not None else None
    pixel = attempt(("px_auc", "px_ap"), lambda: pixel_metrics(maps, masks))

    normalized = normalize_maps(maps) if maps else []
    pro = attempt(("pro_auc",), lambda: pro_curve(normalized, masks, n_thresholds))
    pro_value = pro_auc(pro, warnings=warnings) if pro is not None else None

    report = report.model_copy(update={
        "img_auc": img_auc,
        "img_ap": img_ap,
        "px_auc": pixel[0] if pixel else None,
        "px_ap": pixel[1] if pixel else None,
        "pro_auc": pro_value,
        "undefined": undefined,
        "warnings": warnings,
    })
    return CategoryEvaluation(report, scored, normalized, image_roc, pro)


def run_evaluation(params: ModelParams, index: DatasetIndex, n_thresholds: int = 200, method: str = "model",
                   weights: Optional[LossWeights] = None, threads: int = 1, batch_size: int = 8,
                   measure_fps: bool = True) -> CategoryEvaluation:
    """score_test_set, image and pixel metrics, PRO on normalized maps, then throughput"""
    scored = score_test_set(params, index, threads=threads, batch_size=batch_size)
    fps = throughput(params, index, batch_size=batch_size, threads=threads) if measure_fps and scored else None
    return evaluate_scored(
        scored, index.category, method, n_thresholds,
        fps=fps, hardware=hardware_descriptor(threads), weights=weights,
    )


def evaluate_category(params: ModelParams, index: DatasetIndex, n_thresholds: int = 200, **kwargs) -> MetricsReport:
    return run_evaluation(params, index, n_thresholds, **kwargs).report
