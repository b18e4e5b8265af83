"""
Anomaly maps from reconstruction residuals
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .autoencoder import ModelParams, forward
from .dataset import DatasetIndex, load_images, load_test_masks
from .errors import DataIntegrityError, ModelError

MAP_MAGIC = b"D3RMAP"


@dataclass(frozen=True)
class AnomalyMap:
    """Nonnegative per-pixel score field; image_score is its spatial maximum"""
    values: np.ndarray

    @property
    def image_score(self) -> float:
        return float(self.values.max())

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ScoredSample:
    anomaly_map: AnomalyMap
    label: int
    mask: np.ndarray
    reconstruction: np.ndarray


def anomaly_map(input_image: np.ndarray, recon: np.ndarray) -> AnomalyMap:
    """Per-pixel mean over channels of |input - recon|"""
    if input_image.shape != recon.shape:
        raise ModelError("shape_mismatch", f"Input {input_image.shape} and reconstruction {recon.shape} differ in shape")
    return AnomalyMap(np.abs(input_image.astype(np.float64) - recon.astype(np.float64)).mean(axis=0))


def reconstruct(params: ModelParams, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode reconstructions in chunks"""
    out = [forward(params, images[i:i + batch_size], mode="eval")[0] for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros_like(images)


def score_test_set(params: ModelParams, index: DatasetIndex, threads: int = 1, batch_size: int = 8
                   ) -> list[ScoredSample]:
    """
    Scores every (uncorrupted) test image in index order

    Returns:
        One ScoredSample per test image; label is 1 iff the defect type is not "good"
    """
    images = load_images([s.path for s in index.test_samples], index.image_side, threads=threads)
    masks = load_test_masks(index)
    recons = reconstruct(params, images, batch_size)
    return [
        ScoredSample(anomaly_map(img, rec), sample.label, mask, rec)
        for img, rec, mask, sample in zip(images, recons, masks, index.test_samples)
    ]


def normalize_maps(maps: Sequence[AnomalyMap]) -> list[AnomalyMap]:
    """Global min-max normalization to [0, 1] over all maps; constant maps become 0"""
    if not maps:
        raise ValueError("normalize_maps needs at least one map")
    low = min(float(m.values.min()) for m in maps)
    high = max(float(m.values.max()) for m in maps)
    if high == low:
        return [AnomalyMap(np.zeros_like(m.values)) for m in maps]
    span = high - low
    return [AnomalyMap((m.values - low) / span) for m in maps]


def write_map_png(amap: AnomalyMap, path: Path) -> None:
    """8-bit grayscale export of a [0, 1] map (value * 255, rounded)"""
    values = np.clip(amap.values, 0.0, 1.0)
    Image.fromarray(np.round(values * 255.0).astype(np.uint8)).save(path, format="PNG")


def write_map_raw(amap: AnomalyMap, path: Path) -> None:
    """D3RMAP grid: magic, H and W as u32 LE, then float32 LE values row-major"""
    h, w = amap.shape
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(amap.values.astype("<f4").tobytes())


def read_map_raw(path: Path) -> AnomalyMap:
    data = Path(path).read_bytes()
    header = len(MAP_MAGIC) + 8
    if len(data) < header or not data.startswith(MAP_MAGIC):
        raise DataIntegrityError("bad_map", f"{path} is not a D3RMAP file")
    h, w = struct.unpack("<II", data[len(MAP_MAGIC):header])
    if len(data) != header + 4 * h * w:
        raise DataIntegrityError("bad_map", f"{path} is truncated")
    return AnomalyMap(np.frombuffer(data, dtype="<f4", offset=header).reshape(h, w).astype(np.float64))
