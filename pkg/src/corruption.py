"""
On-the-fly synthetic corruption for the healing task

Each clean image may receive up to K rectangular defects of three kinds:
constant occlusion, additive Gaussian noise, or a blend with the same
region of another image in the minibatch. Targets are never touched.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .schemas import CorruptionConfig


class RegionKind(str, Enum):
    OCCLUSION = "occlusion"
    NOISE = "noise"
    FOREIGN = "foreign"


@dataclass(frozen=True)
class RegionSpec:
    """Sampled geometry and kind-parameters of one corrupted rectangle"""
    x: int
    y: int
    w: int
    h: int
    kind: RegionKind
    fill: float = 0.0
    sigma: float = 0.0
    donor: int = -1
    alpha: float = 0.0

    def __post_init__(self):
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0:
            raise ValueError(f"Degenerate region {self}")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


def _side_length(rng: np.random.Generator, fraction_range: tuple[float, float], side: int) -> int:
    low, high = fraction_range
    return int(min(side, max(1, round(rng.uniform(low * side, high * side)))))


def sample_regions(rng: np.random.Generator, cfg: CorruptionConfig, height: int, width: int,
                   n_donors: int = 0) -> list[RegionSpec]:
    """
    Draws the corruption plan for one image

    Args:
        rng: Random stream owned by this image
        cfg: Corruption parameters
        height, width: Image size in pixels
        n_donors: Number of other images available as foreign-patch donors;
            with none, the foreign kind falls back to a noise patch

    Returns:
        Empty list with probability 1 - cfg.probability, else 1..max_regions regions
    """
    if rng.random() >= cfg.probability:
        return []

    regions = []
    k = int(rng.integers(1, cfg.max_regions + 1))
    kinds = list(RegionKind)
    for _ in range(k):
        w = _side_length(rng, cfg.side_fraction_range, width)
        h = _side_length(rng, cfg.side_fraction_range, height)
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        kind = kinds[int(rng.integers(0, len(kinds)))]

        if kind is RegionKind.OCCLUSION:
            region = RegionSpec(x, y, w, h, kind, fill=float(rng.uniform(*cfg.fill_intensity_range)))
        elif kind is RegionKind.FOREIGN and n_donors > 0:
            region = RegionSpec(x, y, w, h, kind, donor=int(rng.integers(0, n_donors)),
                                alpha=float(rng.uniform(*cfg.blend_alpha_range)))
        else:
            region = RegionSpec(x, y, w, h, RegionKind.NOISE, sigma=cfg.noise_sigma)
        regions.append(region)
    return regions


def apply_occlusion(img: np.ndarray, region: RegionSpec, fill: float) -> np.ndarray:
    """Overwrites the region with a constant intensity on all channels"""
    out = img.copy()
    rows, cols = region.slices()
    out[:, rows, cols] = fill
    return out


def apply_noise_patch(img: np.ndarray, region: RegionSpec, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Adds i.i.d. Gaussian noise inside the region, clipped to [0, 1]"""
    out = img.copy()
    rows, cols = region.slices()
    patch = out[:, rows, cols]
    noise = rng.normal(0.0, sigma, size=patch.shape)
    out[:, rows, cols] = np.clip(patch + noise, 0.0, 1.0)
    return out


def apply_foreign_patch(img: np.ndarray, donor: np.ndarray, region: RegionSpec, alpha: float) -> np.ndarray:
    """Convex blend of the donor's pixels at the same coordinates into the region"""
    out = img.copy()
    rows, cols = region.slices()
    out[:, rows, cols] = (1.0 - alpha) * img[:, rows, cols] + alpha * donor[:, rows, cols]
    return out


def image_streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent per-image streams derived from one parent stream"""
    seeds = rng.integers(0, 2**63, size=n)
    return [np.random.default_rng(int(s)) for s in seeds]


def corrupt_batch(batch: Union[np.ndarray, Sequence[np.ndarray]], cfg: CorruptionConfig,
                  rng: Union[np.random.Generator, Sequence[np.random.Generator]]
                  ) -> tuple[np.ndarray, np.ndarray]:
    """
    Corrupts a minibatch for the healing task

    Args:
        batch: (N, C, H, W) clean images; left unmodified
        cfg: Corruption parameters
        rng: One stream for the batch, or one stream per image

    Returns:
        (corrupted batch, (N, H, W) uint8 union masks of corrupted regions)
    """
    clean = np.asarray(batch)
    n, _, height, width = clean.shape
    streams = image_streams(rng, n) if isinstance(rng, np.random.Generator) else list(rng)
    if len(streams) != n:
        raise ValueError(f"Expected {n} random streams, got {len(streams)}")

    corrupted = clean.copy()
    masks = np.zeros((n, height, width), dtype=np.uint8)
    for i, stream in enumerate(streams):
        regions = sample_regions(stream, cfg, height, width, n_donors=n - 1)
        img = corrupted[i]
        for region in regions:
            if region.kind is RegionKind.OCCLUSION:
                img = apply_occlusion(img, region, region.fill)
            elif region.kind is RegionKind.NOISE:
                img = apply_noise_patch(img, region, region.sigma, stream)
            else:
                donor_index = region.donor if region.donor < i else region.donor + 1
                img = apply_foreign_patch(img, clean[donor_index], region, region.alpha)
            rows, cols = region.slices()
            masks[i, rows, cols] = 1
        corrupted[i] = img
    return corrupted, masks


def corrupted_fraction(masks: np.ndarray) -> float:
    """Mean fraction of pixels covered by corruption masks"""
    return float(masks.reshape(masks.shape[0], -1).mean())
