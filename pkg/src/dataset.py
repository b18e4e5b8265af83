"""
MVTec AD layout ingestion and synthetic desk-scale datasets

Images are float arrays of shape (3, H, W) in [0, 1]; masks are uint8
arrays of shape (H, W) holding 0/1.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import ConfigurationError, DataIntegrityError

logger = logging.getLogger(__name__)

GOOD = "good"
MASK_SUFFIX = "_mask"
_SUPPORTED_MODES = {"1", "L", "P", "RGB", "RGBA", "LA"}


class TestSample(BaseModel):
    """One test image with its defect type and optional mask"""
    model_config = ConfigDict(frozen=True)
    __test__ = False

    path: Path
    defect_type: str
    mask_path: Optional[Path] = None

    @property
    def label(self) -> int:
        return int(self.defect_type != GOOD)


class DatasetIndex(BaseModel):
    """Deterministic enumeration of one category's train/test split"""
    model_config = ConfigDict(frozen=True)

    category: str
    train_samples: tuple[Path, ...]
    test_samples: tuple[TestSample, ...]
    image_side: int

    @model_validator(mode="after")
    def validate_masks(self):
        for sample in self.test_samples:
            if sample.defect_type != GOOD and sample.mask_path is None:
                raise ValueError(f"Defective test sample {sample.path} has no mask")
            if sample.defect_type == GOOD and sample.mask_path is not None:
                raise ValueError(f"Good test sample {sample.path} must not have a mask")
        return self


def _sorted_pngs(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.png"), key=lambda p: bytes(p.as_posix(), "utf-8"))


def load_mvtec_category(root: Path, category: str, image_side: int) -> DatasetIndex:
    """
    Enumerates an MVTec-layout category in lexicographic path order

    Args:
        root: Dataset root containing one directory per category
        category: Category directory name
        image_side: Side length images are resized to when loaded

    Returns:
        DatasetIndex of the category
    """
    base = Path(root) / category
    train_dir = base / "train" / GOOD
    test_dir = base / "test"
    gt_dir = base / "ground_truth"

    for required in (base, train_dir, test_dir):
        if not required.is_dir():
            raise ConfigurationError(
                "missing_directory",
                f"Missing directory: {required}",
                "Check --root/--category or run `generate` to create a synthetic category",
            )

    train_samples = _sorted_pngs(train_dir)
    if not train_samples:
        raise DataIntegrityError("empty_split", f"No training images under {train_dir}")

    test_samples: list[TestSample] = []
    defect_dirs = sorted((d for d in test_dir.iterdir() if d.is_dir()), key=lambda p: p.name.encode("utf-8"))
    for defect_dir in defect_dirs:
        defect_type = defect_dir.name
        for image_path in _sorted_pngs(defect_dir):
            mask_path = None
            if defect_type != GOOD:
                mask_path = gt_dir / defect_type / f"{image_path.stem}{MASK_SUFFIX}.png"
                if not mask_path.is_file():
                    raise DataIntegrityError(
                        "missing_mask",
                        f"No mask for {image_path} (expected {mask_path})",
                    )
            test_samples.append(TestSample(path=image_path, defect_type=defect_type, mask_path=mask_path))
    test_samples.sort(key=lambda s: s.path.as_posix().encode("utf-8"))

    logger.info("Loaded %s: %d train, %d test samples", category, len(train_samples), len(test_samples))
    return DatasetIndex(
        category=category,
        train_samples=tuple(train_samples),
        test_samples=tuple(test_samples),
        image_side=image_side,
    )


def _open_8bit(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as e:
        raise DataIntegrityError("undecodable", f"Cannot decode image {path}: {e}") from e
    if img.mode not in _SUPPORTED_MODES:
        raise DataIntegrityError(
            "unsupported_image",
            f"Unsupported image mode '{img.mode}' in {path}",
            "Only 8-bit gray or RGB PNG files are supported",
        )
    return img


def decode_and_resize(path: Path, image_side: int) -> np.ndarray:
    """
    Decodes a PNG into a (3, side, side) float32 tensor in [0, 1]

    Gray images are replicated to three channels; resizing is bilinear on
    the float intensities.
    """
    img = _open_8bit(path)
    if img.mode in ("1", "L", "LA"):
        gray = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
        channels = [gray]
    else:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        channels = [rgb[..., c] for c in range(3)]

    resized = []
    for channel in channels:
        if channel.shape != (image_side, image_side):
            channel = np.asarray(
                Image.fromarray(channel).resize((image_side, image_side), Image.Resampling.BILINEAR),
                dtype=np.float32,
            )
        resized.append(channel)
    if len(resized) == 1:
        resized = resized * 3

    return np.clip(np.stack(resized), 0.0, 1.0)


def load_mask(path: Path, image_side: int) -> np.ndarray:
    """Loads a ground-truth mask: nearest-neighbour resize, then binarize at 127"""
    img = _open_8bit(path).convert("L")
    if img.size != (image_side, image_side):
        img = img.resize((image_side, image_side), Image.Resampling.NEAREST)
    return (np.asarray(img) > 127).astype(np.uint8)


def load_images(paths: Sequence[Path], image_side: int, threads: int = 1) -> np.ndarray:
    """Decodes many images into an (N, 3, side, side) batch, in input order"""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(lambda p: decode_and_resize(p, image_side), paths))
    else:
        images = [decode_and_resize(p, image_side) for p in paths]
    return np.stack(images) if images else np.zeros((0, 3, image_side, image_side), np.float32)


def load_test_masks(index: DatasetIndex) -> list[np.ndarray]:
    """Masks for every test sample; good samples get an all-zero mask"""
    side = index.image_side
    return [
        load_mask(s.mask_path, side) if s.mask_path is not None else np.zeros((side, side), np.uint8)
        for s in index.test_samples
    ]


# ---------------------------------------------------------------------------
# Synthetic categories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grating:
    frequency: float  # cycles per image side
    angle: float
    amplitude: float


@dataclass(frozen=True)
class DefectRegion:
    """A painted defect; rasterize() gives its exact pixel footprint"""
    shape: Literal["ellipse", "rectangle"]
    x: int
    y: int
    w: int
    h: int

    def rasterize(self, side: int) -> np.ndarray:
        yy, xx = np.mgrid[0:side, 0:side]
        if self.shape == "rectangle":
            return (xx >= self.x) & (xx < self.x + self.w) & (yy >= self.y) & (yy < self.y + self.h)
        cx = self.x + (self.w - 1) / 2.0
        cy = self.y + (self.h - 1) / 2.0
        rx = max(self.w / 2.0, 0.5)
        ry = max(self.h / 2.0, 0.5)
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


class TextureModel:
    """Seeded stationary texture: 2-4 sinusoidal gratings plus low noise"""

    NOISE_SIGMA = 0.02

    def __init__(self, rng: np.random.Generator, side: int):
        self.side = side
        count = int(rng.integers(2, 5))
        self.gratings = [
            Grating(
                frequency=float(rng.uniform(2.0, 6.0)),
                angle=float(rng.uniform(0.0, np.pi)),
                amplitude=float(rng.uniform(0.05, 0.25 / count * 2)),
            )
            for _ in range(count)
        ]
        self.tint = rng.uniform(0.7, 1.0, size=3)
        self.base = float(rng.uniform(0.4, 0.6))

    def grating_field(self, phases: Sequence[float]) -> np.ndarray:
        yy, xx = np.mgrid[0:self.side, 0:self.side] / self.side
        field = np.zeros((self.side, self.side))
        for g, phase in zip(self.gratings, phases):
            proj = xx * np.cos(g.angle) + yy * np.sin(g.angle)
            field += g.amplitude * np.sin(2 * np.pi * g.frequency * proj + phase)
        return field

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        phases = rng.uniform(0, 2 * np.pi, size=len(self.gratings))
        field = self.base + self.grating_field(phases)
        img = self.tint[:, None, None] * field[None]
        img = img + rng.normal(0.0, self.NOISE_SIGMA, size=img.shape)
        return np.clip(img, 0.0, 1.0)


def synthesize_defective(rng: np.random.Generator, texture: TextureModel, kind: str
                         ) -> tuple[np.ndarray, np.ndarray, list[DefectRegion]]:
    """
    Paints 1-3 defect regions onto a fresh normal sample

    Args:
        kind: "intensity" (shift by +-[0.2, 0.5]) or "scramble" (phase-scrambled texture)

    Returns:
        (image, exact binary mask, painted regions)
    """
    side = texture.side
    img = texture.sample(rng)
    mask = np.zeros((side, side), dtype=bool)
    regions = []
    for _ in range(int(rng.integers(1, 4))):
        w = int(rng.integers(max(2, side // 10), max(3, side // 4) + 1))
        h = int(rng.integers(max(2, side // 10), max(3, side // 4) + 1))
        region = DefectRegion(
            shape="ellipse" if rng.random() < 0.5 else "rectangle",
            x=int(rng.integers(0, side - w + 1)),
            y=int(rng.integers(0, side - h + 1)),
            w=w,
            h=h,
        )
        footprint = region.rasterize(side)
        if kind == "intensity":
            shift = rng.uniform(0.2, 0.5) * (1 if rng.random() < 0.5 else -1)
            img[:, footprint] = np.clip(img[:, footprint] + shift, 0.0, 1.0)
        else:
            scrambled = texture.base + texture.grating_field(rng.uniform(0, 2 * np.pi, size=len(texture.gratings)))
            scrambled = texture.tint[:, None, None] * scrambled[None]
            img[:, footprint] = np.clip(scrambled[:, footprint], 0.0, 1.0)
        mask |= footprint
        regions.append(region)
    return img, mask.astype(np.uint8), regions


def _write_png(array: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if array.ndim == 3:
        array = np.transpose(array, (1, 2, 0))
    Image.fromarray(np.round(array * 255.0).astype(np.uint8)).save(path, format="PNG")


def generate_synthetic_category(out_root: Path, seed: int, n_train: int, n_good_test: int,
                                n_defect_test: int, image_side: int, category: str = "synthetic"
                                ) -> DatasetIndex:
    """
    Writes a fully seeded MVTec-layout category of sinusoidal textures

    Defective test images alternate between the `intensity` and `scramble`
    defect types; their masks are written exactly from the painted regions.
    """
    if image_side % 16 != 0:
        raise DataIntegrityError("bad_side", f"image_side must be a multiple of 16 (got {image_side})")

    base = Path(out_root) / category
    rng = np.random.default_rng(seed)
    texture = TextureModel(rng, image_side)

    try:
        for i in range(n_train):
            _write_png(texture.sample(rng), base / "train" / GOOD / f"{i:03d}.png")
        (base / "test" / GOOD).mkdir(parents=True, exist_ok=True)
        for i in range(n_good_test):
            _write_png(texture.sample(rng), base / "test" / GOOD / f"{i:03d}.png")
        (base / "ground_truth").mkdir(parents=True, exist_ok=True)
        for i in range(n_defect_test):
            kind = ("intensity", "scramble")[i % 2]
            img, mask, _ = synthesize_defective(rng, texture, kind)
            _write_png(img, base / "test" / kind / f"{i:03d}.png")
            _write_png(mask.astype(np.float64), base / "ground_truth" / kind / f"{i:03d}{MASK_SUFFIX}.png")
    except OSError as e:
        raise DataIntegrityError("io_error", f"Cannot write synthetic category under {base}: {e}") from e

    logger.info("Generated synthetic category %s (seed=%d) at %s", category, seed, base)
    return load_mvtec_category(out_root, category, image_side)
