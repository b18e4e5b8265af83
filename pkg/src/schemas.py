"""
Validated domain records
Single source of truth for configuration invariants and method presets
"""

from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import UsageError


MVTEC_CATEGORIES = (
    "bottle", "cable", "capsule", "carpet", "grid",
    "hazelnut", "leather", "metal_nut", "pill", "screw",
    "tile", "toothbrush", "transistor", "wood", "zipper",
)


class Method(str, Enum):
    """Benchmark method presets"""
    AE_MSE = "ae-mse"
    D3R_MSE = "d3r-mse"
    D3R_FFT = "d3r-fft"
    D3R_FFT_SSIM = "d3r-fft-ssim"


def _check_range(name: str, value: tuple[float, float], lower: float, upper: float,
                 strict_lower: bool = False) -> tuple[float, float]:
    low, high = value
    if low > high:
        raise ValueError(f"{name} low ({low}) must not exceed high ({high})")
    if strict_lower and low <= lower:
        raise ValueError(f"{name} low must be > {lower} (got {low})")
    if low < lower or high > upper:
        raise ValueError(f"{name} must lie within [{lower}, {upper}] (got {value})")
    return value


def _check_side(v: int) -> int:
    if v % 16 != 0:
        raise ValueError(f"image_side must be a multiple of 16 (got {v})")
    return v


class CorruptionConfig(BaseModel):
    """
    Parameters of the synthetic healing corruption
    Defaults give patches covering 0.25%-4% of the image area each
    """
    model_config = ConfigDict(frozen=True)

    probability: float = Field(0.5, ge=0.0, le=1.0, description="Chance an image is corrupted at all")
    max_regions: int = Field(3, ge=1, description="Upper bound K of corrupted regions")
    side_fraction_range: tuple[float, float] = (0.05, 0.20)
    fill_intensity_range: tuple[float, float] = (0.0, 1.0)
    noise_sigma: float = Field(0.2, gt=0.0)
    blend_alpha_range: tuple[float, float] = (0.3, 0.9)

    @field_validator("side_fraction_range")
    @classmethod
    def validate_side_fraction(cls, v):
        return _check_range("side_fraction_range", v, 0.0, 1.0, strict_lower=True)

    @field_validator("fill_intensity_range")
    @classmethod
    def validate_fill(cls, v):
        return _check_range("fill_intensity_range", v, 0.0, 1.0)

    @field_validator("blend_alpha_range")
    @classmethod
    def validate_alpha(cls, v):
        return _check_range("blend_alpha_range", v, 0.0, 1.0)


class LossWeights(BaseModel):
    """Weights of the dual-domain objective"""
    model_config = ConfigDict(frozen=True)

    w_mse: float = Field(1.0, ge=0.0)
    w_fft: float = Field(1.0, ge=0.0)
    w_ssim: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def validate_not_all_zero(self):
        if self.w_mse == 0 and self.w_fft == 0 and self.w_ssim == 0:
            raise ValueError("At least one loss weight must be positive")
        return self


class LossBreakdown(BaseModel):
    """Component values of one loss evaluation; skipped terms are 0"""
    mse: float = 0.0
    fft: float = 0.0
    ssim: float = 0.0
    total: float = 0.0


class TrainConfig(BaseModel):
    """Per-category training recipe"""
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(50, ge=1)
    batch_size: int = Field(8, ge=2, description="Batch norm needs at least 2 samples")
    lr: float = Field(1e-3, gt=0.0)
    seed: int = Field(0, ge=0)
    weights: LossWeights = Field(default_factory=LossWeights)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    image_side: int = Field(256, ge=16)
    checkpoint_every: int = Field(0, ge=0, description="Epoch interval for intermediate checkpoints; 0 = final only")
    channels: tuple[int, ...] = (32, 64, 128, 256)

    @field_validator("image_side")
    @classmethod
    def validate_image_side(cls, v):
        return _check_side(v)

    @field_validator("channels")
    @classmethod
    def validate_channels(cls, v):
        if len(v) != 4 or any(c < 1 for c in v):
            raise ValueError("channels must list four positive encoder widths")
        return v


PRESETS: dict[Method, tuple[float, LossWeights]] = {
    Method.AE_MSE: (0.0, LossWeights(w_mse=1.0, w_fft=0.0, w_ssim=0.0)),
    Method.D3R_MSE: (0.5, LossWeights(w_mse=1.0, w_fft=0.0, w_ssim=0.0)),
    Method.D3R_FFT: (0.5, LossWeights(w_mse=1.0, w_fft=1.0, w_ssim=0.0)),
    Method.D3R_FFT_SSIM: (0.5, LossWeights(w_mse=1.0, w_fft=1.0, w_ssim=0.5)),
}


class MetricsReport(BaseModel):
    """
    Benchmark record for one (category, method) pair
    Undefined metrics stay None and are listed in `undefined`
    """
    category: str
    method: str
    img_auc: Optional[float] = Field(None, ge=0.0, le=1.0)
    img_ap: Optional[float] = Field(None, ge=0.0, le=1.0)
    px_auc: Optional[float] = Field(None, ge=0.0, le=1.0)
    px_ap: Optional[float] = Field(None, ge=0.0, le=1.0)
    pro_auc: Optional[float] = Field(None, ge=0.0, le=1.0)
    fps: Optional[float] = Field(None, gt=0.0)
    undefined: list[str] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)
    weights: Optional[LossWeights] = None
    weights_note: str = "default loss weights (published weights undisclosed)"
    hardware: dict[str, str] = Field(default_factory=dict)

    def is_complete(self) -> bool:
        """True when all six benchmark numbers are defined"""
        return not self.undefined and all(
            v is not None
            for v in (self.img_auc, self.img_ap, self.px_auc, self.px_ap, self.pro_auc, self.fps)
        )


class RunConfig(BaseModel):
    """
    Everything a CLI invocation needs
    Explicit overrides on top of a preset relabel the method as custom
    """
    root: Path = Path("data")
    categories: list[str] = Field(default_factory=lambda: ["tex-a"])
    methods: list[Method] = Field(default_factory=lambda: [Method.D3R_FFT])
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(8, ge=2)
    lr: float = Field(1e-3, gt=0.0)
    seed: int = Field(0, ge=0)
    image_side: int = Field(256, ge=16)
    checkpoint_every: int = Field(0, ge=0)
    w_mse: Optional[float] = Field(None, ge=0.0)
    w_fft: Optional[float] = Field(None, ge=0.0)
    w_ssim: Optional[float] = Field(None, ge=0.0)
    corrupt_prob: Optional[float] = Field(None, ge=0.0, le=1.0)
    max_regions: Optional[int] = Field(None, ge=1)
    n_thresholds: int = Field(200, ge=2)
    out_dir: Path = Path("runs")
    strict: bool = False
    threads: int = Field(1, ge=1)
    export_maps: bool = False
    panels: str = "none"

    @field_validator("categories")
    @classmethod
    def validate_categories(cls, v):
        if not v:
            raise ValueError("At least one category is required")
        if v == ["mvtec"]:
            return list(MVTEC_CATEGORIES)
        return v

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, v):
        if not v:
            raise ValueError("At least one method is required")
        return v

    @field_validator("image_side")
    @classmethod
    def validate_image_side(cls, v):
        return _check_side(v)

    @field_validator("panels")
    @classmethod
    def validate_panels(cls, v):
        if v in ("none", "all") or (v.isdigit() and int(v) >= 0):
            return v
        raise ValueError(f"panels must be 'none', 'all' or a count (got '{v}')")

    def train_config(self, method: Method) -> tuple[TrainConfig, str]:
        """
        Resolves a preset plus explicit overrides into a TrainConfig

        Returns:
            (TrainConfig, method label for reports)
        """
        probability, weights = PRESETS[method]
        base = CorruptionConfig(probability=probability)

        try:
            new_weights = LossWeights(
                w_mse=weights.w_mse if self.w_mse is None else self.w_mse,
                w_fft=weights.w_fft if self.w_fft is None else self.w_fft,
                w_ssim=weights.w_ssim if self.w_ssim is None else self.w_ssim,
            )
        except ValidationError as e:
            raise UsageError("invalid_config", f"Invalid loss weights for {method.value}: {e}",
                             "Give at least one of --w-mse, --w-fft, --w-ssim a positive value") from e
        corruption = base.model_copy(update={
            "probability": base.probability if self.corrupt_prob is None else self.corrupt_prob,
            "max_regions": base.max_regions if self.max_regions is None else self.max_regions,
        })

        label = method.value
        if new_weights != weights or corruption != base:
            label = (
                f"custom[mse={new_weights.w_mse:g},fft={new_weights.w_fft:g},"
                f"ssim={new_weights.w_ssim:g},p={corruption.probability:g},k={corruption.max_regions}]"
            )

        try:
            cfg = TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                seed=self.seed,
                weights=new_weights,
                corruption=corruption,
                image_side=self.image_side,
                checkpoint_every=self.checkpoint_every,
            )
        except ValidationError as e:
            raise UsageError("invalid_config", f"Invalid training settings for {method.value}: {e}") from e
        return cfg, label
