import math
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

SCHEMA_VERSION = 1
SUPPORTED_SCALES = (2, 4)


def _parse_inf(value):
    if isinstance(value, str) and value.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return value


def _dump_inf(value: float):
    return "inf" if math.isinf(value) and value > 0 else value


def _check_scale(value: int) -> int:
    if value not in SUPPORTED_SCALES:
        raise ValueError(f"scale must be one of {SUPPORTED_SCALES}, got {value}")
    return value


class StrictModel(BaseModel):
    """Base for every schema: unknown fields are rejected"""
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Degradation
# ---------------------------------------------------------------------------

class DegradationConfig(StrictModel):
    """Distribution the per-image degradation parameters are drawn from"""
    kernel_size_choices: List[int] = Field(default_factory=lambda: [1, 3, 5, 7, 9, 11])
    apply_prob_choices: List[float] = Field(
        default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 11)]
    )
    gaussian_sigma_range: Tuple[float, float] = (0.2, 3.0)
    poisson_peak_range: Tuple[float, float] = (30.0, 300.0)
    motion_angle_range: Tuple[float, float] = (0.0, math.pi)
    jpeg_quality: int = Field(default=30, ge=1, le=100)
    scale: int = 4

    @field_validator("kernel_size_choices")
    @classmethod
    def _odd_sizes(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("kernel_size_choices must not be empty")
        for size in value:
            if size < 1 or size % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and >= 1, got {size}")
        return value

    @field_validator("apply_prob_choices")
    @classmethod
    def _probabilities(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("apply_prob_choices must not be empty")
        for p in value:
            # 0.0 is accepted so a stage can be disabled outright
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"apply probabilities must lie in [0, 1], got {p}")
        return value

    @field_validator("gaussian_sigma_range", "poisson_peak_range")
    @classmethod
    def _positive_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if lo <= 0 or hi < lo:
            raise ValueError(f"range must satisfy 0 < lo <= hi, got {value}")
        return value

    @field_validator("motion_angle_range")
    @classmethod
    def _angle_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if lo < 0 or hi < lo or hi > math.pi:
            raise ValueError(f"angle range must lie within [0, pi], got {value}")
        return value

    @field_validator("scale")
    @classmethod
    def _scale(cls, value: int) -> int:
        return _check_scale(value)


class GaussianParams(StrictModel):
    apply: bool
    size: int
    sigma: float


class PoissonParams(StrictModel):
    apply: bool
    peak: float


class MotionParams(StrictModel):
    apply: bool
    length: int
    angle: float


class DegradationParams(StrictModel):
    """One sampled realization; replaying it on the HR image reproduces the LR image"""
    gaussian: GaussianParams
    poisson: PoissonParams
    motion: MotionParams
    jpeg_quality: int = Field(ge=1, le=100)
    scale: int
    seed: int = Field(ge=0, lt=2 ** 64)


class SplitProfile(StrictModel):
    """Named restriction of the degradation domain (MURA-SR / mini / plus style)"""
    name: str
    kernel_size_choices: List[int]
    jpeg_quality: int = Field(ge=1, le=100)
    scale: int = 4

    def apply(self, base: Optional[DegradationConfig] = None) -> DegradationConfig:
        """Merge the profile over a base configuration"""
        base = base or DegradationConfig()
        return base.model_copy(update={
            "kernel_size_choices": list(self.kernel_size_choices),
            "jpeg_quality": self.jpeg_quality,
            "scale": self.scale,
        })


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

class DenoiserSpec(StrictModel):
    n_rca_blocks: int = Field(default=16, ge=1)
    channels: int = Field(default=16, ge=1)
    attention_mode: Literal["spatial_eq4", "channel_se"] = "spatial_eq4"
    block_type: Literal["rca", "dncnn"] = "rca"
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)


class SRSpec(StrictModel):
    n_res_blocks: int = Field(default=4, ge=1)
    channels: int = Field(default=16, ge=1)
    scale: int = 4

    @field_validator("scale")
    @classmethod
    def _scale(cls, value: int) -> int:
        return _check_scale(value)


class DiscriminatorSpec(StrictModel):
    n_layers: int = Field(default=4, ge=1)
    base_channels: int = Field(default=16, ge=1)


class ModelSpec(StrictModel):
    """Architecture description for the denoiser, SR net and discriminator"""
    denoiser: DenoiserSpec = Field(default_factory=DenoiserSpec)
    sr: SRSpec = Field(default_factory=SRSpec)
    discriminator: DiscriminatorSpec = Field(default_factory=DiscriminatorSpec)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class LossWeights(StrictModel):
    w_l1: float = Field(default=1.0, ge=0.0)
    w_ssim: float = Field(default=1.0, ge=0.0)


class AdversarialConfig(StrictModel):
    enabled: bool = False
    weight: float = Field(default=1e-3, ge=0.0)
    d_lr: float = Field(default=1e-4, ge=0.0)


class TrainConfig(StrictModel):
    """Hyperparameters of the separate-then-joint schedule"""
    patch_size: int = Field(default=96, ge=1)
    batch_size: int = Field(default=8, ge=1)
    steps_separate: int = Field(default=2000, ge=0)
    steps_joint: int = Field(default=2000, ge=0)
    lr_denoise: float = Field(default=1e-4, ge=0.0)
    lr_sr: float = Field(default=1e-4, ge=0.0)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    adversarial: AdversarialConfig = Field(default_factory=AdversarialConfig)
    degradation: DegradationConfig = Field(default_factory=DegradationConfig)
    seed: int = Field(default=0, ge=0)
    eval_every: int = Field(default=200, ge=0)
    pregenerated: bool = False
    pregenerated_count: int = Field(default=256, ge=1)
    dtype: Literal["float64", "float32"] = "float64"

    @model_validator(mode="after")
    def _patch_fits_scale(self):
        scale = self.degradation.scale
        if self.patch_size % scale != 0:
            raise ValueError(f"patch_size {self.patch_size} is not divisible by scale {scale}")
        if self.patch_size // scale < 11:
            raise ValueError("LR patches must be at least 11 pixels for the SSIM loss")
        return self


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class ImageScore(StrictModel):
    id: str
    psnr_db: float
    ssim: float

    @field_validator("psnr_db", mode="before")
    @classmethod
    def _parse_psnr(cls, value):
        return _parse_inf(value)

    @field_serializer("psnr_db")
    def _dump_psnr(self, value: float):
        return _dump_inf(value)


class MetricsReport(StrictModel):
    """Per-image PSNR/SSIM plus arithmetic means; +inf PSNR is excluded from the mean"""
    version: int = SCHEMA_VERSION
    per_image: List[ImageScore]
    mean_psnr_db: float
    mean_ssim: float
    crop_border: int = Field(ge=0)
    infinite_psnr_count: int = Field(default=0, ge=0)

    @field_validator("mean_psnr_db", mode="before")
    @classmethod
    def _parse_mean(cls, value):
        return _parse_inf(value)

    @field_serializer("mean_psnr_db")
    def _dump_mean(self, value: float):
        return _dump_inf(value)


class RunConfig(StrictModel):
    """Document accepted by --config: architecture plus training hyperparameters"""
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)


class EvaluationReport(StrictModel):
    """Model column and bicubic baseline column for one test set"""
    version: int = SCHEMA_VERSION
    dataset: str
    scale: int
    method: str
    model: MetricsReport
    baseline: MetricsReport


class DomainShiftReport(StrictModel):
    """Same SR model scored on clean LR inputs and on composite-degraded inputs"""
    version: int = SCHEMA_VERSION
    clean: EvaluationReport
    degraded: EvaluationReport
    psnr_gap_db: float


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class ManifestEntry(StrictModel):
    id: str
    hr_path: str
    lr_noisy_path: str
    lr_clean_path: str
    params: DegradationParams


class DatasetManifest(StrictModel):
    version: int = SCHEMA_VERSION
    profile: str
    config: DegradationConfig
    master_seed: int = Field(ge=0)
    entries: List[ManifestEntry]

    @field_validator("entries")
    @classmethod
    def _unique_ids(cls, value: List[ManifestEntry]) -> List[ManifestEntry]:
        seen = set()
        for entry in value:
            if entry.id in seen:
                raise ValueError(f"duplicate manifest id '{entry.id}'")
            seen.add(entry.id)
        return value


class Mismatch(StrictModel):
    id: str
    file: str
    reason: str
    max_abs_diff: Optional[float] = None


class VerifyReport(StrictModel):
    version: int = SCHEMA_VERSION
    manifest: str
    checked: int
    mismatches: List[Mismatch] = Field(default_factory=list)
    missing: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.missing


# ---------------------------------------------------------------------------
# Autodiff
# ---------------------------------------------------------------------------

class GradCheckReport(StrictModel):
    name: str
    max_rel_error: float
    tol: float
    per_input: Dict[str, float] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol
