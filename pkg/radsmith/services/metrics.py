"""Full-reference quality metrics (PSNR, SSIM) on the luma channel."""
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import correlate1d

from radsmith.core.errors import ArgumentError
from radsmith.models.schemas import EvaluationReport, ImageScore, MetricsReport
from radsmith.services.imagecore import Image, to_luma

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0
C1 = (SSIM_K1 * DATA_RANGE) ** 2
C2 = (SSIM_K2 * DATA_RANGE) ** 2


def gaussian_window_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


_WINDOW = gaussian_window_1d()


def _prepare(a: Image, b: Image, crop_border: int, space: str = "luma") -> Tuple[np.ndarray, np.ndarray]:
    if (a.channels, a.height, a.width) != (b.channels, b.height, b.width):
        raise ArgumentError(
            f"image dimensions differ: {a.channels}x{a.height}x{a.width} vs {b.channels}x{b.height}x{b.width}"
        )
    if crop_border < 0 or 2 * crop_border >= min(a.height, a.width):
        raise ArgumentError(f"crop_border {crop_border} too large for {a.height}x{a.width}")
    if space == "luma":
        pa, pb = to_luma(a).data, to_luma(b).data
    elif space == "rgb":
        pa, pb = a.data, b.data
    else:
        raise ArgumentError(f"unknown color space '{space}'")
    if crop_border:
        pa = pa[:, crop_border:-crop_border, crop_border:-crop_border]
        pb = pb[:, crop_border:-crop_border, crop_border:-crop_border]
    return pa, pb


def psnr(a: Image, b: Image, crop_border: int = 0, space: str = "luma") -> float:
    """PSNR in dB with peak 1.0; identical images give +inf"""
    pa, pb = _prepare(a, b, crop_border, space)
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


def _filter_valid(plane: np.ndarray) -> np.ndarray:
    """Separable Gaussian window, keeping only positions where it fits entirely"""
    half = SSIM_WINDOW // 2
    out = correlate1d(plane, _WINDOW, axis=0, mode="nearest")
    out = correlate1d(out, _WINDOW, axis=1, mode="nearest")
    return out[half:-half, half:-half]


def ssim_map(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Single-scale SSIM map of two planes over valid window positions"""
    mu_a = _filter_valid(pa)
    mu_b = _filter_valid(pb)
    var_a = _filter_valid(pa * pa) - mu_a * mu_a
    var_b = _filter_valid(pb * pb) - mu_b * mu_b
    cov = _filter_valid(pa * pb) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a: Image, b: Image, crop_border: int = 0, space: str = "luma") -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03)"""
    pa, pb = _prepare(a, b, crop_border, space)
    if min(pa.shape[1:]) < SSIM_WINDOW:
        raise ArgumentError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels after cropping")
    maps = [ssim_map(ca, cb) for ca, cb in zip(pa, pb)]
    return float(np.mean(maps))


def evaluate_set(
    pairs: Sequence[Tuple[Image, Image]],
    crop_border: int = 0,
    ids: Optional[Sequence[str]] = None,
    space: str = "luma",
) -> MetricsReport:
    """Per-image PSNR/SSIM of (restored, reference) pairs and their means"""
    if not pairs:
        raise ArgumentError("evaluate_set needs at least one pair")
    if ids is None:
        ids = [f"{i:04d}" for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ArgumentError("ids and pairs differ in length")

    scores: List[ImageScore] = []
    for image_id, (restored, reference) in zip(ids, pairs):
        scores.append(ImageScore(
            id=str(image_id),
            psnr_db=psnr(restored, reference, crop_border, space),
            ssim=ssim(restored, reference, crop_border, space),
        ))

    finite = [s.psnr_db for s in scores if math.isfinite(s.psnr_db)]
    infinite_count = len(scores) - len(finite)
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    if infinite_count:
        logger.info("%d of %d pairs are identical (PSNR excluded from mean)", infinite_count, len(scores))
    return MetricsReport(
        per_image=scores,
        mean_psnr_db=mean_psnr,
        mean_ssim=float(np.mean([s.ssim for s in scores])),
        crop_border=crop_border,
        infinite_psnr_count=infinite_count,
    )


def per_image_frame(report: MetricsReport) -> pd.DataFrame:
    """Per-image scores as a DataFrame indexed by image id"""
    frame = pd.DataFrame([s.model_dump() for s in report.per_image])
    return frame.set_index("id") if not frame.empty else frame


def format_table(reports: Iterable[EvaluationReport], baseline_label: str = "Bic") -> pd.DataFrame:
    """Pivot evaluation reports into rows (scale, dataset, metric) x columns (method)"""
    rows = []
    for report in reports:
        for method, metrics in ((report.method, report.model), (baseline_label, report.baseline)):
            rows.append({"scale": f"x{report.scale}", "dataset": report.dataset, "metric": "PSNR",
                         "method": method, "value": metrics.mean_psnr_db})
            rows.append({"scale": f"x{report.scale}", "dataset": report.dataset, "metric": "SSIM",
                         "method": method, "value": metrics.mean_ssim})
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    table = frame.pivot_table(index=["scale", "dataset", "metric"], columns="method",
                              values="value", aggfunc="first", sort=False)
    table.columns.name = None
    return table


def render_table(table: pd.DataFrame) -> str:
    """Aligned plain-text rendering (PSNR to 2 decimals, SSIM to 4)"""
    if table.empty:
        return ""
    formatted = table.copy().astype(object)
    for idx in formatted.index:
        digits = 2 if idx[-1] == "PSNR" else 4
        formatted.loc[idx] = [f"{v:.{digits}f}" for v in table.loc[idx]]
    return formatted.to_string()
