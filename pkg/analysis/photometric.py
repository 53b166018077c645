"""
Image quality: PSNR and SSIM over [0, 1] images.
"""

import logging
import math
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field
from skimage.metrics import structural_similarity

from analysis.stats import MetricsError

logger = logging.getLogger(__name__)


def psnr(rendered: np.ndarray, reference: np.ndarray, cap: float = 99.0) -> float:
    """10 log10(1 / MSE), capped; identical images report the cap."""
    mse = float(np.mean((np.asarray(rendered, np.float64) - np.asarray(reference, np.float64)) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def ssim(rendered: np.ndarray, reference: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """
    Mean SSIM with a Gaussian window over the valid region, channels
    averaged; dynamic range 1.
    """
    x = np.asarray(rendered, np.float64)
    y = np.asarray(reference, np.float64)
    if x.shape[0] < window or x.shape[1] < window:
        raise MetricsError(f"image {x.shape[:2]} smaller than the {window}x{window} SSIM window")
    return float(structural_similarity(
        x, y, win_size=window, gaussian_weights=True, sigma=sigma, use_sample_covariance=False,
        data_range=1.0, channel_axis=-1 if x.ndim == 3 else None,
    ))


def image_metrics(rendered: np.ndarray, reference: np.ndarray, cap: float = 99.0,
                  window: int = 11, sigma: float = 1.5) -> Tuple[float, float]:
    """(PSNR in dB, SSIM) of two equally sized images."""
    rendered = np.asarray(rendered)
    reference = np.asarray(reference)
    if rendered.shape != reference.shape:
        raise MetricsError(f"image dimensions differ: {rendered.shape} vs {reference.shape}")
    return psnr(rendered, reference, cap), ssim(rendered, reference, window, sigma)


class ImageScore(BaseModel):
    name: str
    psnr: float
    ssim: float


class PhotometricReport(BaseModel):
    images: List[ImageScore] = Field(default_factory=list)
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0


def load_image(path: Union[str, Path]) -> np.ndarray:
    """8-bit RGB PNG as float64 in [0, 1]."""
    with Image.open(path) as image:
        return np.array(image.convert("RGB"), dtype=np.float64) / 255.0


def compare_image_dirs(rendered_dir: Union[str, Path], reference_dir: Union[str, Path],
                       cap: float = 99.0, window: int = 11, sigma: float = 1.5) -> PhotometricReport:
    """Score every PNG in ``rendered_dir`` against the same-named file in ``reference_dir``."""
    rendered_dir, reference_dir = Path(rendered_dir), Path(reference_dir)
    names = sorted(p.name for p in rendered_dir.glob("*.png"))
    if not names:
        raise MetricsError(f"no rendered images in {rendered_dir}")
    scores = []
    for name in names:
        reference = reference_dir / name
        if not reference.exists():
            raise MetricsError(f"no reference image for {name} in {reference_dir}")
        p, s = image_metrics(load_image(rendered_dir / name), load_image(reference), cap, window, sigma)
        scores.append(ImageScore(name=name, psnr=p, ssim=s))
    report = PhotometricReport(
        images=scores,
        mean_psnr=float(np.mean([s.psnr for s in scores])),
        mean_ssim=float(np.mean([s.ssim for s in scores])),
    )
    logger.info(f"Photometric: {len(scores)} images, PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}")
    return report
