"""Image quality metrics for reconstructed frames.

Four complementary scores over [0, 1] grayscale frames: root-mean-square
pixel distance (ED, lower better), cosine similarity of the flattened
images (CS), the structural similarity index (SSIM, 11x11 Gaussian window,
sigma 1.5, standard stabilizers for unit data range), and peak
signal-to-noise ratio (PSNR, data range 1).  Identical frames score
ED 0 / CS 1 / SSIM 1 and an infinite PSNR, reported as ``inf``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve


def _check_pair(image, reference):
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError(f"shape mismatch: {image.shape} vs {reference.shape}")
    return image, reference


def euclidean(image, reference) -> float:
    """Root-mean-square pixel difference."""
    image, reference = _check_pair(image, reference)
    return float(np.sqrt(np.mean((image - reference) ** 2)))


def cosine(image, reference) -> float:
    """Cosine similarity of the flattened images; nan if both are all-zero."""
    image, reference = _check_pair(image, reference)
    na, nb = np.linalg.norm(image), np.linalg.norm(reference)
    if na == 0 and nb == 0:
        return float("nan")
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(image.ravel(), reference.ravel()) / (na * nb), -1.0, 1.0))


def psnr(image, reference) -> float:
    """10 log10(1 / MSE) dB for unit data range; identical frames give inf."""
    image, reference = _check_pair(image, reference)
    mse = float(np.mean((image - reference) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(side: int, sigma: float) -> np.ndarray:
    half = (side - 1) / 2.0
    coords = np.arange(side) - half
    g = np.exp(-0.5 * (coords / sigma) ** 2)
    win = np.outer(g, g)
    return win / win.sum()


def ssim(image, reference, window: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity over valid window positions.

    Stabilizers follow the standard choice for unit range: C1 = 0.01^2,
    C2 = 0.03^2.  Frames smaller than the window fall back to the largest
    odd window that fits (with a warning).
    """
    image, reference = _check_pair(image, reference)
    side = min(window, *image.shape)
    if side < window:
        side = side if side % 2 else side - 1
        if side < 1:
            raise ValueError("image too small for SSIM")
        warnings.warn(f"image smaller than {window}x{window} window, using {side}", stacklevel=2)
    win = _gaussian_window(side, sigma)
    c1, c2 = 0.01**2, 0.03**2

    def smooth(x):
        return fftconvolve(x, win, mode="valid")

    mu1, mu2 = smooth(image), smooth(reference)
    s11 = smooth(image * image) - mu1 * mu1
    s22 = smooth(reference * reference) - mu2 * mu2
    s12 = smooth(image * reference) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1**2 + mu2**2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


METRIC_NAMES = ("ED", "CS", "SSIM", "PSNR")


@dataclass
class MetricReport:
    """Per-frame and mean scores of one reconstruction method on one object."""

    object_id: str
    method: str
    per_frame: dict = field(default_factory=dict)  # name -> list of floats

    def mean(self, name: str) -> float:
        vals = self.per_frame[name]
        return float(np.mean(vals))

    @property
    def num_frames(self) -> int:
        return len(self.per_frame[METRIC_NAMES[0]])


def evaluate_sequence(recons, references, object_id: str = "", method: str = "") -> MetricReport:
    """Score every (reconstruction, ground truth) frame pair."""
    recons, references = list(recons), list(references)
    if len(recons) != len(references):
        raise ValueError(f"frame count mismatch: {len(recons)} vs {len(references)}")
    if not recons:
        raise ValueError("no frames to evaluate")
    report = MetricReport(object_id, method, {name: [] for name in METRIC_NAMES})
    for img, ref in zip(recons, references):
        report.per_frame["ED"].append(euclidean(img, ref))
        report.per_frame["CS"].append(cosine(img, ref))
        report.per_frame["SSIM"].append(ssim(img, ref))
        report.per_frame["PSNR"].append(psnr(img, ref))
    return report
