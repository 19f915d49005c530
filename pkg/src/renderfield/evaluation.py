"""Image quality metrics and the view-set stability report.

PSNR uses peak 1.0 on normalized images, with identical inputs capped at a
99.0 dB sentinel. The stability number (sdp) is the population standard
deviation of the per-view PSNR values, sentinels excluded: a low value means
rendering quality holds up across the whole test set, not just on average.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .scene_io import load_image

PSNR_SENTINEL = 99.0
DEFAULT_REFERENCE_DB = 25.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class QualityScore:
    view_id: int
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    scores: list[QualityScore]
    mean_psnr: float
    mean_ssim: float
    sdp: float
    histogram: list[tuple[float, int]] = field(default_factory=list)
    below_reference_count: int = 0
    reference_db: float = DEFAULT_REFERENCE_DB


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes disagree: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return float(-10.0 * np.log10(mse))


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale structural similarity, averaged over the RGB channels.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1;
    the map is averaged over valid window positions only.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes disagree: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]

    kernel = _gaussian_kernel()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    channel_means = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = convolve2d(x, kernel, mode="valid")
        mu_y = convolve2d(y, kernel, mode="valid")
        var_x = convolve2d(x * x, kernel, mode="valid") - mu_x ** 2
        var_y = convolve2d(y * y, kernel, mode="valid") - mu_y ** 2
        cov = convolve2d(x * y, kernel, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        channel_means.append(np.mean(num / den))
    return float(np.mean(channel_means))


def sdp(scores) -> float:
    """Population standard deviation of the PSNR scores, sentinels excluded."""
    kept = [s for s in scores if np.isfinite(s) and s != PSNR_SENTINEL]
    if not kept:
        raise ValueError("sdp undefined: no finite non-sentinel scores")
    return float(np.std(kept))


def histogram(scores, bin_width: float = 1.0, reference_db: float = DEFAULT_REFERENCE_DB):
    """Integer-anchored histogram of PSNR scores.

    Returns (bins, below_reference) where bins is a sorted list of
    (lower edge, count) over the nonempty bins [k*w, (k+1)*w), and
    below_reference counts scores strictly under the reference line.
    """
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    scores = np.asarray(list(scores), dtype=np.float64)
    if len(scores) and not np.all(np.isfinite(scores)):
        raise ValueError("histogram requires finite scores")
    keys = np.floor(scores / bin_width).astype(np.int64)
    bins = [
        (float(k * bin_width), int(n))
        for k, n in zip(*np.unique(keys, return_counts=True))
    ]
    below = int(np.count_nonzero(scores < reference_db))
    return bins, below


def evaluate_pair(rendered_path, truth_path, view_id: int) -> QualityScore:
    a = load_image(rendered_path)
    b = load_image(truth_path)
    return QualityScore(view_id=view_id, psnr=psnr(a, b), ssim=ssim(a, b))


def evaluate_set(pairs, view_ids=None, reference_db: float = DEFAULT_REFERENCE_DB) -> EvalReport:
    """Score a list of (rendered path, ground-truth path) pairs.

    Sentinel PSNR values (identical pairs) are excluded from the mean and
    from sdp; with nothing but sentinels the mean reports the sentinel and
    sdp reports 0. Any unreadable pair aborts with its path.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    if view_ids is None:
        view_ids = list(range(len(pairs)))
    scores = []
    for vid, (rendered, truth) in zip(view_ids, pairs):
        try:
            scores.append(evaluate_pair(rendered, truth, vid))
        except (OSError, ValueError) as exc:
            raise ValueError(f"failed to evaluate pair ({rendered}, {truth}): {exc}") from exc

    psnrs = [s.psnr for s in scores]
    informative = [p for p in psnrs if p != PSNR_SENTINEL]
    mean_psnr = float(np.mean(informative)) if informative else PSNR_SENTINEL
    spread = float(np.std(informative)) if informative else 0.0
    bins, below = histogram(psnrs, reference_db=reference_db)
    return EvalReport(
        scores=scores,
        mean_psnr=mean_psnr,
        mean_ssim=float(np.mean([s.ssim for s in scores])),
        sdp=spread,
        histogram=bins,
        below_reference_count=below,
        reference_db=reference_db,
    )


# ---------------------------------------------------------------------------
# Report files


def write_scores_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["view_id", "psnr_db", "ssim"])
        for s in report.scores:
            writer.writerow([s.view_id, f"{s.psnr:.6f}", f"{s.ssim:.6f}"])


def write_histogram_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_lo_db", "count"])
        for lo, count in report.histogram:
            writer.writerow([f"{lo:g}", count])


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "mean_psnr": report.mean_psnr,
                "mean_ssim": report.mean_ssim,
                "sdp": report.sdp,
                "below_reference_count": report.below_reference_count,
                "reference_db": report.reference_db,
                "histogram": [{"lo": lo, "count": n} for lo, n in report.histogram],
            },
            indent=1,
        )
    )
