"""PSNR and SSIM on float images in [0, 1], shape (H, W, C)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(peak * peak / mse))


def psnr_from_mse(mse: float, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    return cap if mse <= 0 else min(cap, 10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    # separable weighted mean over every full window position
    rows = sliding_window_view(img, len(w), axis=0) @ w
    return sliding_window_view(rows, len(w), axis=1) @ w


def ssim(a, b) -> float:
    """Mean SSIM over all full 11x11 windows, per channel then averaged."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW} px per side, got {a.shape[:2]}")
    w = gaussian_window()
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, a, b) -> None:
        self.psnr.append(psnr(a, b))
        self.ssim.append(ssim(a, b))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(frames=len(self.psnr), mean_psnr=self.mean_psnr, mean_ssim=self.mean_ssim)
        return d


def evaluate(renders, targets) -> MetricReport:
    if len(renders) != len(targets):
        raise ValueError(f"{len(renders)} renders for {len(targets)} targets")
    report = MetricReport()
    for r, t in zip(renders, targets):
        report.add(r, t)
    return report
