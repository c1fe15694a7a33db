"""Reconstruction quality metrics: PSNR and MS-SSIM.

PSNR treats pixel range as [0, 1] (MAX = 1) and pools the MSE over all
frames and pixels; identical inputs report the 100 dB sentinel so reports
stay finite and sortable. MS-SSIM uses the 5-scale weights
(0.0448, 0.2856, 0.3001, 0.2363, 0.1333), an 11x11 Gaussian window with
sigma 1.5, and K1=0.01, K2=0.03. For small frames the scale count drops to
floor(log2(min(H, W) / 11)) (at least 1, at most 5) and the active weights
are renormalized to sum to one; below 11 pixels the window shrinks to the
largest odd size that fits. Frames smaller than 8x8 are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeMismatch, TooSmall

PSNR_MAX_DB = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
MIN_SIDE = 8
FULL_SCALE_SIDE = 176


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ms_ssim: float
    per_frame: tuple[tuple[float, float], ...]


def _as_clip_array(a) -> np.ndarray:
    arr = np.asarray(getattr(a, "frames", a), dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"expected (N, H, W, 3) frames, got {arr.shape}")
    return arr


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_clip_array(a), _as_clip_array(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB, MSE pooled over frames and pixels."""
    x, y = _check_pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_MAX_DB
    return min(PSNR_MAX_DB, 10.0 * np.log10(1.0 / mse))


def num_scales(height: int, width: int) -> int:
    side = min(height, width)
    if side < MIN_SIDE:
        raise TooSmall(f"frames must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}")
    if side >= FULL_SCALE_SIDE:
        return 5
    return max(1, min(5, int(np.floor(np.log2(side / WINDOW_SIZE)))))


def _gaussian_window(size: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    """Separable Gaussian filtering with valid (no-pad) boundaries."""
    c = x.shape[1]
    kh = win.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    kw = win.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    x = F.conv2d(x, kh, groups=c)
    return F.conv2d(x, kw, groups=c)


def _ssim_terms(
    x: torch.Tensor, y: torch.Tensor, win: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-image mean luminance and contrast-structure terms."""
    c1 = K1 * K1
    c2 = K2 * K2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x * mu_x
    syy = _filter_valid(y * y, win) - mu_y * mu_y
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    l_map = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs_map = (2 * sxy + c2) / (sxx + syy + c2)
    return l_map.mean(dim=(1, 2, 3)), cs_map.mean(dim=(1, 2, 3))


def ms_ssim_torch(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Differentiable MS-SSIM over a batch of (B, C, H, W) images in [0, 1].

    Returns one value per batch element.
    """
    if x.shape != y.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    h, w = x.shape[-2], x.shape[-1]
    scales = num_scales(h, w)
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
    weights = weights / weights.sum()

    final_side = min(h, w) // (2 ** (scales - 1))
    win_size = min(WINDOW_SIZE, final_side if final_side % 2 else final_side - 1)
    win = _gaussian_window(win_size, WINDOW_SIGMA, dtype=x.dtype).to(x.device)

    out = torch.ones(x.shape[0], dtype=x.dtype, device=x.device)
    for i in range(scales):
        lum, cs = _ssim_terms(x, y, win)
        term = lum * cs if i == scales - 1 else cs
        out = out * torch.clamp(term, min=0.0) ** weights[i]
        if i < scales - 1:
            x = F.avg_pool2d(x, kernel_size=2)
            y = F.avg_pool2d(y, kernel_size=2)
    return out


def ms_ssim(a, b) -> float:
    """MS-SSIM in [0, 1], averaged over the frames of a clip pair."""
    x, y = _check_pair(a, b)
    with torch.no_grad():
        tx = torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))
        ty = torch.from_numpy(np.ascontiguousarray(y.transpose(0, 3, 1, 2)))
        vals = ms_ssim_torch(tx, ty)
    return float(vals.mean().item())


def metric_report(a, b) -> MetricReport:
    """Clip-level PSNR and MS-SSIM plus the same metrics per frame."""
    x, y = _check_pair(a, b)
    per_frame = tuple(
        (psnr(x[i : i + 1], y[i : i + 1]), ms_ssim(x[i : i + 1], y[i : i + 1]))
        for i in range(x.shape[0])
    )
    return MetricReport(psnr_db=psnr(x, y), ms_ssim=ms_ssim(x, y), per_frame=per_frame)
