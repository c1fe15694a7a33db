import math

import numpy as np
import pytest

from semcom.data_io import make_synthetic_clip
from semcom.errors import ShapeMismatch, TooSmall
from semcom.metrics import (
    FULL_SCALE_SIDE,
    MS_SSIM_WEIGHTS,
    WINDOW_SIGMA,
    WINDOW_SIZE,
    K1,
    K2,
    metric_report,
    ms_ssim,
    num_scales,
    psnr,
)

# ---------------------------------------------------------------------------
# Scalar-loop reference implementations. These stay deliberately naive:
# explicit Python loops only, no shared code with the package.
# ---------------------------------------------------------------------------


def psnr_loop(a, b):
    total = 0.0
    count = 0
    flat_a = a.reshape(-1)
    flat_b = b.reshape(-1)
    for i in range(flat_a.size):
        d = float(flat_a[i]) - float(flat_b[i])
        total += d * d
        count += 1
    mse = total / count
    if mse == 0.0:
        return 100.0
    return min(100.0, 10.0 * math.log10(1.0 / mse))


def _window_2d(size, sigma):
    w = np.empty((size, size))
    c = (size - 1) / 2.0
    for i in range(size):
        for j in range(size):
            w[i, j] = math.exp(-((i - c) ** 2) / (2 * sigma**2)) * math.exp(
                -((j - c) ** 2) / (2 * sigma**2)
            )
    return w / w.sum()


def _scale_count(h, w):
    side = min(h, w)
    if side >= FULL_SCALE_SIDE:
        return 5
    return max(1, min(5, int(math.floor(math.log2(side / WINDOW_SIZE)))))


def _ssim_terms_loop(x, y, win):
    """Mean luminance and contrast-structure terms of one (C, H, W) pair."""
    size = win.shape[0]
    c1, c2 = K1 * K1, K2 * K2
    l_vals, cs_vals = [], []
    channels, h, w = x.shape
    for c in range(channels):
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                mx = my = mxx = myy = mxy = 0.0
                for u in range(size):
                    for v in range(size):
                        wx = win[u, v]
                        xv = float(x[c, i + u, j + v])
                        yv = float(y[c, i + u, j + v])
                        mx += wx * xv
                        my += wx * yv
                        mxx += wx * xv * xv
                        myy += wx * yv * yv
                        mxy += wx * xv * yv
                sxx = mxx - mx * mx
                syy = myy - my * my
                sxy = mxy - mx * my
                l_vals.append((2 * mx * my + c1) / (mx * mx + my * my + c1))
                cs_vals.append((2 * sxy + c2) / (sxx + syy + c2))
    return sum(l_vals) / len(l_vals), sum(cs_vals) / len(cs_vals)


def _downsample_loop(x):
    channels, h, w = x.shape
    out = np.empty((channels, h // 2, w // 2))
    for c in range(channels):
        for i in range(h // 2):
            for j in range(w // 2):
                out[c, i, j] = (
                    x[c, 2 * i, 2 * j]
                    + x[c, 2 * i + 1, 2 * j]
                    + x[c, 2 * i, 2 * j + 1]
                    + x[c, 2 * i + 1, 2 * j + 1]
                ) / 4.0
    return out


def ms_ssim_loop(x, y):
    """Reference MS-SSIM for one (H, W, 3) frame pair."""
    x = np.asarray(x, dtype=np.float64).transpose(2, 0, 1)
    y = np.asarray(y, dtype=np.float64).transpose(2, 0, 1)
    h, w = x.shape[1], x.shape[2]
    scales = _scale_count(h, w)
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    final_side = min(h, w) // (2 ** (scales - 1))
    size = min(WINDOW_SIZE, final_side if final_side % 2 else final_side - 1)
    win = _window_2d(size, WINDOW_SIGMA)
    value = 1.0
    for s in range(scales):
        lum, cs = _ssim_terms_loop(x, y, win)
        term = lum * cs if s == scales - 1 else cs
        value *= max(term, 0.0) ** weights[s]
        if s < scales - 1:
            x = _downsample_loop(x)
            y = _downsample_loop(y)
    return value


# ---------------------------------------------------------------------------


def test_psnr_identical_sentinel():
    clip = make_synthetic_clip("noise", 8, 8, 2, seed=0)
    assert psnr(clip, clip) == 100.0


def test_psnr_closed_form_offset(rng):
    a = rng.uniform(0.0, 0.8, size=(2, 8, 8, 3))
    b = a + 0.1
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_loop_oracle(rng):
    a = rng.uniform(0, 1, size=(2, 8, 8, 3))
    b = rng.uniform(0, 1, size=(2, 8, 8, 3))
    assert psnr(a, b) == pytest.approx(psnr_loop(a, b), abs=1e-9)


def test_psnr_symmetric(rng):
    a = rng.uniform(0, 1, size=(2, 8, 8, 3))
    b = rng.uniform(0, 1, size=(2, 8, 8, 3))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_decreases_with_noise(rng):
    base = rng.uniform(0.35, 0.65, size=(2, 16, 16, 3))
    values = []
    noise = rng.uniform(-1, 1, size=base.shape)
    for amp in (0.05, 0.15, 0.3):
        values.append(psnr(base, base + amp * noise))
    assert values[0] > values[1] > values[2]


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        psnr(np.zeros((2, 8, 8, 3)), np.zeros((2, 8, 16, 3)))


def test_ms_ssim_identical_is_one(rng):
    a = rng.uniform(0, 1, size=(2, 16, 16, 3))
    assert ms_ssim(a, a) == 1.0


def test_ms_ssim_opposite_constants_near_zero():
    a = np.zeros((1, 16, 16, 3))
    b = np.ones((1, 16, 16, 3))
    assert ms_ssim(a, b) < 0.05


def test_ms_ssim_symmetric(rng):
    a = rng.uniform(0, 1, size=(1, 16, 16, 3))
    b = rng.uniform(0, 1, size=(1, 16, 16, 3))
    assert ms_ssim(a, b) == pytest.approx(ms_ssim(b, a), abs=1e-9)


@pytest.mark.parametrize("side", [8, 16])
def test_ms_ssim_matches_loop_oracle(side, rng):
    a = rng.uniform(0, 1, size=(side, side, 3))
    b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
    ours = ms_ssim(a[None], b[None])
    reference = ms_ssim_loop(a, b)
    assert ours == pytest.approx(reference, abs=1e-6)


def test_ms_ssim_monotone_under_noise(rng):
    base = rng.uniform(0.35, 0.65, size=(1, 16, 16, 3))
    noise = rng.uniform(-1, 1, size=base.shape)
    values = [ms_ssim(base, base + amp * noise) for amp in (0.05, 0.15, 0.3)]
    assert values[0] >= values[1] >= values[2]
    assert all(0.0 <= v <= 1.0 for v in values)


def test_ms_ssim_too_small():
    with pytest.raises(TooSmall):
        ms_ssim(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 4, 3)))


def test_num_scales_rule():
    assert num_scales(176, 176) == 5
    assert num_scales(32, 32) == 1
    assert num_scales(64, 64) == 2
    assert num_scales(8, 8) == 1
    with pytest.raises(TooSmall):
        num_scales(7, 64)


def test_metric_report_per_frame(rng):
    a = rng.uniform(0, 1, size=(2, 16, 16, 3))
    b = np.clip(a + 0.05, 0, 1)
    report = metric_report(a, b)
    assert len(report.per_frame) == 2
    assert 0.0 <= report.ms_ssim <= 1.0
    assert report.psnr_db <= 100.0
