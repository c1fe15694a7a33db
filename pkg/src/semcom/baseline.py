"""Separation-based digital reference pipeline.

Uniform pixel quantization, a Hamming(7,4) block code, and BPSK over the
shared noisy-channel model. The chain is intentionally simple: its job is
to exhibit the abrupt quality collapse of separated digital transmission
once the channel drops below the code's operating threshold, in contrast
to the learned pipeline's smooth degradation. Decoding is hard-decision
only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import sigma_from_snr
from .data_io import VideoClip
from .metrics import psnr

# Systematic Hamming(7,4): codeword [d1 d2 d3 d4 p1 p2 p3].
_PARITY = np.array(
    [
        [1, 1, 0, 1],  # p1 = d1 ^ d2 ^ d4
        [1, 0, 1, 1],  # p2 = d1 ^ d3 ^ d4
        [0, 1, 1, 1],  # p3 = d2 ^ d3 ^ d4
    ],
    dtype=np.uint8,
)
# Parity-check columns for positions (d1..d4, p1..p3); all nonzero, distinct.
_H = np.concatenate([_PARITY, np.eye(3, dtype=np.uint8)], axis=1)
# Map syndrome value (as integer s1*4 + s2*2 + s3) to the bit position to flip.
_SYNDROME_TO_POS = np.full(8, -1, dtype=np.int64)
for _pos in range(7):
    _s = _H[:, _pos]
    _SYNDROME_TO_POS[int(_s[0]) * 4 + int(_s[1]) * 2 + int(_s[2])] = _pos


@dataclass(frozen=True)
class DigitalConfig:
    bits_per_pixel: int = 8
    snr_test_db: float = 10.0
    power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.bits_per_pixel <= 16):
            raise ValueError(f"bits_per_pixel must be in [1, 16], got {self.bits_per_pixel}")


def quantize(clip: VideoClip, bits: int) -> np.ndarray:
    """Uniformly quantize pixels to 2^bits levels, serialized MSB first."""
    levels = np.round(clip.frames.astype(np.float64) * (2**bits - 1)).astype(np.uint32)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)
    out = (levels.reshape(-1, 1) >> shifts) & 1
    return out.reshape(-1).astype(np.uint8)


def dequantize(bitstream: np.ndarray, bits: int, shape: tuple[int, ...]) -> np.ndarray:
    npix = int(np.prod(shape))
    chunks = bitstream[: npix * bits].reshape(npix, bits).astype(np.uint32)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)
    levels = (chunks << shifts).sum(axis=1)
    return (levels.astype(np.float64) / (2**bits - 1)).reshape(shape)


def fec_encode(bits: np.ndarray) -> np.ndarray:
    """Hamming(7,4) systematic encoding; input is zero-padded to 4-bit blocks."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    pad = (-bits.size) % 4
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    data = bits.reshape(-1, 4)
    parity = (data @ _PARITY.T) % 2
    return np.concatenate([data, parity.astype(np.uint8)], axis=1).reshape(-1)


def fec_decode(coded: np.ndarray) -> np.ndarray:
    """Hard-decision decode; any single bit error per block is corrected."""
    blocks = np.asarray(coded, dtype=np.uint8).reshape(-1, 7).copy()
    syndrome = (blocks @ _H.T) % 2
    syndrome_val = syndrome[:, 0] * 4 + syndrome[:, 1] * 2 + syndrome[:, 2]
    flip = _SYNDROME_TO_POS[syndrome_val]
    rows = np.nonzero(flip >= 0)[0]
    blocks[rows, flip[rows]] ^= 1
    return blocks[:, :4].reshape(-1)


def bpsk_modulate(bits: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Map bits {0, 1} to real symbols {-sqrt(T), +sqrt(T)}."""
    amp = math.sqrt(power)
    return np.where(np.asarray(bits, dtype=np.uint8) == 1, amp, -amp)


def transmit_bits(
    bits: np.ndarray, snr_db: float, power: float, rng: np.random.Generator
) -> np.ndarray:
    """BPSK over AWGN with hard decisions.

    Noise uses the shared per-complex-symbol variance convention, so the
    real component sees sigma^2 / 2 (the imaginary component is unused).
    """
    tx = bpsk_modulate(bits, power)
    sigma2 = sigma_from_snr(snr_db, power)
    rx = tx + rng.standard_normal(tx.size) * math.sqrt(sigma2 / 2.0)
    return (rx > 0).astype(np.uint8)


def run_digital_pipeline(clip: VideoClip, cfg: DigitalConfig) -> tuple[VideoClip, float]:
    """Quantize, code, modulate, corrupt, decode; returns (clip, PSNR dB)."""
    bits = quantize(clip, cfg.bits_per_pixel)
    coded = fec_encode(bits)
    rng = np.random.default_rng(cfg.seed)
    received = transmit_bits(coded, cfg.snr_test_db, cfg.power, rng)
    decoded = fec_decode(received)[: bits.size]
    frames = np.clip(dequantize(decoded, cfg.bits_per_pixel, clip.frames.shape), 0.0, 1.0)
    recon = VideoClip(frames.astype(np.float32), clip.frame_rate, clip.clip_id + "-digital")
    return recon, psnr(clip, recon)


def quantization_only_psnr(clip: VideoClip, bits: int) -> float:
    """PSNR of the quantize/dequantize round trip (the error-free plateau)."""
    frames = dequantize(quantize(clip, bits), bits, clip.frames.shape)
    return psnr(clip.frames, frames.astype(np.float32))


def sweep_digital(
    clip: VideoClip, snr_grid: list[float], cfg: DigitalConfig
) -> list[tuple[float, float]]:
    """PSNR across a test-SNR grid, one seeded channel draw per point."""
    rows = []
    for i, snr in enumerate(snr_grid):
        point = replace(cfg, snr_test_db=float(snr), seed=cfg.seed + 7919 * i)
        _, value = run_digital_pipeline(clip, point)
        rows.append((float(snr), value))
    return rows
