"""Power normalization, AWGN simulation, and SNR bookkeeping.

Symbols travel as complex baseband values. A frame of k symbols is scaled
so its average power (1/k) * sum |y_i|^2 equals the transmitter constraint
T exactly. Noise for an SNR of s dB has per-complex-symbol variance
sigma^2 = T / 10^(s/10), split evenly between the real and imaginary
components. All randomness comes from a seeded generator so a given seed
reproduces the identical realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import NonFiniteSnr, ZeroVector

FAMILIES = ("awgn", "noiseless")

POWER_TOLERANCE = 1e-5


@dataclass(frozen=True)
class ChannelSpec:
    """Channel family plus the true and estimated SNR operating points."""

    family: str = "awgn"
    snr_test_db: float = 10.0
    snr_est_db: float | None = None
    power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown channel family {self.family!r}")
        if not (self.power > 0):
            raise ValueError(f"power constraint must be positive, got {self.power}")
        if not math.isfinite(self.snr_test_db):
            raise NonFiniteSnr(f"snr_test_db={self.snr_test_db}")
        if self.snr_est_db is not None and not math.isfinite(self.snr_est_db):
            raise NonFiniteSnr(f"snr_est_db={self.snr_est_db}")

    @property
    def estimated_snr_db(self) -> float:
        """SNR fed to the noise attention modules; defaults to the true SNR."""
        return self.snr_test_db if self.snr_est_db is None else self.snr_est_db


@dataclass
class SymbolFrame:
    """A power-normalized complex symbol vector ready for transmission."""

    symbols: np.ndarray
    power: float

    def __len__(self) -> int:
        return self.symbols.shape[0]


def normalize_power(x: np.ndarray, power: float = 1.0) -> SymbolFrame:
    """Scale symbols so the measured average power equals `power` exactly.

    y = x * sqrt(k * T) / ||x||_2, which makes (1/k) sum |y_i|^2 = T.
    """
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise ZeroVector("cannot power-normalize an all-zero symbol vector")
    y = x * (math.sqrt(x.size * power) / norm)
    measured = float(np.mean(np.abs(y) ** 2))
    return SymbolFrame(symbols=y, power=measured)


def sigma_from_snr(snr_db: float, power: float = 1.0) -> float:
    """Noise variance per complex symbol: sigma^2 = T / 10^(snr/10)."""
    if not math.isfinite(snr_db):
        raise NonFiniteSnr(f"snr_db={snr_db}")
    return power / (10.0 ** (snr_db / 10.0))


class Channel:
    """A seeded channel instance. Not meant to be shared across workers."""

    def __init__(self, spec: ChannelSpec):
        self.spec = spec
        self._rng = np.random.default_rng(spec.seed)

    @property
    def sigma2(self) -> float:
        return sigma_from_snr(self.spec.snr_test_db, self.spec.power)

    def draw_noise(self, n: int) -> np.ndarray:
        """Complex circular Gaussian noise, variance sigma^2 per symbol."""
        if self.spec.family == "noiseless":
            return np.zeros(n, dtype=np.complex128)
        scale = math.sqrt(self.sigma2 / 2.0)
        return scale * (
            self._rng.standard_normal(n) + 1j * self._rng.standard_normal(n)
        )

    def transmit(self, frame: SymbolFrame) -> np.ndarray:
        """Apply the channel to a normalized frame, returning received symbols."""
        y = np.asarray(frame.symbols, dtype=np.complex128)
        if self.spec.family == "noiseless":
            return y.copy()
        return y + self.draw_noise(y.size)


def normalize_power_torch(x: torch.Tensor, power: float = 1.0) -> torch.Tensor:
    """Differentiable per-sample power normalization.

    `x` has shape (B, k, 2) with real parts in channel 0 and imaginary parts
    in channel 1. Each sample is scaled so its average complex-symbol power
    equals `power`.
    """
    if x.dim() != 3 or x.shape[-1] != 2:
        raise ZeroVector(f"expected (B, k, 2) symbol tensor, got {tuple(x.shape)}")
    k = x.shape[1]
    norm = torch.sqrt(x.pow(2).sum(dim=(1, 2), keepdim=True))
    if (norm == 0).any():
        raise ZeroVector("cannot power-normalize an all-zero symbol vector")
    return x * (math.sqrt(k * power) / norm)


def noise_to_torch(noise: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Pack complex noise of shape (B, k) or (k,) into a (B, k, 2) tensor."""
    noise = np.asarray(noise, dtype=np.complex128)
    if noise.ndim == 1:
        noise = noise[None, :]
    stacked = np.stack([noise.real, noise.imag], axis=-1)
    return torch.from_numpy(np.ascontiguousarray(stacked)).to(dtype)
