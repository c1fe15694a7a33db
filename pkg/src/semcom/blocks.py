"""Differentiable building blocks shared by the encoder and decoder.

Convolution stacks follow the transmit/receive split: downsampling stacks
use GDN with PReLU, upsampling stacks use pixel shuffle with IGDN and end
in a sigmoid so reconstructed pixels stay in [0, 1]. The noise attention
block reweights latent channels from a squeeze-and-excitation bottleneck
that sees the estimated channel SNR next to the pooled features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BadChannelCount, ChannelMismatch, NonFiniteSnr

BETA_MIN = 1e-6

VALID_KERNELS = (1, 3, 5, 7)
VALID_STRIDES = (1, 2)


@dataclass(frozen=True)
class ConvSpec:
    """One convolution stage: kernel size, output channels, stride."""

    kernel: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if self.kernel not in VALID_KERNELS:
            raise ValueError(f"kernel must be one of {VALID_KERNELS}, got {self.kernel}")
        if self.stride not in VALID_STRIDES:
            raise ValueError(f"stride must be one of {VALID_STRIDES}, got {self.stride}")
        if self.out_channels < 1:
            raise ValueError(f"out_channels must be >= 1, got {self.out_channels}")


@dataclass
class GdnParams:
    """Effective (already non-negative) divisive-normalization parameters."""

    beta: torch.Tensor  # (C,), each >= BETA_MIN
    gamma: torch.Tensor  # (C, C), each >= 0


def gdn(x: torch.Tensor, params: GdnParams, inverse: bool = False) -> torch.Tensor:
    """Apply y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), or its inverse.

    `x` is (B, C, H, W) or (C, H, W); gamma rows index the output channel.
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    c = x.shape[1]
    if params.beta.shape != (c,) or params.gamma.shape != (c, c):
        raise ChannelMismatch(
            f"params sized for {params.beta.shape[0]} channels, input has {c}"
        )
    norm = F.conv2d(x * x, params.gamma.view(c, c, 1, 1), params.beta)
    norm = torch.sqrt(norm)
    out = x * norm if inverse else x / norm
    return out.squeeze(0) if squeeze else out


class GDN(nn.Module):
    """Generalized divisive normalization with softplus-reparameterized
    parameters, so beta >= BETA_MIN and gamma >= 0 hold by construction."""

    def __init__(self, channels: int, inverse: bool = False):
        super().__init__()
        self.inverse = inverse
        self.beta_raw = nn.Parameter(torch.full((channels,), _softplus_inverse(1.0 - BETA_MIN)))
        gamma_raw = torch.full((channels, channels), -9.0)
        gamma_raw.fill_diagonal_(_softplus_inverse(0.1))
        self.gamma_raw = nn.Parameter(gamma_raw)

    def effective_params(self) -> GdnParams:
        return GdnParams(
            beta=BETA_MIN + F.softplus(self.beta_raw),
            gamma=F.softplus(self.gamma_raw),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return gdn(x, self.effective_params(), inverse=self.inverse)


def _softplus_inverse(y: float) -> float:
    return float(math.log(math.expm1(y)))


def pixel_shuffle(x, upscale: int):
    """Rearrange (..., h, w, c*r^2) -> (..., h*r, w*r, c), channels last.

    A pure permutation: the multiset of values is preserved exactly.
    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    is_numpy = isinstance(x, np.ndarray)
    t = torch.from_numpy(x) if is_numpy else x
    if t.shape[-1] % (upscale * upscale) != 0:
        raise BadChannelCount(
            f"channel count {t.shape[-1]} not divisible by r^2={upscale * upscale}"
        )
    squeeze = t.dim() == 3
    if squeeze:
        t = t.unsqueeze(0)
    out = F.pixel_shuffle(t.permute(0, 3, 1, 2), upscale).permute(0, 2, 3, 1)
    if squeeze:
        out = out.squeeze(0)
    out = out.contiguous()
    return out.numpy() if is_numpy else out


def pixel_unshuffle(x, downscale: int):
    """Exact inverse of :func:`pixel_shuffle`."""
    is_numpy = isinstance(x, np.ndarray)
    t = torch.from_numpy(x) if is_numpy else x
    if t.shape[-3] % downscale or t.shape[-2] % downscale:
        raise BadChannelCount(
            f"spatial dims {tuple(t.shape[-3:-1])} not divisible by r={downscale}"
        )
    squeeze = t.dim() == 3
    if squeeze:
        t = t.unsqueeze(0)
    out = F.pixel_unshuffle(t.permute(0, 3, 1, 2), downscale).permute(0, 2, 3, 1)
    if squeeze:
        out = out.squeeze(0)
    out = out.contiguous()
    return out.numpy() if is_numpy else out


class NoiseAttention(nn.Module):
    """SNR-conditioned channel reweighting with a residual combination.

    Pools the latent to one value per channel, appends the estimated SNR in
    dB, passes the vector through a squeeze-and-excitation bottleneck, and
    returns u + u * w with the sigmoid gate w broadcast over space.
    """

    def __init__(self, channels: int, squeeze_ratio: int = 4):
        super().__init__()
        if channels % squeeze_ratio:
            raise ChannelMismatch(
                f"squeeze_ratio {squeeze_ratio} must divide channels {channels}"
            )
        hidden = channels // squeeze_ratio
        self.fc1 = nn.Linear(channels + 1, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, u: torch.Tensor, snr_db) -> torch.Tensor:
        snr = torch.as_tensor(snr_db, dtype=u.dtype, device=u.device)
        if not torch.isfinite(snr).all():
            raise NonFiniteSnr(f"snr_db={snr_db}")
        squeeze = u.dim() == 3
        if squeeze:
            u = u.unsqueeze(0)
        b = u.shape[0]
        z = u.mean(dim=(2, 3))
        snr = snr.reshape(-1, 1).expand(b, 1) if snr.dim() <= 1 else snr
        w = torch.sigmoid(self.fc2(F.relu(self.fc1(torch.cat([z, snr], dim=1)))))
        out = u + u * w.unsqueeze(-1).unsqueeze(-1)
        return out.squeeze(0) if squeeze else out


class EncoderCNN(nn.Module):
    """Downsampling feature-learning stack: [conv -> GDN -> PReLU] per spec."""

    def __init__(self, in_channels: int, specs: list[ConvSpec]):
        super().__init__()
        layers: list[nn.Module] = []
        ch = in_channels
        for spec in specs:
            layers += [
                nn.Conv2d(ch, spec.out_channels, spec.kernel, stride=spec.stride,
                          padding=spec.kernel // 2),
                GDN(spec.out_channels),
                nn.PReLU(spec.out_channels),
            ]
            ch = spec.out_channels
        self.net = nn.Sequential(*layers)
        self.out_channels = ch

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class DecoderCNN(nn.Module):
    """Upsampling stack: [pixel shuffle when upscaling -> conv -> IGDN ->
    PReLU], with the final stage ending in a sigmoid when requested."""

    def __init__(self, in_channels: int, specs: list[ConvSpec], final_sigmoid: bool = True):
        super().__init__()
        layers: list[nn.Module] = []
        ch = in_channels
        for i, spec in enumerate(specs):
            last = i == len(specs) - 1
            if spec.stride == 2:
                if ch % 4:
                    raise BadChannelCount(f"cannot pixel-shuffle {ch} channels by r=2")
                layers.append(nn.PixelShuffle(2))
                ch //= 4
            layers.append(
                nn.Conv2d(ch, spec.out_channels, spec.kernel, padding=spec.kernel // 2)
            )
            if last and final_sigmoid:
                layers.append(nn.Sigmoid())
            else:
                layers += [GDN(spec.out_channels, inverse=True), nn.PReLU(spec.out_channels)]
            ch = spec.out_channels
        self.net = nn.Sequential(*layers)
        self.out_channels = ch

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)
