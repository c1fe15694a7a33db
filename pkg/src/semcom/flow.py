"""Bidirectional optical flow by global correlation matching.

Two frames pass through one weight-shared convolutional feature net. Every
pixel of the first frame is scored against every pixel of the second via
the dot-product correlation C = F1 F2^T / sqrt(D); a row-wise softmax over
C turns the scores into matching weights, whose weighted average of the
pixel grid gives the soft correspondence. Flow is the correspondence minus
the grid, computed in both temporal directions (the backward direction
reuses C transposed) and stacked on the channel axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NonFiniteCorrelation, ShapeMismatch

# Global matching is quadratic in pixel count; keep desk-scale inputs sane.
MAX_POSITIONS = 4096


@dataclass(frozen=True)
class FeatureNetConfig:
    dim: int = 32
    hidden: int = 32
    padding_mode: str = "zeros"  # "circular" makes the net shift-equivariant
    center: bool = False  # remove the spatial-mean descriptor component
    normalize: bool = False  # L2-normalize each pixel descriptor
    scale: float = 1.0  # descriptor magnitude after normalization


class FeatureExtractor(nn.Module):
    """Two stride-1 3x3 convolutions applied identically to both frames."""

    def __init__(self, config: FeatureNetConfig = FeatureNetConfig()):
        super().__init__()
        self.config = config
        self.conv1 = nn.Conv2d(3, config.hidden, 3, padding=1, padding_mode=config.padding_mode)
        self.act = nn.PReLU(config.hidden)
        self.conv2 = nn.Conv2d(
            config.hidden, config.dim, 3, padding=1, padding_mode=config.padding_mode
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.conv2(self.act(self.conv1(x)))
        if self.config.center:
            f = f - f.mean(dim=(-2, -1), keepdim=True)
        if self.config.normalize:
            f = self.config.scale * F.normalize(f, dim=-3, eps=1e-8)
        return f


@dataclass
class DenseFeatures:
    """Per-pixel descriptors (H, W, D) for the two frames."""

    f1: torch.Tensor
    f2: torch.Tensor

    def __post_init__(self):
        if self.f1.shape != self.f2.shape:
            raise ShapeMismatch(
                f"feature maps differ: {tuple(self.f1.shape)} vs {tuple(self.f2.shape)}"
            )
        if self.f1.dim() != 3:
            raise ShapeMismatch(f"expected (H, W, D) features, got {tuple(self.f1.shape)}")
        if not (torch.isfinite(self.f1).all() and torch.isfinite(self.f2).all()):
            raise ShapeMismatch("features contain non-finite values")

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.f1.shape[0], self.f1.shape[1]


@dataclass
class FlowField:
    """Forward (dx, dy) and backward (dx, dy) displacements in pixels."""

    v: torch.Tensor  # (H, W, 4)

    def __post_init__(self):
        if self.v.dim() != 3 or self.v.shape[-1] != 4:
            raise ShapeMismatch(f"expected (H, W, 4) flow, got {tuple(self.v.shape)}")

    @property
    def forward(self) -> torch.Tensor:
        return self.v[..., :2]

    @property
    def backward(self) -> torch.Tensor:
        return self.v[..., 2:]


def extract_features(frame1, frame2, net: FeatureExtractor) -> DenseFeatures:
    """Run both frames through the same parameters (weight sharing)."""
    t1 = torch.as_tensor(frame1)
    t2 = torch.as_tensor(frame2)
    if t1.shape != t2.shape:
        raise ShapeMismatch(f"frames differ: {tuple(t1.shape)} vs {tuple(t2.shape)}")
    if t1.dim() != 3 or t1.shape[-1] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) frames, got {tuple(t1.shape)}")
    dtype = next(net.parameters()).dtype
    batch = torch.stack([t1, t2]).to(dtype).permute(0, 3, 1, 2)
    feats = net(batch).permute(0, 2, 3, 1)
    return DenseFeatures(f1=feats[0], f2=feats[1])


def pixel_grid(height: int, width: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Integer pixel coordinates as (H, W, 2) with channels (x, y)."""
    ys = torch.arange(height, dtype=dtype, device=device)
    xs = torch.arange(width, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def correlation_volume(feats: DenseFeatures) -> torch.Tensor:
    """All-pairs dot products, entry (p, q) = <f1[p], f2[q]> / sqrt(D)."""
    h, w, d = feats.f1.shape
    if d < 1:
        raise ShapeMismatch("feature dimension must be >= 1")
    if h * w > MAX_POSITIONS:
        raise ShapeMismatch(
            f"grid of {h * w} positions exceeds the {MAX_POSITIONS} matching cap"
        )
    a = feats.f1.reshape(h * w, d)
    b = feats.f2.reshape(h * w, d)
    return (a @ b.transpose(0, 1)) / math.sqrt(d)


def match_and_flow(corr: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Soft correspondence minus the grid: softmax(C) G - G, shape (H, W, 2)."""
    if not torch.isfinite(corr).all():
        raise NonFiniteCorrelation("correlation volume contains non-finite values")
    h, w = grid.shape[0], grid.shape[1]
    if corr.shape != (h * w, h * w):
        raise ShapeMismatch(
            f"correlation {tuple(corr.shape)} does not match grid {h}x{w}"
        )
    points = grid.reshape(h * w, 2).to(corr.dtype)
    matched = torch.softmax(corr, dim=-1) @ points
    return (matched - points).reshape(h, w, 2)


def bidirectional_flow(feats: DenseFeatures) -> FlowField:
    """Forward flow from C and backward flow from C^T, stacked channelwise."""
    corr = correlation_volume(feats)
    grid = pixel_grid(*feats.grid_hw, dtype=corr.dtype, device=corr.device)
    fwd = match_and_flow(corr, grid)
    bwd = match_and_flow(corr.transpose(0, 1), grid)
    return FlowField(v=torch.cat([fwd, bwd], dim=-1))


def bidirectional_flow_batched(f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
    """Batched variant on (B, D, H, W) feature maps, returning (B, 4, H, W)."""
    b, d, h, w = f1.shape
    if h * w > MAX_POSITIONS:
        raise ShapeMismatch(
            f"grid of {h * w} positions exceeds the {MAX_POSITIONS} matching cap"
        )
    a = f1.flatten(2).transpose(1, 2)
    c = f2.flatten(2).transpose(1, 2)
    corr = torch.bmm(a, c.transpose(1, 2)) / math.sqrt(d)
    points = pixel_grid(h, w, dtype=corr.dtype, device=corr.device).reshape(h * w, 2)
    fwd = torch.softmax(corr, dim=-1) @ points - points
    bwd = torch.softmax(corr.transpose(1, 2), dim=-1) @ points - points
    flow = torch.cat([fwd, bwd], dim=-1)
    return flow.transpose(1, 2).reshape(b, 4, h, w)
