"""The learned transmitter and receiver.

Transmit side: the key frame passes through a downsampling CNN stack to the
key latent; bidirectional flow between the key frame and the group's last
frame is pooled to the latent grid and expanded by a stride-1 CNN stack to
the flow latent. A gated feature-choice stage keeps a reduced joint
pathway, a dual-kernel soft-attention fusion stage mixes 3x3 and 5x5
receptive fields, and two convolution stacks map the key and fused latents
to channel-code planes whose front half becomes the real parts and back
half the imaginary parts of the transmitted symbols.

Receive side: symbols are reshaped back to code planes, decoded to latent
estimates, and a small residual U-Net with skip connections predicts the
semantic features of the non-key frame; separate pixel-shuffle decoder
stacks (with an attention-feature stage before the final block) map the
latents back to full-resolution frames, and linear interpolation fills the
remaining frames of the group.

Noise attention conditions every stage on the estimated channel SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .blocks import ConvSpec, DecoderCNN, EncoderCNN, NoiseAttention
from .channel import normalize_power_torch
from .data_io import BandwidthBudget, VideoClip
from .errors import BudgetMismatch, LengthMismatch, ShapeMismatch
from .flow import FeatureExtractor, FeatureNetConfig, bidirectional_flow_batched

MAX_CODE_CHANNELS = 64


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference design."""

    t: int = 8
    flow_feature_dim: int = 32
    flow_divisor: int = 1
    key_channels: int = 128
    flow_channels: int = 512
    chosen_channels: int = 256
    fused_channels: int = 256
    semantic_channels: int = 128
    unet_widths: tuple[int, int, int] = (192, 256, 384)
    y1: int = 8
    y2: int = 16
    squeeze_ratio: int = 4
    power: float = 1.0

    def __post_init__(self):
        if self.t < 2 or (self.t & (self.t - 1)):
            raise ValueError(f"t must be a power of two >= 2, got {self.t}")
        if self.flow_divisor < 1 or self.t % self.flow_divisor:
            raise ValueError(
                f"flow_divisor must divide t={self.t}, got {self.flow_divisor}"
            )
        if self.y1 < 1 or self.y2 < 1:
            raise ValueError("y1 and y2 must be positive")
        if (self.y1 + self.y2) % 2:
            raise ValueError(f"y1 + y2 must be even, got {self.y1 + self.y2}")

    @property
    def code_channels(self) -> int:
        return self.y1 + self.y2

    def symbols_for(self, height: int, width: int) -> int:
        """Complex symbols per clip: c' = (H/t)(W/t)(y1 + y2) / 2."""
        if height % self.t or width % self.t:
            raise ShapeMismatch(f"{height}x{width} not divisible by t={self.t}")
        return (height // self.t) * (width // self.t) * self.code_channels // 2


def choose_channel_dims(budget_k: int, latent_positions: int) -> tuple[int, int, int]:
    """Pick (y1, y2) whose symbol count lands nearest the budget.

    Only even channel totals are admissible (real/imaginary pairing).
    Ties go to the larger total, and the prediction-frame code gets the
    larger share (y2 ~ 2 * y1, mirroring the 128:256 latent split).
    """
    best = None
    for total in range(2, MAX_CODE_CHANNELS + 1, 2):
        c_prime = latent_positions * total // 2
        gap = abs(c_prime - budget_k)
        if best is None or gap < best[0] or (gap == best[0] and total > best[1]):
            best = (gap, total, c_prime)
    _, total, c_prime = best
    y2 = min(total - 1, max(1, round(2 * total / 3)))
    return total - y2, y2, c_prime


def check_budget(config: ModelConfig, height: int, width: int, budget: BandwidthBudget) -> None:
    c_prime = config.symbols_for(height, width)
    if c_prime != budget.k:
        raise BudgetMismatch(
            f"configured code emits {c_prime} symbols but the budget is k={budget.k}"
        )


def code_to_symbols(code: torch.Tensor) -> torch.Tensor:
    """Reshape code planes (B, y, h, w) into symbol pairs (B, c', 2).

    The front half of the channels supplies the real parts and the back
    half the imaginary parts. Bijective by construction.
    """
    b, y, h, w = code.shape
    if y % 2:
        raise ShapeMismatch(f"code channel count must be even, got {y}")
    half = y // 2
    real = code[:, :half].reshape(b, -1)
    imag = code[:, half:].reshape(b, -1)
    return torch.stack([real, imag], dim=-1)


def symbols_to_code(symbols: torch.Tensor, code_channels: int, h: int, w: int) -> torch.Tensor:
    """Exact inverse of :func:`code_to_symbols`."""
    b = symbols.shape[0]
    expected = code_channels * h * w // 2
    if symbols.shape[1] != expected or symbols.shape[-1] != 2:
        raise LengthMismatch(
            f"expected {expected} symbol pairs for a ({code_channels},{h},{w}) code, "
            f"got {tuple(symbols.shape[1:])}"
        )
    half = code_channels // 2
    real = symbols[..., 0].reshape(b, half, h, w)
    imag = symbols[..., 1].reshape(b, half, h, w)
    return torch.cat([real, imag], dim=1)


class FeatureChoice(nn.Module):
    """Gated keep-path fusion of the flow latent with the key-frame latent."""

    def __init__(self, flow_channels: int, key_channels: int, out_channels: int):
        super().__init__()
        self.reduce = nn.Conv2d(flow_channels, out_channels, 1)
        self.transform = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.lift = nn.Conv2d(key_channels, out_channels, 1)
        self.gate = nn.Conv2d(2 * out_channels, out_channels, 1)

    def forward(self, flow_latent, key_latent, gate_override=None):
        if flow_latent.shape[-2:] != key_latent.shape[-2:]:
            raise ShapeMismatch(
                f"spatial dims differ: {tuple(flow_latent.shape[-2:])} vs "
                f"{tuple(key_latent.shape[-2:])}"
            )
        kept = self.transform(self.reduce(flow_latent))
        lifted = self.lift(key_latent)
        if gate_override is None:
            a = torch.sigmoid(self.gate(torch.cat([kept, lifted], dim=1)))
        else:
            a = torch.as_tensor(gate_override, dtype=kept.dtype, device=kept.device)
        return a * kept + (1.0 - a) * lifted


class FeatureFusion(nn.Module):
    """Dual-kernel soft attention: 3x3 and 5x5 branches mixed per channel by
    softmax weights, then noise attention on the result."""

    def __init__(self, in_channels: int, key_channels: int, out_channels: int,
                 squeeze_ratio: int = 4):
        super().__init__()
        self.lift = nn.Conv2d(key_channels, out_channels, 1)
        joint = in_channels + out_channels
        self.branch_a = nn.Conv2d(joint, out_channels, 3, padding=1)
        self.branch_b = nn.Conv2d(joint, out_channels, 5, padding=2)
        hidden = max(16, out_channels // squeeze_ratio)
        self.fc = nn.Linear(out_channels, hidden)
        self.fc_a = nn.Linear(hidden, out_channels)
        self.fc_b = nn.Linear(hidden, out_channels)
        self.attend = NoiseAttention(out_channels, squeeze_ratio)

    def branch_weights(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        z = F.relu(self.fc((a + b).mean(dim=(2, 3))))
        logits = torch.stack([self.fc_a(z), self.fc_b(z)])
        return torch.softmax(logits, dim=0)

    def forward(self, chosen, key_latent, snr_db, return_weights: bool = False):
        if chosen.shape[-2:] != key_latent.shape[-2:]:
            raise ShapeMismatch("feature fusion inputs disagree spatially")
        x = torch.cat([chosen, self.lift(key_latent)], dim=1)
        a = self.branch_a(x)
        b = self.branch_b(x)
        w = self.branch_weights(a, b)
        fused = w[0, :, :, None, None] * a + w[1, :, :, None, None] * b
        out = self.attend(fused, snr_db)
        if return_weights:
            return out, w
        return out


class ChannelEncoder(nn.Module):
    """Cascaded convolutions mapping latents to channel-code planes."""

    def __init__(self, key_channels: int, fused_channels: int, y1: int, y2: int):
        super().__init__()
        self.key_head = nn.Sequential(
            nn.Conv2d(key_channels, 64, 3, padding=1), nn.PReLU(64),
            nn.Conv2d(64, y1, 3, padding=1),
        )
        self.pred_head = nn.Sequential(
            nn.Conv2d(fused_channels, 128, 3, padding=1), nn.PReLU(128),
            nn.Conv2d(128, y2, 3, padding=1),
        )

    def forward(self, key_latent, fused_latent) -> torch.Tensor:
        return torch.cat([self.key_head(key_latent), self.pred_head(fused_latent)], dim=1)


class ChannelDecoder(nn.Module):
    """Inverse convolution stacks plus noise attention on each latent."""

    def __init__(self, key_channels: int, fused_channels: int, y1: int, y2: int,
                 squeeze_ratio: int = 4):
        super().__init__()
        self.y1 = y1
        self.key_tail = nn.Sequential(
            nn.Conv2d(y1, 64, 3, padding=1), nn.PReLU(64),
            nn.Conv2d(64, key_channels, 3, padding=1),
        )
        self.pred_tail = nn.Sequential(
            nn.Conv2d(y2, 128, 3, padding=1), nn.PReLU(128),
            nn.Conv2d(128, fused_channels, 3, padding=1),
        )
        self.attend_key = NoiseAttention(key_channels, squeeze_ratio)
        self.attend_pred = NoiseAttention(fused_channels, squeeze_ratio)

    def forward(self, code: torch.Tensor, snr_db):
        key = self.attend_key(self.key_tail(code[:, : self.y1]), snr_db)
        pred = self.attend_pred(self.pred_tail(code[:, self.y1 :]), snr_db)
        return key, pred


class ResConv(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.act1 = nn.PReLU(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1, stride=stride)
        self.act2 = nn.PReLU(out_channels)

    def forward(self, x):
        return self.act2(self.conv2(self.act1(self.conv1(x))) + self.skip(x))


class UpBlock(nn.Module):
    """Nearest-neighbor upsample, merge with the skip, and attend to noise."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int,
                 squeeze_ratio: int = 4):
        super().__init__()
        self.conv = ResConv(in_channels + skip_channels, out_channels)
        self.attend = NoiseAttention(out_channels, squeeze_ratio)

    def forward(self, x, skip, snr_db):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.attend(self.conv(torch.cat([x, skip], dim=1)), snr_db)


class ResUNet(nn.Module):
    """Two down blocks, a bottleneck, and two skip-connected up blocks."""

    def __init__(self, in_channels: int, widths: tuple[int, int, int],
                 out_channels: int, squeeze_ratio: int = 4):
        super().__init__()
        w0, w1, w2 = widths
        self.inc = ResConv(in_channels, w0)
        self.down1 = ResConv(w0, w1, stride=2)
        self.down2 = ResConv(w1, w2, stride=2)
        self.bottleneck = ResConv(w2, w2)
        self.up1 = UpBlock(w2, w1, w1, squeeze_ratio)
        self.up2 = UpBlock(w1, w0, w0, squeeze_ratio)
        self.head = nn.Conv2d(w0, out_channels, 3, padding=1)

    def forward(self, x, snr_db):
        x0 = self.inc(x)
        x1 = self.down1(x0)
        x2 = self.bottleneck(self.down2(x1))
        u1 = self.up1(x2, x1, snr_db)
        u2 = self.up2(u1, x0, snr_db)
        return self.head(u2)


class AFBlock(nn.Module):
    """Attention-feature stage: trunk scaled by (1 + sigmoid(mask))."""

    def __init__(self, channels: int):
        super().__init__()
        self.trunk = nn.Sequential(nn.Conv2d(channels, channels, 3, padding=1),
                                   nn.PReLU(channels))
        self.mask = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return self.trunk(x) * (1.0 + torch.sigmoid(self.mask(x)))


class FrameDecoder(nn.Module):
    """Pixel-shuffle upsampling from the latent grid back to (3, H, W)."""

    def __init__(self, in_channels: int, t: int, mid_channels: int = 128):
        super().__init__()
        stages = int(math.log2(t))
        pre_specs = [ConvSpec(3, mid_channels, 2) for _ in range(stages - 1)]
        self.pre = DecoderCNN(in_channels, pre_specs, final_sigmoid=False) if pre_specs else None
        self.af = AFBlock(mid_channels if pre_specs else in_channels)
        self.post = DecoderCNN(mid_channels if pre_specs else in_channels,
                               [ConvSpec(3, 3, 2)], final_sigmoid=True)

    def forward(self, x):
        if self.pre is not None:
            x = self.pre(x)
        return self.post(self.af(x))


def _key_encoder_specs(t: int, key_channels: int) -> list[ConvSpec]:
    stages = int(math.log2(t))
    widths = {1: [key_channels], 2: [64, key_channels], 3: [64, 96, key_channels]}
    if stages not in widths:
        raise ValueError(f"unsupported downsampling factor t={t}")
    return [ConvSpec(5, w, 2) for w in widths[stages]]


@dataclass
class EncoderLatents:
    """Intermediate transmitter features, validated against the config."""

    flow_latent: torch.Tensor
    key_latent: torch.Tensor
    chosen: torch.Tensor
    fused: torch.Tensor

    def validate(self, config: ModelConfig, height: int, width: int) -> None:
        hw = (height // config.t, width // config.t)
        expected = {
            "flow_latent": config.flow_channels,
            "key_latent": config.key_channels,
            "chosen": config.chosen_channels,
            "fused": config.fused_channels,
        }
        for name, channels in expected.items():
            tensor = getattr(self, name)
            if tuple(tensor.shape[-2:]) != hw or tensor.shape[-3] != channels:
                raise ShapeMismatch(
                    f"{name} has shape {tuple(tensor.shape)}, expected "
                    f"(..., {channels}, {hw[0]}, {hw[1]})"
                )


class SemanticEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.flow_net = FeatureExtractor(FeatureNetConfig(dim=config.flow_feature_dim))
        self.key_cnn = EncoderCNN(3, _key_encoder_specs(config.t, config.key_channels))
        self.flow_cnn = EncoderCNN(4, [ConvSpec(3, 256, 1), ConvSpec(3, config.flow_channels, 1)])
        self.attend_key = NoiseAttention(config.key_channels, config.squeeze_ratio)
        self.attend_flow = NoiseAttention(config.flow_channels, config.squeeze_ratio)
        self.attend_chosen = NoiseAttention(config.chosen_channels, config.squeeze_ratio)
        self.choice = FeatureChoice(config.flow_channels, config.key_channels,
                                    config.chosen_channels)
        self.fusion = FeatureFusion(config.chosen_channels, config.key_channels,
                                    config.fused_channels, config.squeeze_ratio)
        self.channel_encoder = ChannelEncoder(config.key_channels, config.fused_channels,
                                              config.y1, config.y2)

    def compute_flow(self, key: torch.Tensor, last: torch.Tensor) -> torch.Tensor:
        d = self.config.flow_divisor
        if d > 1:
            key = F.avg_pool2d(key, d)
            last = F.avg_pool2d(last, d)
        feats = self.flow_net(torch.cat([key, last], dim=0))
        b = key.shape[0]
        return bidirectional_flow_batched(feats[:b], feats[b:])

    def latents(self, frames: torch.Tensor, snr_db, flow: torch.Tensor | None = None
                ) -> EncoderLatents:
        if frames.dim() != 5 or frames.shape[2] != 3:
            raise ShapeMismatch(f"expected (B, N, 3, H, W) frames, got {tuple(frames.shape)}")
        h, w = frames.shape[-2:]
        if h % self.config.t or w % self.config.t:
            raise ShapeMismatch(f"{h}x{w} not divisible by t={self.config.t}")
        key, last = frames[:, 0], frames[:, -1]
        if flow is None:
            flow = self.compute_flow(key, last)
        pool = flow.shape[-1] // (w // self.config.t)
        flow_small = F.avg_pool2d(flow, pool) if pool > 1 else flow
        key_latent = self.attend_key(self.key_cnn(key), snr_db)
        flow_latent = self.attend_flow(self.flow_cnn(flow_small), snr_db)
        chosen = self.attend_chosen(self.choice(flow_latent, key_latent), snr_db)
        fused = self.fusion(chosen, key_latent, snr_db)
        return EncoderLatents(flow_latent=flow_latent, key_latent=key_latent,
                              chosen=chosen, fused=fused)

    def forward(self, frames: torch.Tensor, snr_db, flow: torch.Tensor | None = None
                ) -> torch.Tensor:
        latents = self.latents(frames, snr_db, flow)
        code = self.channel_encoder(latents.key_latent, latents.fused)
        return code_to_symbols(code)


class SemanticDecoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.channel_decoder = ChannelDecoder(config.key_channels, config.fused_channels,
                                              config.y1, config.y2, config.squeeze_ratio)
        self.unet = ResUNet(config.fused_channels + config.key_channels,
                            config.unet_widths, config.semantic_channels,
                            config.squeeze_ratio)
        self.key_decoder = FrameDecoder(config.key_channels, config.t)
        self.pred_decoder = FrameDecoder(config.semantic_channels, config.t)

    def predict(self, key_latent: torch.Tensor, fused_latent: torch.Tensor, snr_db
                ) -> tuple[torch.Tensor, torch.Tensor]:
        semantic = self.unet(torch.cat([fused_latent, key_latent], dim=1), snr_db)
        return self.key_decoder(key_latent), self.pred_decoder(semantic)

    def forward(self, symbols: torch.Tensor, grid_hw: tuple[int, int], snr_db
                ) -> tuple[torch.Tensor, torch.Tensor]:
        code = symbols_to_code(symbols, self.config.code_channels, *grid_hw)
        key_latent, fused_latent = self.channel_decoder(code, snr_db)
        return self.predict(key_latent, fused_latent, snr_db)


def interpolate_frames(key: torch.Tensor, pred: torch.Tensor, group_size: int
                       ) -> torch.Tensor:
    """Linear blends from the key frame to the predicted frame, (B, N, 3, H, W)."""
    if group_size < 2:
        raise ShapeMismatch(f"group_size must be >= 2, got {group_size}")
    frames = []
    for j in range(group_size):
        alpha = j / (group_size - 1)
        frames.append((1.0 - alpha) * key + alpha * pred)
    return torch.stack(frames, dim=1)


def interpolate_sequence(key: np.ndarray, pred: np.ndarray, group_size: int) -> VideoClip:
    """Clip-level wrapper over :func:`interpolate_frames` for (H, W, 3) arrays."""
    k = torch.from_numpy(np.ascontiguousarray(key, dtype=np.float32)).permute(2, 0, 1)
    p = torch.from_numpy(np.ascontiguousarray(pred, dtype=np.float32)).permute(2, 0, 1)
    frames = interpolate_frames(k[None], p[None], group_size)[0]
    return VideoClip(frames.permute(0, 2, 3, 1).numpy())


class VideoSemanticModel(nn.Module):
    """End-to-end encoder, power normalization, and decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = SemanticEncoder(config)
        self.decoder = SemanticDecoder(config)

    def forward(self, frames: torch.Tensor, snr_db, noise: torch.Tensor | None = None
                ) -> dict:
        grid_hw = (frames.shape[-2] // self.config.t, frames.shape[-1] // self.config.t)
        symbols = self.encoder(frames, snr_db)
        tx = normalize_power_torch(symbols, self.config.power)
        rx = tx if noise is None else tx + noise.to(tx.dtype)
        key, pred = self.decoder(rx, grid_hw, snr_db)
        recon = interpolate_frames(key, pred, frames.shape[1])
        return {"symbols": symbols, "tx": tx, "rx": rx, "key": key, "pred": pred,
                "recon": recon}

    def symbols_per_clip(self, height: int, width: int) -> int:
        return self.config.symbols_for(height, width)


def default_downsampling(height: int, width: int) -> int:
    """t = 8 for >= 64-pixel frames, t = 4 at desk scale."""
    return 8 if min(height, width) >= 64 else 4


def build_model(
    height: int,
    width: int,
    group_size: int,
    rho: float,
    t: int | None = None,
    **overrides,
) -> tuple[VideoSemanticModel, BandwidthBudget, float]:
    """Construct a model whose symbol count lands nearest the target ratio.

    Returns the model, the target budget, and the achieved ratio c'/m.
    """
    from .data_io import budget_for

    t = t if t is not None else default_downsampling(height, width)
    budget = budget_for(rho, height, width, group_size)
    positions = (height // t) * (width // t)
    y1, y2, c_prime = choose_channel_dims(budget.k, positions)
    config = ModelConfig(t=t, y1=y1, y2=y2, **overrides)
    model = VideoSemanticModel(config)
    return model, budget, c_prime / budget.m
