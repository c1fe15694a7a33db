"""Training with a random-SNR curriculum, evaluation sweeps, checkpoints.

Each training step draws one SNR uniformly from the configured range for
the whole batch, feeds that value both to the channel and to every noise
attention module (perfect estimation during training), and takes one Adam
step on the reconstruction loss over all frames of the group. Channel
noise is drawn from the run's seeded stream and treated as a constant of
the step, so gradients pass through the channel unchanged. Everything is
deterministic under the config seed.

Evaluation sweeps a grid of (true SNR, estimated SNR) points; the noise
realization at a grid point depends only on the true SNR and the clip, so
mismatch sweeps vary the estimate against a fixed channel draw.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .channel import sigma_from_snr
from .data_io import BandwidthBudget, VideoClip
from .errors import Diverged, IncompatibleCheckpoint
from .metrics import ms_ssim, ms_ssim_torch, psnr
from .model import ModelConfig, VideoSemanticModel, build_model

SWEEP_HEADER = "snr_test_db,snr_est_db,rho,psnr_db,ms_ssim,symbols"
LOSS_HEADER = "step,loss,snr_db"

MS_SSIM_LOSS_WEIGHT = 0.1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    steps: int = 1000
    t: int | None = None
    rho: float = 0.031
    snr_low: float = -5.0
    snr_high: float = 15.0
    seed: int = 0
    loss: str = "mse"  # "mse" or "mse+ms_ssim"
    channel_family: str = "awgn"  # "awgn" or "noiseless"
    power: float = 1.0
    stop_mse: float | None = None
    flow_divisor: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.snr_low >= self.snr_high and self.steps > 0 and self.channel_family == "awgn":
            if self.snr_low > self.snr_high:
                raise ValueError("snr_low must not exceed snr_high")
        if self.loss not in ("mse", "mse+ms_ssim"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.channel_family not in ("awgn", "noiseless"):
            raise ValueError(f"unknown channel family {self.channel_family!r}")


@dataclass
class TrainResult:
    model: VideoSemanticModel
    loss_rows: list[tuple[int, float, float]]
    budget: BandwidthBudget
    achieved_rho: float
    steps_run: int


def sample_snr(snr_range: tuple[float, float], rng: np.random.Generator) -> float:
    """Uniform draw from [low, high] dB; degenerate ranges return the point."""
    low, high = snr_range
    if low == high:
        return float(low)
    return float(rng.uniform(low, high))


def clips_to_tensor(clips: list[VideoClip]) -> torch.Tensor:
    frames = np.stack([c.frames for c in clips])  # (n, N, H, W, 3)
    return torch.from_numpy(frames.transpose(0, 1, 4, 2, 3).copy())


def _complex_noise(rng: np.random.Generator, shape: tuple[int, int], sigma2: float
                   ) -> torch.Tensor:
    scale = math.sqrt(sigma2 / 2.0)
    noise = scale * rng.standard_normal(shape + (2,))
    return torch.from_numpy(noise).to(torch.float32)


def _loss_terms(cfg: TrainConfig, recon: torch.Tensor, target: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
    mse = torch.mean((recon - target) ** 2)
    loss = mse
    if cfg.loss == "mse+ms_ssim":
        b, n, c, h, w = recon.shape
        quality = ms_ssim_torch(recon.reshape(b * n, c, h, w),
                                target.reshape(b * n, c, h, w)).mean()
        loss = mse + MS_SSIM_LOSS_WEIGHT * (1.0 - quality)
    return loss, mse


def train(
    cfg: TrainConfig,
    dataset: list[VideoClip],
    model: VideoSemanticModel | None = None,
    model_overrides: dict | None = None,
    log_hook=None,
) -> TrainResult:
    """Run the optimization loop; returns the trained model and loss curve."""
    if not dataset:
        raise ValueError("dataset must not be empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    first = dataset[0]
    if model is None:
        overrides = dict(model_overrides or {})
        overrides.setdefault("flow_divisor", cfg.flow_divisor)
        overrides.setdefault("power", cfg.power)
        model, budget, achieved = build_model(
            first.height, first.width, first.group_size, cfg.rho, t=cfg.t, **overrides
        )
    else:
        from .data_io import budget_for

        budget = budget_for(cfg.rho, first.height, first.width, first.group_size)
        achieved = model.symbols_per_clip(first.height, first.width) / budget.m

    data = clips_to_tensor(dataset)
    n_clips = data.shape[0]
    c_prime = model.symbols_per_clip(first.height, first.width)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    rows: list[tuple[int, float, float]] = []
    steps_run = 0
    model.train()
    for step in range(cfg.steps):
        idx = rng.choice(n_clips, size=cfg.batch_size, replace=cfg.batch_size > n_clips)
        batch = data[torch.from_numpy(np.ascontiguousarray(idx))]
        snr = sample_snr((cfg.snr_low, cfg.snr_high), rng)
        noise = None
        if cfg.channel_family == "awgn":
            sigma2 = sigma_from_snr(snr, cfg.power)
            noise = _complex_noise(rng, (cfg.batch_size, c_prime), sigma2)

        out = model(batch, snr, noise)
        loss, mse = _loss_terms(cfg, out["recon"], batch)
        value = float(loss.item())
        if not math.isfinite(value):
            raise Diverged(step, value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        rows.append((step, value, snr))
        steps_run = step + 1
        if log_hook is not None:
            log_hook(step, value, snr)
        if cfg.stop_mse is not None and float(mse.item()) < cfg.stop_mse:
            break

    model.eval()
    return TrainResult(model=model, loss_rows=rows, budget=budget,
                       achieved_rho=achieved, steps_run=steps_run)


def _point_seed(base_seed: int, snr_test_db: float) -> int:
    tag = f"{base_seed}:{snr_test_db:.6f}".encode()
    return int.from_bytes(hashlib.sha256(tag).digest()[:8], "little")


@dataclass
class SweepRow:
    snr_test_db: float
    snr_est_db: float
    rho: float
    psnr_db: float
    ms_ssim: float
    symbols: int
    system: str = "learned"


def evaluate(
    model: VideoSemanticModel,
    dataset: list[VideoClip],
    grid: list[tuple[float, float]],
    seed: int = 0,
    rho: float | None = None,
) -> list[SweepRow]:
    """Average metrics over the dataset at each (snr_test, snr_est) point.

    A non-finite snr_test denotes the noiseless channel. The noise draw at
    a grid point is a function of (seed, snr_test) only, so sweeping the
    estimated SNR holds the channel realization fixed.
    """
    first = dataset[0]
    c_prime = model.symbols_per_clip(first.height, first.width)
    reported_rho = rho if rho is not None else c_prime / (3 * first.height * first.width
                                                          * first.group_size)
    data = clips_to_tensor(dataset)
    n = data.shape[0]
    rows = []
    model.eval()
    with torch.no_grad():
        for snr_test, snr_est in grid:
            if math.isfinite(snr_test):
                rng = np.random.default_rng(_point_seed(seed, snr_test))
                sigma2 = sigma_from_snr(snr_test, model.config.power)
                noise = _complex_noise(rng, (n, c_prime), sigma2)
            else:
                noise = None
            out = model(data, snr_est, noise)
            recon = out["recon"].permute(0, 1, 3, 4, 2).numpy()
            original = data.permute(0, 1, 3, 4, 2).numpy()
            psnrs = [psnr(original[i], np.clip(recon[i], 0.0, 1.0)) for i in range(n)]
            quality = [ms_ssim(original[i], np.clip(recon[i], 0.0, 1.0)) for i in range(n)]
            rows.append(SweepRow(
                snr_test_db=float(snr_test), snr_est_db=float(snr_est),
                rho=reported_rho, psnr_db=float(np.mean(psnrs)),
                ms_ssim=float(np.mean(quality)), symbols=c_prime,
            ))
    return rows


# --- serialization ---

def format_sweep_rows(rows: list[SweepRow], with_system: bool = False) -> str:
    header = SWEEP_HEADER + (",system" if with_system else "")
    lines = [header]
    for r in rows:
        base = (f"{r.snr_test_db:.6g},{r.snr_est_db:.6g},{r.rho:.8g},"
                f"{r.psnr_db:.6f},{r.ms_ssim:.6f},{r.symbols}")
        lines.append(base + (f",{r.system}" if with_system else ""))
    return "\n".join(lines) + "\n"


def parse_sweep_csv(text: str) -> list[SweepRow]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append(SweepRow(
            snr_test_db=float(parts[0]), snr_est_db=float(parts[1]),
            rho=float(parts[2]), psnr_db=float(parts[3]), ms_ssim=float(parts[4]),
            symbols=int(parts[5]),
            system=parts[6] if len(header) > 6 else "learned",
        ))
    return rows


def format_loss_rows(rows: list[tuple[int, float, float]]) -> str:
    lines = [LOSS_HEADER]
    for step, loss, snr in rows:
        lines.append(f"{step},{loss:.10e},{snr:.6g}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path: str, model: VideoSemanticModel, step: int,
                    extra: dict | None = None) -> None:
    payload = {
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "step": step,
    }
    payload.update(extra or {})
    torch.save(payload, path)


def load_checkpoint(path: str) -> tuple[VideoSemanticModel, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise IncompatibleCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        raw = dict(payload["model_config"])
        raw["unet_widths"] = tuple(raw["unet_widths"])
        config = ModelConfig(**raw)
        model = VideoSemanticModel(config)
        model.load_state_dict(payload["state_dict"], strict=True)
    except (KeyError, RuntimeError, TypeError, ValueError) as exc:
        raise IncompatibleCheckpoint(f"checkpoint {path} does not match: {exc}") from exc
    model.eval()
    meta = {k: v for k, v in payload.items() if k not in ("model_config", "state_dict")}
    meta["model_config"] = payload["model_config"]
    return model, meta
