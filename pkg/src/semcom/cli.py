"""Command-line entry points.

Commands: `train` (fit a model from a config document), `sweep` (evaluate a
checkpoint across an SNR grid, optionally against the digital baseline),
`transmit` (send one clip end to end and report metrics), and `baseline`
(run the digital pipeline alone across a grid). Delimited outputs land at
the requested path; `--plot` renders a figure next to them.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np
import torch

from . import baseline as digital
from .channel import Channel, ChannelSpec
from .config import load_config, load_dataset
from .data_io import load_clip, write_clip, VideoClip
from .errors import ConfigError, Diverged, IncompatibleCheckpoint, SemcomError
from .metrics import metric_report
from .training import (
    SweepRow,
    evaluate,
    format_loss_rows,
    format_sweep_rows,
    load_checkpoint,
    save_checkpoint,
    train,
)


def parse_grid(spec: str) -> list[float]:
    """Parse "low:high:step" (inclusive, dB) into grid points."""
    try:
        low, high, step = (float(p) for p in spec.split(":"))
    except ValueError as exc:
        raise ValueError(f"grid must look like 'low:high:step', got {spec!r}") from exc
    if step <= 0 or high < low:
        return []
    count = int(math.floor((high - low) / step + 1e-9)) + 1
    return [low + i * step for i in range(count)]


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _baseline_rows(clips: list[VideoClip], grid: list[float], bits: int,
                   power: float, seed: int) -> list[SweepRow]:
    """Digital-pipeline rows averaged over the clips, one per grid point."""
    first = clips[0]
    m = first.source_dimension()
    coded_bits = m * bits * 7 // 4  # one BPSK channel use per coded bit
    rows = []
    for i, snr in enumerate(grid):
        psnrs, quality = [], []
        for j, clip in enumerate(clips):
            cfg = digital.DigitalConfig(bits_per_pixel=bits, snr_test_db=snr,
                                        power=power, seed=seed + 7919 * i + 104729 * j)
            recon, value = digital.run_digital_pipeline(clip, cfg)
            psnrs.append(value)
            quality.append(metric_report(clip, recon).ms_ssim)
        rows.append(SweepRow(
            snr_test_db=float(snr), snr_est_db=float(snr), rho=coded_bits / m,
            psnr_db=float(np.mean(psnrs)), ms_ssim=float(np.mean(quality)),
            symbols=coded_bits, system="digital",
        ))
    return rows


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = cfg.train if args.seed is None else replace(cfg.train, seed=args.seed)
    dataset = load_dataset(cfg.data)
    result = train(train_cfg, dataset, model_overrides=cfg.model_overrides)

    os.makedirs(args.output_dir, exist_ok=True)
    ckpt_path = os.path.join(args.output_dir, "checkpoint.pt")
    loss_path = os.path.join(args.output_dir, "loss.csv")
    first = dataset[0]
    save_checkpoint(ckpt_path, result.model, result.steps_run, extra={
        "config_fingerprint": cfg.fingerprint,
        "config_document": cfg.document,
        "height": first.height, "width": first.width,
        "group_size": first.group_size,
        "rho": train_cfg.rho, "achieved_rho": result.achieved_rho,
        "budget_k": result.budget.k,
    })
    _write(loss_path, format_loss_rows(result.loss_rows))
    if args.plot:
        from .plotting import render_loss_plot

        render_loss_plot(result.loss_rows, os.path.splitext(loss_path)[0] + ".png")
    print(f"checkpoint: {ckpt_path}")
    print(f"loss curve: {loss_path} ({result.steps_run} steps)")
    return 0


def cmd_sweep(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    grid = parse_grid(args.grid)
    if not grid:
        print(f"error: grid {args.grid!r} contains no points", file=sys.stderr)
        return 2
    data_doc = meta.get("config_document", {}).get("data", {})
    if args.config:
        data_doc = load_config(args.config).data
    dataset = load_dataset(data_doc)
    first = dataset[0]
    if args.rho is not None:
        expected = model.symbols_per_clip(first.height, first.width)
        from .data_io import budget_for
        from .model import choose_channel_dims

        budget = budget_for(args.rho, first.height, first.width, first.group_size)
        positions = (first.height // model.config.t) * (first.width // model.config.t)
        _, _, c_prime = choose_channel_dims(budget.k, positions)
        if c_prime != expected:
            raise IncompatibleCheckpoint(
                f"checkpoint emits {expected} symbols; rho={args.rho} needs {c_prime}"
            )

    if args.snr_test is not None:
        points = [(float(args.snr_test), est) for est in grid]
    else:
        points = [(snr, snr) for snr in grid]
    rows = evaluate(model, dataset, points, seed=args.seed, rho=args.rho)
    if args.with_baseline:
        rows = rows + _baseline_rows(dataset, [p for p in grid], args.bits,
                                     model.config.power, args.seed)
    _write(args.output, format_sweep_rows(rows, with_system=args.with_baseline))
    if args.plot:
        from .plotting import render_sweep_plot

        render_sweep_plot(rows, os.path.splitext(args.output)[0] + ".png")
    print(f"sweep: {args.output} ({len(rows)} rows)")
    return 0


def cmd_transmit(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    clip = load_clip(args.clip, args.group_size, t=model.config.t)
    spec = ChannelSpec(family=args.family, snr_test_db=args.snr_test,
                       snr_est_db=args.snr_est, power=model.config.power,
                       seed=args.seed)
    grid = [(spec.snr_test_db if spec.family == "awgn" else math.inf,
             spec.estimated_snr_db)]
    frames = torch.from_numpy(clip.frames.transpose(0, 3, 1, 2).copy()).unsqueeze(0)
    with torch.no_grad():
        c_prime = model.symbols_per_clip(clip.height, clip.width)
        noise = None
        if spec.family == "awgn":
            channel = Channel(spec)
            from .channel import noise_to_torch

            noise = noise_to_torch(channel.draw_noise(c_prime))
        out = model(frames, spec.estimated_snr_db, noise)
    recon_frames = np.clip(out["recon"][0].permute(0, 2, 3, 1).numpy(), 0.0, 1.0)
    recon = VideoClip(recon_frames)
    write_clip(recon, args.output)
    report = metric_report(clip, recon)
    print(f"psnr_db={report.psnr_db:.4f}")
    print(f"ms_ssim={report.ms_ssim:.6f}")
    print(f"symbols={c_prime}")
    print(f"output: {args.output}")
    return 0


def cmd_baseline(args) -> int:
    clip = load_clip(args.clip, args.group_size)
    grid = parse_grid(args.grid)
    if not grid:
        print(f"error: grid {args.grid!r} contains no points", file=sys.stderr)
        return 2
    rows = _baseline_rows([clip], grid, args.bits, args.power, args.seed)
    _write(args.output, format_sweep_rows(rows, with_system=True))
    if args.plot:
        from .plotting import render_sweep_plot

        render_sweep_plot(rows, os.path.splitext(args.output)[0] + ".png")
    print(f"baseline sweep: {args.output} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcom",
        description="Learned video transmission over simulated noisy channels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config document")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.add_argument("--output-dir", default=".")
    p_train.add_argument("--plot", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="evaluate a checkpoint across an SNR grid")
    p_sweep.add_argument("--checkpoint", required=True)
    p_sweep.add_argument("--grid", required=True, help="low:high:step in dB")
    p_sweep.add_argument("--output", required=True)
    p_sweep.add_argument("--config", default=None, help="override the dataset config")
    p_sweep.add_argument("--rho", type=float, default=None)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--snr-test", type=float, default=None,
                         help="fix the true SNR and sweep the estimate instead")
    p_sweep.add_argument("--with-baseline", action="store_true")
    p_sweep.add_argument("--bits", type=int, default=8)
    p_sweep.add_argument("--plot", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_tx = sub.add_parser("transmit", help="send one clip end to end")
    p_tx.add_argument("--checkpoint", required=True)
    p_tx.add_argument("--clip", required=True)
    p_tx.add_argument("--output", required=True)
    p_tx.add_argument("--group-size", type=int, default=2)
    p_tx.add_argument("--family", choices=("awgn", "noiseless"), default="awgn")
    p_tx.add_argument("--snr-test", type=float, default=10.0)
    p_tx.add_argument("--snr-est", type=float, default=None)
    p_tx.add_argument("--seed", type=int, default=0)
    p_tx.set_defaults(func=cmd_transmit)

    p_base = sub.add_parser("baseline", help="digital pipeline across an SNR grid")
    p_base.add_argument("--clip", required=True)
    p_base.add_argument("--grid", required=True)
    p_base.add_argument("--output", required=True)
    p_base.add_argument("--group-size", type=int, default=2)
    p_base.add_argument("--bits", type=int, default=8)
    p_base.add_argument("--power", type=float, default=1.0)
    p_base.add_argument("--seed", type=int, default=0)
    p_base.add_argument("--plot", action="store_true")
    p_base.set_defaults(func=cmd_baseline)
    return parser


_NEGATIVE_VALUE_FLAGS = ("--grid", "--snr-test", "--snr-est", "--rho", "--power")


def _merge_negative_values(argv: list[str]) -> list[str]:
    """Join "--flag -5..." into "--flag=-5..." so argparse accepts the value."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if (tok in _NEGATIVE_VALUE_FLAGS and i + 1 < len(argv)
                and argv[i + 1].startswith("-") and len(argv[i + 1]) > 1
                and argv[i + 1][1].isdigit()):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(_merge_negative_values(list(argv)))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SemcomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
