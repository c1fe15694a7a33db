"""Figure rendering for sweep and training reports.

Plots are a convenience layer over the CSV outputs and are never the
source of truth.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .training import SweepRow  # noqa: E402


def render_sweep_plot(rows: list[SweepRow], path: str) -> None:
    """PSNR and MS-SSIM against the true channel SNR, one line per system."""
    systems: dict[str, list[SweepRow]] = {}
    for row in rows:
        if math.isfinite(row.snr_test_db):
            systems.setdefault(row.system, []).append(row)

    fig, (ax_psnr, ax_ssim) = plt.subplots(2, 1, figsize=(6.4, 7.2), sharex=True)
    for name, items in systems.items():
        items = sorted(items, key=lambda r: r.snr_test_db)
        xs = [r.snr_test_db for r in items]
        ax_psnr.plot(xs, [r.psnr_db for r in items], marker="o", label=name)
        ax_ssim.plot(xs, [r.ms_ssim for r in items], marker="o", label=name)
    ax_psnr.set_ylabel("PSNR (dB)")
    ax_ssim.set_ylabel("MS-SSIM")
    ax_ssim.set_xlabel("channel SNR (dB)")
    for ax in (ax_psnr, ax_ssim):
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_loss_plot(rows: list[tuple[int, float, float]], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.semilogy([r[0] for r in rows], [r[1] for r in rows], lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
