"""Figures written next to the tabular outputs (loss curves, metric bars, masks)."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def loss_curve(path, losses: Sequence[float], val: Optional[Sequence[tuple]] = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(losses) + 1), losses, lw=0.8, label="train")
    if val:
        it, v = zip(*val)
        ax.plot(it, v, "o-", label="validation")
    ax.set_xlabel("iteration")
    ax.set_ylabel("BCE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def metric_bars(path, means: Dict[str, Dict[str, float]]) -> Path:
    """``means[method][metric]`` grouped bar chart."""
    methods = list(means)
    metrics = ["sdr", "sir", "sar", "si_sdr"]
    x = np.arange(len(metrics))
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, m in enumerate(methods):
        vals = [means[m].get(k, np.nan) for k in metrics]
        vals = [v if np.isfinite(v) else np.nan for v in vals]
        ax.bar(x + i * width, vals, width, label=m)
    ax.set_xticks(x + width * (len(methods) - 1) / 2)
    ax.set_xticklabels([k.upper().replace("_", "-") for k in metrics])
    ax.set_ylabel("dB")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def mask_image(path, mask: np.ndarray) -> Path:
    """Mask as a PNG with low frequencies at the bottom."""
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(mask, origin="lower", aspect="auto", vmin=0, vmax=1, cmap="magma")
    ax.set_xlabel("frame")
    ax.set_ylabel("log-frequency bin")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def write_pgm(path, mask: np.ndarray) -> Path:
    """Binary 8-bit portable graymap; row 0 is the highest frequency."""
    img = np.clip(np.round(np.asarray(mask)[::-1] * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return Path(path)
