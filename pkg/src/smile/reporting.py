"""Static report artifacts: image panels and training curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .data import Sample
from .errors import ConfigError
from .models import ModelBundle, samples_to_tensors
from .seeding import make_generator
from .training import forward_reconstructor


def render_panels(bundle: ModelBundle, samples: list[Sample], out_dir: str | Path,
                  n_panels: int, seed: int, checkpoint_id: str) -> list[Path]:
    """Side-by-side panels: abnormal image, pseudo-normal, pseudo-abnormal,
    ground-truth mask and predicted mask.  Sample selection is seeded."""
    abnormal = [s for s in samples if s.is_abnormal and s.labeled]
    if not abnormal:
        raise ConfigError("render_panels: no labeled abnormal samples to draw")
    n_panels = min(n_panels, len(abnormal))
    rng = make_generator(seed, "panels")
    picks = rng.choice(len(abnormal), size=n_panels, replace=False)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in picks:
        s = abnormal[int(k)]
        images, masks, _ = samples_to_tensors([s])
        with torch.no_grad():
            gen = bundle.generator(images)
            recon = forward_reconstructor(bundle.reconstructor, gen, masks)
            seg = bundle.segmentor(images)
        cols = [
            ("abnormal", s.image),
            ("pseudo-normal", gen[0, 0].numpy()),
            ("pseudo-abnormal", recon[0, 0].numpy()),
            ("mask", s.mask.astype(float)),
            ("segmentor", (seg[0].argmax(dim=0) == 1).numpy().astype(float)),
        ]
        fig, axes = plt.subplots(1, len(cols), figsize=(3 * len(cols), 3.2))
        for ax, (title, img) in zip(axes, cols):
            ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(title, fontsize=10)
            ax.axis("off")
        fig.suptitle(f"{s.id}  (checkpoint {checkpoint_id})", fontsize=11)
        fig.tight_layout()
        path = out / f"panel_{s.id}_{checkpoint_id}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths


def render_curves(manifest: dict, out_dir: str | Path) -> list[Path]:
    """Loss components and validation metrics over the training history."""
    history = manifest.get("history", [])
    if not history:
        raise ConfigError("render_curves: manifest has no history")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    names = sorted({k for h in history for k in h["loss"]})
    xs = np.arange(1, len(history) + 1)
    phase_changes = [i for i in range(1, len(history))
                     if history[i]["phase"] != history[i - 1]["phase"]]

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for name in names:
        ys = [h["loss"].get(name, np.nan) for h in history]
        ax.plot(xs, ys, label=name, linewidth=1.2)
    for b in phase_changes:
        ax.axvline(b + 0.5, color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel("epoch (all phases)")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8, ncol=3)
    ax.set_title("training losses")
    fig.tight_layout()
    p = out / "curves_losses.png"
    fig.savefig(p, dpi=110)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for key, label in (("val_identity", "identity (val)"),
                       ("val_h_proxy", "healthiness proxy (val)"),
                       ("val_normal_mae", "normal passthrough MAE (val)")):
        ys = [h.get(key) for h in history]
        pts = [(x, y) for x, y in zip(xs, ys) if y is not None]
        if pts:
            ax.plot([p0 for p0, _ in pts], [p1 for _, p1 in pts], label=label,
                    marker=".", linewidth=1.2)
    for b in phase_changes:
        ax.axvline(b + 0.5, color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel("epoch (all phases)")
    ax.legend(fontsize=9)
    ax.set_title("validation metrics")
    fig.tight_layout()
    p = out / "curves_validation.png"
    fig.savefig(p, dpi=110)
    plt.close(fig)
    paths.append(p)
    return paths
