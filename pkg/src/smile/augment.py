"""Data-augmentation study: does synthetic data help a downstream segmentor?

From a trained bundle and the labeled training set we synthesize, per real
sample, a pseudo-normal image (generator output, all-zero mask) and a
pseudo-abnormal image (reconstructor output from the generator image and the
sample's own mask, carrying that mask).  Each synthetic type therefore has
exactly as many samples as the training set.  Four regimes select which
synthetic sets are appended to the real data before a fresh downstream
segmentor is trained; mean Dice on the held-out test set is the outcome.
No traditional augmentation (rotation, crops, flips) is applied anywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DatasetSplit, Sample
from .errors import ConfigError
from .losses import seg_ce
from .metrics import mean_dice, predicted_masks
from .models import ModelBundle, UNet, samples_to_tensors, segmentor_spec
from .seeding import derive_seed
from .training import forward_reconstructor

REGIME_NONE = "none"
REGIME_PN = "pseudo_normal_only"
REGIME_PA = "pseudo_abnormal_only"
REGIME_BOTH = "both"
REGIMES = (REGIME_NONE, REGIME_PN, REGIME_PA, REGIME_BOTH)


@dataclass
class SyntheticSample(Sample):
    provenance: str = ""      # "pn" or "pa"
    source_id: str = ""


@dataclass
class AugmentedDataset:
    real: list[Sample] = field(default_factory=list)
    synthetic: list[SyntheticSample] = field(default_factory=list)

    def all_samples(self) -> list[Sample]:
        return list(self.real) + list(self.synthetic)


def synthesize_augmented(bundle: ModelBundle, train_samples: list[Sample],
                         regime: str, batch_size: int = 32,
                         trained: bool = True) -> AugmentedDataset:
    """Synthesize pseudo-normal / pseudo-abnormal companions per real sample.

    Pass ``trained=False`` to acknowledge an intentionally untrained bundle
    (ablations); otherwise a warning is still only advisory.
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown augmentation regime {regime!r}; expected one of {REGIMES}")
    unlabeled = [s.id for s in train_samples if not s.labeled]
    if unlabeled:
        raise ConfigError(f"synthesize_augmented needs labeled samples; "
                          f"{len(unlabeled)} are unlabeled (first: {unlabeled[0]})")
    if not trained:
        warnings.warn("synthesizing from a bundle that has not completed training")
    ds = AugmentedDataset(real=list(train_samples))
    if regime == REGIME_NONE:
        return ds

    images, masks, _ = samples_to_tensors(train_samples)
    pn_list: list[SyntheticSample] = []
    pa_list: list[SyntheticSample] = []
    with torch.no_grad():
        for i in range(0, len(train_samples), batch_size):
            chunk = train_samples[i:i + batch_size]
            img = images[i:i + batch_size]
            msk = masks[i:i + batch_size]
            gen = bundle.generator(img)
            recon = forward_reconstructor(bundle.reconstructor, gen, msk)
            for j, s in enumerate(chunk):
                pn_img = gen[j, 0].numpy().astype(np.float32)
                pn_list.append(SyntheticSample(
                    id=f"pn-{s.id}", image=pn_img,
                    mask=np.zeros_like(s.mask), is_abnormal=False,
                    provenance="pn", source_id=s.id))
                pa_img = recon[j, 0].numpy().astype(np.float32)
                pa_list.append(SyntheticSample(
                    id=f"pa-{s.id}", image=pa_img,
                    mask=s.mask.copy(), is_abnormal=s.is_abnormal,
                    provenance="pa", source_id=s.id))
    if regime in (REGIME_PN, REGIME_BOTH):
        ds.synthetic.extend(pn_list)
    if regime in (REGIME_PA, REGIME_BOTH):
        ds.synthetic.extend(pa_list)
    return ds


@dataclass
class DownstreamConfig:
    base_channels: int = 8
    depth: int = 3
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 3
    seed: int = 0


def run_downstream(aug: AugmentedDataset, test_samples: list[Sample],
                   config: DownstreamConfig | None = None) -> tuple[float, dict]:
    """Train a fresh segmentor on real + synthetic data, report test Dice.

    The recipe (architecture, epochs, learning rate) is identical across
    regimes so any Dice difference is attributable to the data.  Test ids
    must be disjoint from the training ids.
    """
    cfg = config or DownstreamConfig()
    train = aug.all_samples()
    train_ids = {s.id for s in train}
    overlap = train_ids & {s.id for s in test_samples}
    if overlap:
        raise ConfigError(f"downstream training data leaks into the test set: "
                          f"{sorted(overlap)[:5]}")
    net = UNet(segmentor_spec(cfg.base_channels, cfg.depth),
               seed=derive_seed(cfg.seed, "init.downstream"))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    images, masks, _ = samples_to_tensors(train)
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "batch.downstream")))
    n = len(train)
    diverged = False
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = seg_ce(net(images[idx]), masks[idx])
            if not torch.isfinite(loss):
                diverged = True
                break
            loss.backward()
            opt.step()
        if diverged:
            break
    score = mean_dice(net, test_samples) if not diverged else float("nan")
    report = {
        "dice": score,
        "n_real": len(aug.real),
        "n_synthetic": len(aug.synthetic),
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "valid": not diverged,
    }
    return score, report


def regime_sweep(bundle: ModelBundle, split: DatasetSplit, seeds: list[int],
                 config: DownstreamConfig | None = None,
                 progress=None) -> list[dict]:
    """All four regimes over the seed list; one row per (regime, seed)."""
    base = config or DownstreamConfig()
    rows = []
    for regime in REGIMES:
        aug = synthesize_augmented(bundle, split.train, regime)
        for seed in seeds:
            cfg = DownstreamConfig(base.base_channels, base.depth, base.learning_rate,
                                   base.batch_size, base.epochs, seed)
            score, report = run_downstream(aug, split.test, cfg)
            rows.append({"regime": regime, "seed": seed, "dice": score,
                         "valid": report["valid"]})
            if progress:
                progress(f"regime={regime} seed={seed} dice={score:.4f}")
    return rows


def save_regime_table(rows: list[dict], path: str | Path) -> None:
    lines = ["regime\tseed\tdice"]
    for r in rows:
        lines.append(f"{r['regime']}\t{r['seed']}\t{r['dice']!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_regime_table(path: str | Path) -> list[dict]:
    text = Path(path).read_text().rstrip("\n").split("\n")
    if text[0] != "regime\tseed\tdice":
        raise ConfigError(f"{path}: unexpected regime table header {text[0]!r}")
    rows = []
    for line in text[1:]:
        regime, seed, dice = line.split("\t")
        rows.append({"regime": regime, "seed": int(seed), "dice": float(dice)})
    return rows


def summarize_regimes(rows: list[dict]) -> dict[str, dict]:
    """Per-regime mean and across-seed standard deviation of Dice."""
    out: dict[str, dict] = {}
    for regime in REGIMES:
        vals = [r["dice"] for r in rows if r["regime"] == regime]
        if vals:
            arr = np.array(vals, dtype=np.float64)
            out[regime] = {"mean": float(arr.mean()),
                           "std": float(arr.std(ddof=1)) if len(vals) > 1 else 0.0,
                           "n": len(vals)}
    return out
