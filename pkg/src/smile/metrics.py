"""Quantitative evaluation: healthiness, identity, Dice, and MS-SSIM.

healthiness h asks how little lesion a frozen evaluation segmentor finds in
generated images relative to the originals:

    h = 1 - mean_i[area(S_pred(G(I_i)))] / mean_i[area(S_pred(I_i))]

identity iD asks how well the generator preserves the non-lesion region,
via MS-SSIM between the two images with lesion pixels zeroed in both:

    iD = mean_i  MS-SSIM((1 - M_i) * G(I_i), (1 - M_i) * I_i)

MS-SSIM is implemented here from first principles (Gaussian-windowed local
statistics, valid convolution, 2x2 mean-pool downsampling between scales,
luminance term only at the coarsest scale) and computed in float64.

S_pred is a separately trained, frozen segmentor: evaluating the generator
with its own adversary would be circular, so the evaluation network never
shares parameters with the training-time segmentor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import Sample
from .errors import (
    ConfigError,
    EvalSegmentorDegenerateError,
    EvalSegmentorUndertrainedError,
    ShapeError,
)
from .losses import seg_ce
from .models import UNet, param_hash, samples_to_tensors, segmentor_spec
from .seeding import derive_seed

REPORT_FORMAT_VERSION = "SMILEREP1"

# standard five-scale weights; a prefix is renormalized when the image is too
# small to support all five scales
STANDARD_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class SsimConfig:
    window_size: int = 11
    window_sigma: float = 1.5
    scales: int | None = None              # None = as many as the image allows (max 5)
    scale_weights: tuple[float, ...] | None = None
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def resolve(self, height: int, width: int) -> "SsimConfig":
        """Pin scale count and weights for a concrete image size."""
        side = min(height, width)
        max_scales = 0
        while max_scales < 5 and (2 ** max_scales) * self.window_size <= side:
            max_scales += 1
        if max_scales == 0:
            raise ConfigError(
                f"image {height}x{width} is smaller than the {self.window_size}px window; "
                f"no scale count is feasible")
        scales = self.scales if self.scales is not None else max_scales
        if scales < 1:
            raise ConfigError(f"scales must be >= 1, got {scales}")
        if (2 ** (scales - 1)) * self.window_size > side:
            raise ConfigError(
                f"{scales} scales need {2 ** (scales - 1) * self.window_size}px but the image "
                f"is {height}x{width}; use at most {max_scales} scales")
        if self.scale_weights is not None:
            weights = tuple(float(w) for w in self.scale_weights)
            if len(weights) != scales:
                raise ConfigError(f"{len(weights)} scale weights given for {scales} scales")
        else:
            prefix = STANDARD_SCALE_WEIGHTS[:scales]
            total = sum(prefix)
            weights = tuple(w / total for w in prefix)
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"scale weights must sum to 1, got {sum(weights)}")
        return SsimConfig(self.window_size, self.window_sigma, scales, weights,
                          self.k1, self.k2, self.dynamic_range)


def _gaussian_window_1d(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _local_mean(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    # separable Gaussian, valid convolution
    k = win.numel()
    w_row = win.view(1, 1, 1, k)
    w_col = win.view(1, 1, k, 1)
    return F.conv2d(F.conv2d(x, w_row), w_col)


def _as_batch(x, name: str) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if not isinstance(x, torch.Tensor):
        raise ShapeError(f"{name}: expected array or tensor")
    x = x.to(torch.float64)
    if x.ndim == 2:
        return x.unsqueeze(0).unsqueeze(0)
    if x.ndim == 4 and x.shape[1] == 1:
        return x
    raise ShapeError(f"{name}: expected (H, W) or (B, 1, H, W), got {tuple(x.shape)}")


def _ssim_components(a: torch.Tensor, b: torch.Tensor, cfg: SsimConfig):
    """Per-pixel SSIM map plus per-sample luminance and contrast-structure means."""
    win = _gaussian_window_1d(cfg.window_size, cfg.window_sigma)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_a = _local_mean(a, win)
    mu_b = _local_mean(b, win)
    var_a = _local_mean(a * a, win) - mu_a ** 2
    var_b = _local_mean(b * b, win) - mu_b ** 2
    cov = _local_mean(a * b, win) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    ssim = lum * cs
    return ssim, lum.mean(dim=(1, 2, 3)), cs.mean(dim=(1, 2, 3))


def ssim_map(a, b, cfg: SsimConfig | None = None):
    """Single-scale SSIM: the per-pixel map and (luminance, contrast-structure)
    channel means.  Inputs must share one shape and live in [0, 1]."""
    a = _as_batch(a, "ssim a")
    b = _as_batch(b, "ssim b")
    if a.shape != b.shape:
        raise ShapeError(f"ssim_map: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if min(a.shape[-2:]) < (cfg.window_size if cfg else 11):
        raise ShapeError(f"ssim_map: image {a.shape[-2]}x{a.shape[-1]} smaller than the window")
    smap, lum, cs = _ssim_components(a, b, cfg or SsimConfig())
    if smap.shape[0] == 1:
        return smap[0, 0].numpy(), float(lum[0]), float(cs[0])
    return smap, lum, cs


def ms_ssim_batch(a: torch.Tensor, b: torch.Tensor, cfg: SsimConfig | None = None) -> torch.Tensor:
    """Per-sample MS-SSIM of two (B, 1, H, W) batches."""
    a = _as_batch(a, "ms_ssim a")
    b = _as_batch(b, "ms_ssim b")
    if a.shape != b.shape:
        raise ShapeError(f"ms_ssim: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    cfg = (cfg or SsimConfig()).resolve(a.shape[-2], a.shape[-1])
    h, w = a.shape[-2:]
    down_factor = 2 ** (cfg.scales - 1)
    if h % down_factor or w % down_factor:
        raise ShapeError(
            f"ms_ssim: {h}x{w} not divisible by 2^(scales-1) = {down_factor}")
    result = torch.ones(a.shape[0], dtype=torch.float64)
    for scale in range(cfg.scales):
        smap, _lum, cs_mean = _ssim_components(a, b, cfg)
        if scale < cfg.scales - 1:
            term = cs_mean
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
        else:
            # coarsest scale: full SSIM, i.e. luminance * contrast-structure
            term = smap.mean(dim=(1, 2, 3))
        # negative contrast-structure values are clamped so fractional
        # exponents stay real
        result = result * term.clamp_min(0.0) ** cfg.scale_weights[scale]
    return result


def ms_ssim(a, b, cfg: SsimConfig | None = None) -> float:
    """Multiscale structural similarity of two images in [0, 1]."""
    return float(ms_ssim_batch(a, b, cfg)[0])


def lesion_area(mask_or_probmap) -> float:
    """Count of lesion pixels.  Probability maps are argmax-thresholded first."""
    x = mask_or_probmap
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if x.ndim == 4 and x.shape[1] == 2:
        x = (x.argmax(dim=1) == 1)
    elif x.ndim == 3 and x.shape[0] == 2:
        x = (x.argmax(dim=0) == 1)
    else:
        vals = x.detach()
        if not bool(((vals == 0) | (vals == 1)).all()):
            raise ConfigError("lesion_area: mask values must be exactly 0 or 1")
    return float(x.to(torch.float64).sum())


def predicted_masks(segmentor: torch.nn.Module, images: torch.Tensor,
                    batch_size: int = 32) -> torch.Tensor:
    """Hard (B, 1, H, W) masks from a segmentor over an image batch."""
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            probs = segmentor(images[i:i + batch_size])
            outs.append((probs.argmax(dim=1, keepdim=True) == 1).to(images.dtype))
    return torch.cat(outs, dim=0)


def generate_batched(generator: torch.nn.Module, images: torch.Tensor,
                     batch_size: int = 32) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            outs.append(generator(images[i:i + batch_size]))
    return torch.cat(outs, dim=0)


def dice(pred, target) -> float:
    """Overlap score 2|A n B| / (|A| + |B|); two empty masks score 1.0."""
    p = torch.as_tensor(np.asarray(pred)) if isinstance(pred, np.ndarray) else torch.as_tensor(pred)
    t = torch.as_tensor(np.asarray(target)) if isinstance(target, np.ndarray) else torch.as_tensor(target)
    if p.shape != t.shape:
        raise ShapeError(f"dice: shape mismatch {tuple(p.shape)} vs {tuple(t.shape)}")
    for name, m in (("pred", p), ("target", t)):
        if not bool(((m == 0) | (m == 1)).all()):
            raise ConfigError(f"dice: {name} mask values must be exactly 0 or 1")
    p = p.to(torch.float64)
    t = t.to(torch.float64)
    denom = float(p.sum() + t.sum())
    if denom == 0.0:
        return 1.0
    return float(2.0 * (p * t).sum() / denom)


# ---------------------------------------------------------------------------
# Healthiness and identity over sample sets
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    healthiness: float
    identity: float
    per_sample: list[dict] = field(default_factory=list)
    n_samples: int = 0
    s_pred_checkpoint_id: str = ""
    healthiness_mean_of_ratios: float | None = None
    s_pred_val_dice: float | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "healthiness": self.healthiness,
            "identity": self.identity,
            "healthiness_mean_of_ratios": self.healthiness_mean_of_ratios,
            "n_samples": self.n_samples,
            "s_pred_checkpoint_id": self.s_pred_checkpoint_id,
            "s_pred_val_dice": self.s_pred_val_dice,
            "notes": self.notes,
            "per_sample": self.per_sample,
        }

    def to_table(self) -> str:
        """Flat TSV, one row per sample."""
        lines = ["sample_id\tarea_real\tarea_generated\tms_ssim"]
        for row in self.per_sample:
            lines.append(f"{row['id']}\t{row['area_real']!r}\t{row['area_generated']!r}"
                         f"\t{row['ms_ssim']!r}")
        return "\n".join(lines) + "\n"


def healthiness(generator: torch.nn.Module, eval_segmentor: torch.nn.Module,
                samples: list[Sample]) -> tuple[float, list[dict]]:
    """Healthiness over abnormal samples, as a ratio of mean lesion areas.

    The headline number divides the mean predicted area on generated images
    by the mean predicted area on the originals (robust to samples with tiny
    denominators); the per-sample rows allow recomputing it exactly.
    """
    abnormal = [s for s in samples if s.is_abnormal]
    if not abnormal:
        raise ConfigError("healthiness: no abnormal samples supplied")
    images, _, _ = samples_to_tensors(abnormal)
    gen = generate_batched(generator, images)
    area_real = predicted_masks(eval_segmentor, images).sum(dim=(1, 2, 3)).double()
    area_gen = predicted_masks(eval_segmentor, gen).sum(dim=(1, 2, 3)).double()
    rows = [
        {"id": s.id, "area_real": float(ar), "area_generated": float(ag)}
        for s, ar, ag in zip(abnormal, area_real, area_gen)
    ]
    denom = float(area_real.mean())
    if denom == 0.0:
        raise EvalSegmentorDegenerateError(
            "evaluation segmentor finds no lesions in the real abnormal images; "
            "healthiness is undefined")
    h = 1.0 - float(area_gen.mean()) / denom
    return h, rows


def healthiness_mean_of_ratios(rows: list[dict]) -> float | None:
    """Alternative aggregation: mean over samples of 1 - area_g/area_r,
    restricted to samples whose real-image area is positive."""
    ratios = [1.0 - r["area_generated"] / r["area_real"] for r in rows if r["area_real"] > 0]
    return (sum(ratios) / len(ratios)) if ratios else None


def identity(generator: torch.nn.Module, samples: list[Sample],
             cfg: SsimConfig | None = None) -> tuple[float, list[dict]]:
    """Identity over labeled abnormal samples: MS-SSIM of generated vs
    original with lesion pixels zeroed in both images."""
    abnormal = [s for s in samples if s.is_abnormal and s.labeled]
    if not abnormal:
        raise ConfigError("identity: no labeled abnormal samples supplied")
    images, masks, _ = samples_to_tensors(abnormal)
    gen = generate_batched(generator, images)
    keep = (1.0 - masks).double()
    scores = ms_ssim_batch(gen.double() * keep, images.double() * keep, cfg)
    rows = [{"id": s.id, "ms_ssim": float(v)} for s, v in zip(abnormal, scores)]
    return float(scores.mean()), rows


def evaluate_generator(generator: torch.nn.Module, eval_segmentor: torch.nn.Module,
                       samples: list[Sample], s_pred_id: str = "",
                       ssim_cfg: SsimConfig | None = None,
                       s_pred_val_dice: float | None = None) -> MetricsReport:
    """Full metrics report over the abnormal portion of a sample list."""
    h, h_rows = healthiness(generator, eval_segmentor, samples)
    i, i_rows = identity(generator, samples, ssim_cfg)
    ssim_by_id = {r["id"]: r["ms_ssim"] for r in i_rows}
    per_sample = [
        {**row, "ms_ssim": ssim_by_id.get(row["id"])}
        for row in h_rows
    ]
    return MetricsReport(
        healthiness=h,
        identity=i,
        per_sample=per_sample,
        n_samples=len(per_sample),
        s_pred_checkpoint_id=s_pred_id,
        healthiness_mean_of_ratios=healthiness_mean_of_ratios(h_rows),
        s_pred_val_dice=s_pred_val_dice,
        notes={
            "healthiness_aggregation": "ratio_of_means",
            "identity_mask_handling": "zero_filled",
        },
    )


# ---------------------------------------------------------------------------
# Frozen evaluation segmentor
# ---------------------------------------------------------------------------

@dataclass
class EvalSegmentorConfig:
    base_channels: int = 8
    depth: int = 3
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 15
    target_dice: float = 0.85
    min_dice: float = 0.60
    seed: int = 0


def mean_dice(segmentor: torch.nn.Module, samples: list[Sample]) -> float:
    """Mean Dice of argmax predictions against ground truth, abnormal samples only."""
    abnormal = [s for s in samples if s.is_abnormal and s.labeled]
    if not abnormal:
        raise ConfigError("mean_dice: no labeled abnormal samples")
    images, masks, _ = samples_to_tensors(abnormal)
    preds = predicted_masks(segmentor, images)
    scores = []
    for i in range(len(abnormal)):
        scores.append(dice(preds[i, 0], masks[i, 0]))
    return float(np.mean(scores))


def train_eval_segmentor(train_samples: list[Sample], val_samples: list[Sample],
                         config: EvalSegmentorConfig | None = None) -> tuple[UNet, dict]:
    """Train a fresh segmentor on real labeled images until it is a competent
    lesion finder, then freeze it.

    Training stops as soon as validation Dice reaches ``target_dice``.  If
    the budget runs out below ``min_dice`` the segmentor is refused (metrics
    computed with it would be meaningless); between the two thresholds it is
    accepted with a warning and the achieved Dice is recorded.
    """
    cfg = config or EvalSegmentorConfig()
    labeled = [s for s in train_samples if s.labeled]
    if not any(s.is_abnormal for s in labeled):
        raise ConfigError("train_eval_segmentor: no labeled abnormal training samples")
    net = UNet(segmentor_spec(cfg.base_channels, cfg.depth),
               seed=derive_seed(cfg.seed, "init.S_pred"))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    images, masks, _ = samples_to_tensors(labeled)
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "batch.S_pred")))
    n = len(labeled)
    best = 0.0
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            probs = net(images[idx])
            loss = seg_ce(probs, masks[idx])
            loss.backward()
            opt.step()
        epochs_run = epoch + 1
        val = mean_dice(net, val_samples)
        best = max(best, val)
        if val >= cfg.target_dice:
            break
    final = mean_dice(net, val_samples)
    if final < cfg.min_dice:
        raise EvalSegmentorUndertrainedError(
            f"evaluation segmentor reached Dice {final:.3f} < {cfg.min_dice} after "
            f"{epochs_run} epochs; metrics refused")
    if final < cfg.target_dice:
        warnings.warn(
            f"evaluation segmentor reached Dice {final:.3f}, below the {cfg.target_dice} "
            f"target; metrics will be computed but should be read with care")
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    info = {
        "val_dice": final,
        "epochs": epochs_run,
        "checkpoint_id": param_hash(net)[:12],
    }
    return net, info
