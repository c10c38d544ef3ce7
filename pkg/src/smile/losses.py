"""Loss functions for the generator, segmentor, reconstructor and the
semi-supervised confidence objective.

Conventions: images are (B, 1, H, W) tensors in [0, 1]; lesion masks are
(B, 1, H, W) tensors of exactly 0/1; segmentor outputs are (B, 2, H, W)
softmax maps with channel 0 = background, channel 1 = lesion.  Every loss
reduces with a mean (over pixels and batch) so magnitudes are invariant to
image size, and every loss is >= 0 with value 0 exactly at its fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError

PROB_FLOOR = 1e-7

# canonical component names
GEN_MSE = "gen_mse"        # identity-preserving masked MSE of the generator
GEN_ADV = "gen_adv"        # generator's adversarial CE (segmentor sees no lesion)
SEG_PN = "seg_pn"          # segmentor CE on generated pseudo-normal images
SEG_PAB = "seg_pab"        # segmentor CE on reconstructed pseudo-abnormal images
RECON_MSE = "recon_mse"    # reconstructor pixel-wise MSE
RECON_ADV = "recon_adv"    # reconstructor's segmentability CE (lesion must be findable)
SEMI_CE = "semi_ce"        # confidence-enhancement CE on unlabeled images

DEFAULT_LOSS_WEIGHTS = {
    GEN_MSE: 1.0, GEN_ADV: 1.0, SEG_PN: 1.0, SEG_PAB: 1.0,
    RECON_MSE: 1.0, RECON_ADV: 1.0, SEMI_CE: 1.0,
}


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar record of one update: named components and their sum."""

    total: float
    components: dict[str, float]

    @classmethod
    def from_components(cls, components: dict[str, float]) -> "LossBreakdown":
        return cls(total=float(sum(components.values())), components=dict(components))


class LossTerms:
    """Weighted loss components still attached to the autograd graph."""

    def __init__(self, components: dict[str, torch.Tensor], weights: dict[str, float] | None = None):
        w = dict(DEFAULT_LOSS_WEIGHTS)
        if weights:
            unknown = set(weights) - set(w)
            if unknown:
                raise ConfigError(f"unknown loss weight names: {sorted(unknown)}")
            w.update(weights)
        self.components = {name: w[name] * value for name, value in components.items()}

    @property
    def total(self) -> torch.Tensor:
        return sum(self.components.values())

    def to_breakdown(self) -> LossBreakdown:
        return LossBreakdown.from_components(
            {name: float(value.detach()) for name, value in self.components.items()})


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def masked_mse(a: torch.Tensor, b: torch.Tensor, lesion_mask: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over pixels where the lesion mask is 0.

    With an all-zero mask this is the full-image MSE; with an all-ones mask
    there are no pixels to compare and the loss is 0 by convention.
    """
    _check_same_shape(a, b, "masked_mse inputs")
    _check_same_shape(a, lesion_mask, "masked_mse mask")
    keep = 1.0 - lesion_mask
    n = keep.sum()
    if n.item() == 0:
        return torch.zeros((), dtype=a.dtype, device=a.device)
    return (keep * (a - b) ** 2).sum() / n


def seg_ce(pred_probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel two-class cross-entropy against a binary lesion mask.

    ``pred_probs`` is a (B, 2, H, W) softmax output; probabilities are
    floored at 1e-7 before the log so saturated predictions cannot produce
    infinities.
    """
    if pred_probs.ndim != 4 or pred_probs.shape[1] != 2:
        raise ShapeError(f"seg_ce: expected (B, 2, H, W) probabilities, got {tuple(pred_probs.shape)}")
    if target.shape != (pred_probs.shape[0], 1, *pred_probs.shape[2:]):
        raise ShapeError(
            f"seg_ce: target shape {tuple(target.shape)} does not match probabilities "
            f"{tuple(pred_probs.shape)}")
    tvals = target.detach()
    if not bool(((tvals == 0) | (tvals == 1)).all()):
        raise ConfigError("seg_ce: target mask values must be exactly 0 or 1")
    t = target.to(pred_probs.dtype)
    p_bg = pred_probs[:, 0:1].clamp_min(PROB_FLOOR)
    p_les = pred_probs[:, 1:2].clamp_min(PROB_FLOOR)
    ce = -(t * torch.log(p_les) + (1.0 - t) * torch.log(p_bg))
    return ce.mean()


def generator_loss(image: torch.Tensor, lesion_mask: torch.Tensor,
                   gen_out: torch.Tensor, seg_probs_on_gen: torch.Tensor,
                   weights: dict[str, float] | None = None) -> LossTerms:
    """Generator objective: preserve the non-lesion region of the input and
    make the segmentor predict an all-zero mask on the generated image.

    ``lesion_mask`` is the (ground-truth or pseudo) lesion support used to
    exclude lesion pixels from the identity term; the adversarial CE always
    targets the all-zero mask of a normal image.  For normal inputs the mask
    is all-zero, so the identity term degenerates to full-image MSE against
    the input, which is exactly the passthrough objective.
    """
    zero_target = torch.zeros_like(lesion_mask)
    return LossTerms({
        GEN_MSE: masked_mse(image, gen_out, lesion_mask),
        GEN_ADV: seg_ce(seg_probs_on_gen, zero_target),
    }, weights)


def segmentor_loss(seg_probs_on_gen: torch.Tensor,
                   seg_probs_on_recon: torch.Tensor | None,
                   true_mask: torch.Tensor,
                   weights: dict[str, float] | None = None) -> LossTerms:
    """Segmentor objective: recover the lesion behind the pseudo-normal image
    and, once the reconstructor exists, the implanted lesion in the
    pseudo-abnormal image.  Pass ``seg_probs_on_recon=None`` before the
    reconstructor is trained (phase 1) to use the single-term form.
    """
    components = {SEG_PN: seg_ce(seg_probs_on_gen, true_mask)}
    if seg_probs_on_recon is not None:
        components[SEG_PAB] = seg_ce(seg_probs_on_recon, true_mask)
    return LossTerms(components, weights)


def reconstruction_loss(recon: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Full-image mean squared error between reconstruction and original."""
    _check_same_shape(recon, image, "reconstruction_loss")
    return ((recon - image) ** 2).mean()


def pseudo_label(seg_probs: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Threshold the lesion-channel probability map into a binary pseudo-mask.

    A pixel becomes lesion iff its lesion probability is strictly greater
    than epsilon.  The result is detached: pseudo-labels are constructed
    targets, not differentiable quantities.
    """
    if not (0.0 < epsilon < 1.0):
        raise ConfigError(f"pseudo_label: epsilon must be in (0, 1), got {epsilon}")
    if seg_probs.ndim != 4 or seg_probs.shape[1] != 2:
        raise ShapeError(f"pseudo_label: expected (B, 2, H, W), got {tuple(seg_probs.shape)}")
    return (seg_probs[:, 1:2].detach() > epsilon).to(seg_probs.dtype)


def semi_confidence_loss(seg_probs: torch.Tensor, pseudo: torch.Tensor,
                         weights: dict[str, float] | None = None) -> LossTerms:
    """Confidence enhancement: CE of the prediction against its own
    thresholded pseudo-label, sharpening the segmentor on unlabeled images."""
    return LossTerms({SEMI_CE: seg_ce(seg_probs, pseudo.detach())}, weights)


def update_epsilon(confidences) -> float:
    """Mean per-pixel max-class confidence, clamped to [0.5, 0.99]."""
    if isinstance(confidences, torch.Tensor):
        if confidences.numel() == 0:
            raise ConfigError("update_epsilon: empty confidence list")
        mean = float(confidences.double().mean())
    else:
        vals = list(confidences)
        if not vals:
            raise ConfigError("update_epsilon: empty confidence list")
        mean = float(sum(vals) / len(vals))
    return min(0.99, max(0.5, mean))


def max_class_confidence(seg_probs: torch.Tensor) -> torch.Tensor:
    """Per-pixel max-class probability of a (B, 2, H, W) softmax map."""
    return seg_probs.detach().max(dim=1).values
