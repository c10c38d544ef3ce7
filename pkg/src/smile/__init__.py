"""Semi-supervised pseudo-normality synthesis on phantom brain slices."""

from .data import (
    DatasetSplit,
    PhantomConfig,
    Sample,
    generate_phantom,
    load_dataset,
    percentile_clip,
    save_dataset,
    split_dataset,
    strip_labels,
)
from .losses import (
    LossBreakdown,
    generator_loss,
    masked_mse,
    pseudo_label,
    reconstruction_loss,
    seg_ce,
    segmentor_loss,
    semi_confidence_loss,
    update_epsilon,
)
from .metrics import (
    MetricsReport,
    SsimConfig,
    dice,
    evaluate_generator,
    healthiness,
    identity,
    lesion_area,
    ms_ssim,
    ssim_map,
    train_eval_segmentor,
)
from .models import (
    IdentityGenerator,
    ModelBundle,
    NetworkSpec,
    UNet,
    build_bundle,
    build_network,
)
from .training import TrainConfig, Trainer, run_training

__version__ = "0.1.0"
