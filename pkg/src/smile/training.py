"""Four-phase adversarial training schedule with optional semi-supervision.

The schedule:

    P1_GS   generator vs segmentor, adversarial
    P2_R    reconstructor alone, generator and segmentor fixed
    P3_RS   reconstructor vs segmentor, adversarial
    P4_ALL  joint fine-tune: segmentor step, then generator+reconstructor step

Every batch performs the documented sub-updates in order, and each
sub-update touches exactly one parameter set (the joint P4 update touches
generator and reconstructor).  Opponent outputs are always treated as
constants: when a network only provides input to another's loss its
parameters are detached (gradient may still flow *through* a frozen
adversary to reach the network being trained).

Unlabeled samples train through pseudo-labels: the segmentor predicts,
the prediction is sharpened by the confidence loss, thresholded at epsilon
into a pseudo-mask, and the current phase's step logic runs with that mask
standing in for ground truth.  One unlabeled batch is interleaved per
labeled batch, except in P2_R where the segmentor is frozen and the
confidence loss would be contradictory.

Determinism: all batching randomness comes from one numpy generator whose
state is checkpointed, so a resumed run replays the exact loss sequence,
and a run with no unlabeled data never draws from the semi-supervised
stream (it is bit-identical to a run with semi-supervision disabled).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import losses, metrics, models
from .data import DatasetSplit
from .errors import ConfigError, TrainingDivergedError
from .losses import (
    GEN_ADV, GEN_MSE, RECON_ADV, RECON_MSE, SEG_PAB, SEG_PN, SEMI_CE,
    LossBreakdown, LossTerms, generator_loss, masked_mse, pseudo_label,
    reconstruction_loss, seg_ce, segmentor_loss, semi_confidence_loss,
    update_epsilon,
)
from .models import ModelBundle, build_bundle, param_hash, samples_to_tensors
from .seeding import derive_seed, make_generator
from .tensorio import read_container, write_container

MANIFEST_FORMAT_VERSION = "SMILERUN1"
CHECKPOINT_KIND = "train_checkpoint"

PHASES = ("P1_GS", "P2_R", "P3_RS", "P4_ALL")
EPSILON_MIN, EPSILON_MAX = 0.5, 0.99


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs_per_phase: int = 10
    epsilon_init: float = 0.9
    epsilon_dynamic: bool = True
    labeled_fraction: float = 1.0
    seed: int = 0
    loss_weights: dict[str, float] = field(default_factory=dict)
    semi_enabled: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    g_base_channels: int = 8
    g_depth: int = 4
    s_base_channels: int = 8
    s_depth: int = 3
    r_base_channels: int = 8
    r_depth: int = 3
    val_metrics: str = "epoch"     # epoch | phase | off

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_per_phase < 1:
            raise ConfigError(f"epochs_per_phase must be >= 1, got {self.epochs_per_phase}")
        if not (0.0 < self.epsilon_init < 1.0):
            raise ConfigError(f"epsilon_init must be in (0, 1), got {self.epsilon_init}")
        if not (0.0 < self.labeled_fraction <= 1.0):
            raise ConfigError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")
        if self.val_metrics not in ("epoch", "phase", "off"):
            raise ConfigError(f"val_metrics must be epoch|phase|off, got {self.val_metrics!r}")
        unknown = set(self.loss_weights) - set(losses.DEFAULT_LOSS_WEIGHTS)
        if unknown:
            raise ConfigError(f"unknown loss weight names: {sorted(unknown)}")


@dataclass
class TrainState:
    phase: str = "P1_GS"
    epoch: int = 0                 # completed epochs within the current phase
    epsilon: float = 0.9
    metric_history: list[dict] = field(default_factory=list)


class _Frozen:
    """Temporarily drop requires_grad on a network's parameters so a backward
    pass can flow through it without accumulating gradients into it."""

    def __init__(self, *nets):
        self.nets = nets
        self.saved: list[tuple[torch.nn.Parameter, bool]] = []

    def __enter__(self):
        for net in self.nets:
            for p in net.parameters():
                self.saved.append((p, p.requires_grad))
                p.requires_grad_(False)
        return self

    def __exit__(self, *exc):
        for p, flag in self.saved:
            p.requires_grad_(flag)
        return False


def forward_reconstructor(reconstructor, pseudo_normal: torch.Tensor,
                          mask: torch.Tensor) -> torch.Tensor:
    """Reconstructor forward on the two-channel (image, mask) input."""
    if pseudo_normal.shape != mask.shape:
        raise ConfigError(
            f"reconstructor inputs must share a shape, got {tuple(pseudo_normal.shape)} "
            f"vs {tuple(mask.shape)}")
    return reconstructor(torch.cat([pseudo_normal, mask], dim=1))


def _merge(*breakdowns: LossBreakdown) -> LossBreakdown:
    merged: dict[str, float] = {}
    for bd in breakdowns:
        for k, v in bd.components.items():
            merged[k] = merged.get(k, 0.0) + v
    return LossBreakdown.from_components(merged)


class Trainer:
    """Owns the bundle, optimizers and schedule for one training run."""

    def __init__(self, config: TrainConfig, split: DatasetSplit,
                 out_dir: str | Path | None = None,
                 bundle: ModelBundle | None = None,
                 progress=print):
        config.validate()
        if not split.train:
            raise ConfigError("training split is empty")
        self.config = config
        self.split = split
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.progress = progress

        self.bundle = bundle or build_bundle(
            config.seed,
            g_spec=models.generator_spec(config.g_base_channels, config.g_depth),
            s_spec=models.segmentor_spec(config.s_base_channels, config.s_depth),
            r_spec=models.reconstructor_spec(config.r_base_channels, config.r_depth),
        )
        self.opt = {
            "G": self._make_optimizer(self.bundle.generator),
            "S": self._make_optimizer(self.bundle.segmentor),
            "R": self._make_optimizer(self.bundle.reconstructor),
        }
        self.batch_rng = make_generator(config.seed, "batch")
        self.state = TrainState(epsilon=config.epsilon_init)

        images, masks, labeled = samples_to_tensors(split.train)
        self.images = images
        self.masks = masks
        self.labeled_idx = np.flatnonzero(labeled.numpy())
        self.unlabeled_idx = np.flatnonzero(~labeled.numpy())
        self.abnormal = np.array([s.is_abnormal for s in split.train])
        if self.labeled_idx.size == 0:
            raise ConfigError("no labeled training samples; cannot train")
        self._val_cache = None
        self._last_checkpoint: str | None = None
        self._conf_sum = 0.0
        self._conf_count = 0
        torch.set_flush_denormal(True)

    def _make_optimizer(self, net) -> torch.optim.Adam:
        c = self.config
        return torch.optim.Adam(net.parameters(), lr=c.learning_rate,
                                betas=(c.adam_beta1, c.adam_beta2))

    # ------------------------------------------------------------------
    # Phase steps.  Each one performs the documented sub-updates in order
    # and returns the loss breakdowns of the batch.
    # ------------------------------------------------------------------

    def phase1_step(self, images: torch.Tensor, masks: torch.Tensor):
        """Adversarial generator/segmentor step: segmentor learns to see the
        lesion behind the generated image, then the generator learns to hide
        it while preserving the non-lesion region."""
        G, S = self.bundle.generator, self.bundle.segmentor
        gen_out = G(images)
        self.opt["S"].zero_grad()
        s_terms = segmentor_loss(S(gen_out.detach()), None, masks, self.config.loss_weights)
        s_terms.total.backward()
        self.opt["S"].step()

        self.opt["G"].zero_grad()
        with _Frozen(S):
            g_terms = generator_loss(images, masks, gen_out, S(gen_out),
                                     self.config.loss_weights)
            g_terms.total.backward()
        self.opt["G"].step()
        return s_terms.to_breakdown(), g_terms.to_breakdown()

    def phase2_step(self, images: torch.Tensor, masks: torch.Tensor):
        """Reconstructor pre-training: generator fixed, segmentor untouched."""
        G, R = self.bundle.generator, self.bundle.reconstructor
        with torch.no_grad():
            gen_out = G(images)
        self.opt["R"].zero_grad()
        recon = forward_reconstructor(R, gen_out, masks)
        r_terms = LossTerms({RECON_MSE: reconstruction_loss(recon, images)},
                            self.config.loss_weights)
        r_terms.total.backward()
        self.opt["R"].step()
        return r_terms.to_breakdown()

    def phase3_step(self, images: torch.Tensor, masks: torch.Tensor):
        """Adversarial reconstructor/segmentor step: the segmentor trains on
        both synthetic streams, then the reconstructor makes its implanted
        lesion pixel-faithful and segmentable."""
        G, S, R = self.bundle.generator, self.bundle.segmentor, self.bundle.reconstructor
        b = images.shape[0]
        with torch.no_grad():
            gen_out = G(images)
        recon = forward_reconstructor(R, gen_out, masks)

        self.opt["S"].zero_grad()
        probs = S(torch.cat([gen_out, recon.detach()], dim=0))
        s_terms = segmentor_loss(probs[:b], probs[b:], masks, self.config.loss_weights)
        s_terms.total.backward()
        self.opt["S"].step()

        self.opt["R"].zero_grad()
        with _Frozen(S):
            r_terms = LossTerms({
                RECON_MSE: reconstruction_loss(recon, images),
                RECON_ADV: seg_ce(S(recon), masks),
            }, self.config.loss_weights)
            r_terms.total.backward()
        self.opt["R"].step()
        return s_terms.to_breakdown(), r_terms.to_breakdown()

    def phase4_step(self, images: torch.Tensor, masks: torch.Tensor):
        """Joint fine-tune: segmentor step, then one combined update of the
        generator and reconstructor against the frozen segmentor."""
        G, S, R = self.bundle.generator, self.bundle.segmentor, self.bundle.reconstructor
        b = images.shape[0]
        gen_out = G(images)
        recon = forward_reconstructor(R, gen_out, masks)

        self.opt["S"].zero_grad()
        probs = S(torch.cat([gen_out.detach(), recon.detach()], dim=0))
        s_terms = segmentor_loss(probs[:b], probs[b:], masks, self.config.loss_weights)
        s_terms.total.backward()
        self.opt["S"].step()

        self.opt["G"].zero_grad()
        self.opt["R"].zero_grad()
        with _Frozen(S):
            probs2 = S(torch.cat([gen_out, recon], dim=0))
            gr_terms = LossTerms({
                GEN_MSE: masked_mse(images, gen_out, masks),
                GEN_ADV: seg_ce(probs2[:b], torch.zeros_like(masks)),
                RECON_MSE: reconstruction_loss(recon, images),
                RECON_ADV: seg_ce(probs2[b:], masks),
            }, self.config.loss_weights)
            gr_terms.total.backward()
        self.opt["G"].step()
        self.opt["R"].step()
        return _merge(s_terms.to_breakdown(), gr_terms.to_breakdown())

    def semi_step(self, images: torch.Tensor):
        """Unlabeled step: sharpen the segmentor's confidence, threshold its
        prediction into a pseudo-mask, then run the current phase's logic
        with the pseudo-mask standing in for ground truth.  Samples whose
        pseudo-mask is all-zero are thereby treated as normal (full-image
        passthrough target)."""
        S = self.bundle.segmentor
        self.opt["S"].zero_grad()
        probs = S(images)
        p_l = pseudo_label(probs, self.state.epsilon)
        semi_terms = semi_confidence_loss(probs, p_l, self.config.loss_weights)
        semi_terms.total.backward()
        self.opt["S"].step()

        conf = losses.max_class_confidence(probs)
        self._conf_sum += float(conf.double().sum())
        self._conf_count += conf.numel()

        phase = self.state.phase
        if phase == "P1_GS":
            bd = _merge(*self.phase1_step(images, p_l))
        elif phase == "P3_RS":
            bd = _merge(*self.phase3_step(images, p_l))
        elif phase == "P4_ALL":
            bd = self.phase4_step(images, p_l)
        else:
            raise ConfigError(f"semi steps are not run in phase {phase}")
        return _merge(semi_terms.to_breakdown(), bd)

    # ------------------------------------------------------------------
    # Epoch / phase orchestration
    # ------------------------------------------------------------------

    def _phase_step(self, phase: str, images, masks) -> LossBreakdown:
        if phase == "P1_GS":
            return _merge(*self.phase1_step(images, masks))
        if phase == "P2_R":
            return self.phase2_step(images, masks)
        if phase == "P3_RS":
            return _merge(*self.phase3_step(images, masks))
        if phase == "P4_ALL":
            return self.phase4_step(images, masks)
        raise ConfigError(f"unknown phase {phase!r}")

    def _semi_active(self, phase: str) -> bool:
        return (self.config.semi_enabled and self.unlabeled_idx.size > 0
                and phase != "P2_R")

    def _batches(self, order: np.ndarray):
        bs = self.config.batch_size
        for start in range(0, len(order), bs):
            yield order[start:start + bs]

    def _unlabeled_order(self, n_batches: int) -> np.ndarray:
        """Enough shuffled unlabeled indices to serve one batch per labeled
        batch, cycling through fresh permutations as needed."""
        need = n_batches * self.config.batch_size
        chunks = []
        have = 0
        while have < need:
            perm = self.batch_rng.permutation(self.unlabeled_idx)
            chunks.append(perm)
            have += perm.size
        return np.concatenate(chunks)[:need]

    def run_epoch(self, phase: str) -> dict:
        labeled_order = self.batch_rng.permutation(self.labeled_idx)
        batches = list(self._batches(labeled_order))
        semi = self._semi_active(phase)
        if semi:
            unlabeled_order = self._unlabeled_order(len(batches))
        self._conf_sum = 0.0
        self._conf_count = 0

        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        semi_sums: dict[str, float] = {}
        semi_counts: dict[str, int] = {}
        n_abnormal = 0
        n_seen = 0

        for i, idx in enumerate(batches):
            bd = self._phase_step(phase, self.images[idx], self.masks[idx])
            self._check_finite(bd, phase)
            for k, v in bd.components.items():
                sums[k] = sums.get(k, 0.0) + v
                counts[k] = counts.get(k, 0) + 1
            n_abnormal += int(self.abnormal[idx].sum())
            n_seen += len(idx)
            if semi:
                uidx = unlabeled_order[i * self.config.batch_size:(i + 1) * self.config.batch_size]
                sbd = self.semi_step(self.images[uidx])
                self._check_finite(sbd, f"{phase} semi")
                for k, v in sbd.components.items():
                    semi_sums[k] = semi_sums.get(k, 0.0) + v
                    semi_counts[k] = semi_counts.get(k, 0) + 1

        if semi and self.config.epsilon_dynamic and self._conf_count:
            self.state.epsilon = update_epsilon([self._conf_sum / self._conf_count])

        entry = {
            "phase": phase,
            "epoch": self.state.epoch + 1,
            "loss": {k: sums[k] / counts[k] for k in sorted(sums)},
            "semi": {k: semi_sums[k] / semi_counts[k] for k in sorted(semi_sums)} if semi else None,
            "epsilon": self.state.epsilon,
            "abnormal_fraction": n_abnormal / max(1, n_seen),
            "n_batches": len(batches),
        }
        entry["loss_total"] = sum(entry["loss"].values())
        return entry

    def _check_finite(self, bd: LossBreakdown, context: str) -> None:
        if not np.isfinite(bd.total):
            path = self._dump_emergency_checkpoint()
            raise TrainingDivergedError(
                f"non-finite loss in {context}: {bd.components}; "
                f"last good checkpoint: {self._last_checkpoint}",
                last_good_checkpoint=self._last_checkpoint or path)

    def _val_tensors(self):
        if self._val_cache is None:
            val_abn = [s for s in self.split.validation if s.is_abnormal and s.labeled]
            val_norm = [s for s in self.split.validation if not s.is_abnormal]
            self._val_cache = {
                "abnormal": samples_to_tensors(val_abn) if val_abn else None,
                "normal": samples_to_tensors(val_norm) if val_norm else None,
            }
        return self._val_cache

    def validation_metrics(self) -> dict:
        """Identity on abnormal validation samples, a proxy healthiness using
        the *current adversarial* segmentor (the frozen evaluation segmentor
        does not exist during training), and mean passthrough error on normal
        validation samples."""
        out: dict[str, float | None] = {"val_identity": None, "val_h_proxy": None,
                                        "val_normal_mae": None}
        cache = self._val_tensors()
        G, S = self.bundle.generator, self.bundle.segmentor
        if cache["abnormal"] is not None:
            images, masks, _ = cache["abnormal"]
            gen = metrics.generate_batched(G, images)
            keep = (1.0 - masks).double()
            out["val_identity"] = float(
                metrics.ms_ssim_batch(gen.double() * keep, images.double() * keep).mean())
            area_real = metrics.predicted_masks(S, images).sum()
            area_gen = metrics.predicted_masks(S, gen).sum()
            out["val_h_proxy"] = (1.0 - float(area_gen) / float(area_real)
                                  if float(area_real) > 0 else None)
        if cache["normal"] is not None:
            images, _, _ = cache["normal"]
            gen = metrics.generate_batched(G, images)
            out["val_normal_mae"] = float((gen - images).abs().mean())
        return out

    def run_phase(self, phase: str) -> None:
        while self.state.epoch < self.config.epochs_per_phase:
            entry = self.run_epoch(phase)
            if self.config.val_metrics == "epoch" or (
                    self.config.val_metrics == "phase"
                    and self.state.epoch + 1 == self.config.epochs_per_phase):
                entry.update(self.validation_metrics())
            self.state.epoch += 1
            self.state.metric_history.append(entry)
            self._progress_line(entry)

    def _progress_line(self, entry: dict) -> None:
        parts = [f"phase={entry['phase']}", f"epoch={entry['epoch']}"]
        parts += [f"{k}={v:.6g}" for k, v in entry["loss"].items()]
        if entry.get("semi"):
            parts += [f"semi_{k}={v:.6g}" for k, v in entry["semi"].items()]
        for k in ("val_identity", "val_h_proxy", "val_normal_mae"):
            if entry.get(k) is not None:
                parts.append(f"{k}={entry[k]:.6g}")
        parts.append(f"epsilon={entry['epsilon']:.6g}")
        self.progress(" ".join(parts))

    def run(self) -> dict:
        """Execute the remaining schedule; returns the manifest dictionary."""
        start = PHASES.index(self.state.phase)
        for phase in PHASES[start:]:
            self.state.phase = phase
            self.run_phase(phase)
            if self.out_dir is not None:
                self._last_checkpoint = str(self.save_checkpoint(
                    self.out_dir / f"checkpoint_{phase}.smileckpt"))
            if phase != PHASES[-1]:
                self.state.epoch = 0
        manifest = self.build_manifest()
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "checkpoint_final.smileckpt")
            write_manifest(manifest, self.out_dir / "manifest.json")
        return manifest

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def _optimizer_tensors(self) -> dict[str, torch.Tensor]:
        tensors: dict[str, torch.Tensor] = {}
        for net_name, net in (("G", self.bundle.generator),
                              ("S", self.bundle.segmentor),
                              ("R", self.bundle.reconstructor)):
            opt = self.opt[net_name]
            named = dict(net.named_parameters())
            for pname, p in named.items():
                state = opt.state.get(p)
                if not state:
                    continue
                for key in ("step", "exp_avg", "exp_avg_sq"):
                    val = state[key]
                    if not isinstance(val, torch.Tensor):
                        val = torch.tensor(float(val))
                    tensors[f"opt.{net_name}.{pname}.{key}"] = val
        return tensors

    def save_checkpoint(self, path: str | Path) -> Path:
        path = Path(path)
        meta = {
            "kind": CHECKPOINT_KIND,
            "config": asdict(self.config),
            "state": {
                "phase": self.state.phase,
                "epoch": self.state.epoch,
                "epsilon": self.state.epsilon,
                "metric_history": self.state.metric_history,
            },
            "specs": {
                name: {"spec": asdict(net.spec), "init_seed": net.init_seed}
                for name, net in (("G", self.bundle.generator),
                                  ("S", self.bundle.segmentor),
                                  ("R", self.bundle.reconstructor))
            },
            "numpy_rng": self.batch_rng.bit_generator.state,
        }
        tensors: dict[str, torch.Tensor] = {}
        for name, net in (("G", self.bundle.generator),
                          ("S", self.bundle.segmentor),
                          ("R", self.bundle.reconstructor)):
            for k, v in net.state_dict().items():
                tensors[f"{name}.param.{k}"] = v
        tensors.update(self._optimizer_tensors())
        tensors["rng.torch"] = torch.get_rng_state()
        write_container(path, meta, tensors)
        return path

    def _dump_emergency_checkpoint(self) -> str | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / "checkpoint_diverged.smileckpt"
        try:
            self.save_checkpoint(path)
        except Exception:
            return None
        return str(path)

    @classmethod
    def from_checkpoint(cls, path: str | Path, split: DatasetSplit,
                        out_dir: str | Path | None = None, progress=print) -> "Trainer":
        meta, tensors = read_container(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise ConfigError(f"{path}: not a training checkpoint (kind={meta.get('kind')!r})")
        cfg_dict = dict(meta["config"])
        config = TrainConfig(**cfg_dict)
        trainer = cls(config, split, out_dir=out_dir, progress=progress)
        for name, net in (("G", trainer.bundle.generator),
                          ("S", trainer.bundle.segmentor),
                          ("R", trainer.bundle.reconstructor)):
            prefix = f"{name}.param."
            state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            net.load_state_dict(state)
            opt = trainer.opt[name]
            for pname, p in net.named_parameters():
                base = f"opt.{name}.{pname}."
                if base + "exp_avg" in tensors:
                    opt.state[p] = {
                        "step": tensors[base + "step"],
                        "exp_avg": tensors[base + "exp_avg"].clone(),
                        "exp_avg_sq": tensors[base + "exp_avg_sq"].clone(),
                    }
        st = meta["state"]
        trainer.state = TrainState(phase=st["phase"], epoch=st["epoch"],
                                   epsilon=st["epsilon"],
                                   metric_history=list(st["metric_history"]))
        trainer.batch_rng.bit_generator.state = meta["numpy_rng"]
        torch.set_rng_state(tensors["rng.torch"].to(torch.uint8))
        # a phase checkpoint is written after its last epoch; resume at the next phase
        if trainer.state.epoch >= config.epochs_per_phase:
            idx = PHASES.index(trainer.state.phase)
            if idx + 1 < len(PHASES):
                trainer.state.phase = PHASES[idx + 1]
                trainer.state.epoch = 0
        return trainer

    def build_manifest(self) -> dict:
        cfg = asdict(self.config)
        hashes = {name: param_hash(net) for name, net in self.bundle.networks().items()}
        manifest = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "config": cfg,
            "seeds": {
                "root": self.config.seed,
                "streams": {name: derive_seed(self.config.seed, name)
                            for name in ("init.G", "init.S", "init.R", "batch")},
            },
            "phase_schedule": [{"phase": p, "epochs": self.config.epochs_per_phase}
                               for p in PHASES],
            "data": {
                "n_train": len(self.split.train),
                "n_labeled": int(self.labeled_idx.size),
                "n_unlabeled": int(self.unlabeled_idx.size),
                "n_validation": len(self.split.validation),
                "n_test": len(self.split.test),
                "labeled_fraction": self.split.labeled_fraction,
            },
            "history": self.state.metric_history,
            "final": {
                "epsilon": self.state.epsilon,
                "param_hashes": hashes,
            },
        }
        return manifest


def write_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def run_training(config: TrainConfig, split: DatasetSplit,
                 out_dir: str | Path | None = None,
                 resume_from: str | Path | None = None,
                 progress=print) -> tuple[ModelBundle, dict]:
    """Run the full schedule (or its remainder, when resuming)."""
    if resume_from is not None:
        trainer = Trainer.from_checkpoint(resume_from, split, out_dir=out_dir,
                                          progress=progress)
    else:
        trainer = Trainer(config, split, out_dir=out_dir, progress=progress)
    manifest = trainer.run()
    return trainer.bundle, manifest


def load_bundle_from_checkpoint(path: str | Path) -> ModelBundle:
    """Rebuild just the networks from a training checkpoint (no optimizer)."""
    meta, tensors = read_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path}: not a training checkpoint (kind={meta.get('kind')!r})")
    nets = {}
    for name in ("G", "S", "R"):
        info = meta["specs"][name]
        spec = models.NetworkSpec(**info["spec"])
        net = models.UNet(spec, seed=int(info["init_seed"]))
        prefix = f"{name}.param."
        net.load_state_dict({k[len(prefix):]: v for k, v in tensors.items()
                             if k.startswith(prefix)})
        nets[name] = net
    return ModelBundle(generator=nets["G"], segmentor=nets["S"], reconstructor=nets["R"])
