"""Encoder-decoder networks: generator G, segmentor S, reconstructor R.

All three share a U-Net body -- conv/instance-norm/leaky-ReLU blocks, max-pool
downsampling, transposed-conv upsampling, concatenation skip connections at
every resolution level -- and differ only in channel counts and output head:

    G: 1 -> 1, linear output clamped to [0, 1]
    S: 1 -> 2, per-pixel softmax (background, lesion)
    R: 2 -> 1 (pseudo-normal image + lesion mask), linear clamped

Initialization is deterministic given a seed and never disturbs the caller's
global RNG state.  Forward passes are pure functions of (parameters, input).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NonFiniteError, ShapeError
from . import tensorio

LINEAR_CLAMPED = "linear_clamped"
SOFTMAX = "softmax"


@dataclass
class NetworkSpec:
    in_channels: int
    out_channels: int
    depth: int = 4            # number of 2x downsamplings
    base_channels: int = 8
    output_head: str = LINEAR_CLAMPED

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.output_head not in (LINEAR_CLAMPED, SOFTMAX):
            raise ConfigError(f"unknown output_head {self.output_head!r}")
        if self.output_head == SOFTMAX and self.out_channels != 2:
            raise ConfigError("softmax head requires out_channels = 2 (background, lesion)")


def generator_spec(base_channels: int = 8, depth: int = 4) -> NetworkSpec:
    return NetworkSpec(1, 1, depth=depth, base_channels=base_channels, output_head=LINEAR_CLAMPED)


def segmentor_spec(base_channels: int = 8, depth: int = 3) -> NetworkSpec:
    return NetworkSpec(1, 2, depth=depth, base_channels=base_channels, output_head=SOFTMAX)


def reconstructor_spec(base_channels: int = 8, depth: int = 3) -> NetworkSpec:
    return NetworkSpec(2, 1, depth=depth, base_channels=base_channels, output_head=LINEAR_CLAMPED)


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.LeakyReLU(0.2),
    )


class UNet(nn.Module):
    """U-Net with skip connections at every resolution level."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        spec.validate()
        super().__init__()
        self.spec = spec
        self.init_seed = seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            ch = spec.base_channels
            self.inc = _conv_block(spec.in_channels, ch)
            enc_channels = [ch]
            self.encoders = nn.ModuleList()
            for _ in range(spec.depth):
                self.encoders.append(_conv_block(ch, ch * 2))
                ch *= 2
                enc_channels.append(ch)
            self.upsamplers = nn.ModuleList()
            self.decoders = nn.ModuleList()
            for d in range(spec.depth):
                self.upsamplers.append(nn.ConvTranspose2d(ch, ch // 2, 2, stride=2))
                self.decoders.append(_conv_block(ch // 2 + enc_channels[-2 - d], ch // 2))
                ch //= 2
            self.head = nn.Conv2d(ch, spec.out_channels, 1)
            if spec.output_head == LINEAR_CLAMPED:
                # start outputs near mid-range so the clamp is inactive at init
                nn.init.constant_(self.head.bias, 0.5)
        self.pool = nn.MaxPool2d(2)

    def _check_shape(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected input of shape (B, {self.spec.in_channels}, H, W), got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        for level in range(self.spec.depth):
            if h % 2 or w % 2:
                raise ShapeError(
                    f"spatial size {x.shape[-2]}x{x.shape[-1]} is not divisible by "
                    f"2^{self.spec.depth}: level {level} would pool an odd size {h}x{w}")
            h //= 2
            w //= 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_shape(x)
        skips = [self.inc(x)]
        h = skips[0]
        for enc in self.encoders:
            h = enc(self.pool(h))
            skips.append(h)
        for d, (up, dec) in enumerate(zip(self.upsamplers, self.decoders)):
            h = up(h)
            h = dec(torch.cat([h, skips[-2 - d]], dim=1))
        out = self.head(h)
        if self.spec.output_head == LINEAR_CLAMPED:
            return out.clamp(0.0, 1.0)
        return F.softmax(out, dim=1)


class IdentityGenerator(nn.Module):
    """Debug generator that copies its input (clamped).  Used to anchor the
    metric endpoints: identity = 1 and healthiness = 0 by construction."""

    def __init__(self):
        super().__init__()
        self.spec = generator_spec()
        self.init_seed = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.clamp(0.0, 1.0)


def build_network(spec: NetworkSpec, seed: int) -> UNet:
    return UNet(spec, seed=seed)


@dataclass
class ModelBundle:
    """The trainable triple plus the optional frozen evaluation segmentor."""

    generator: nn.Module
    segmentor: nn.Module
    reconstructor: nn.Module
    eval_segmentor: nn.Module | None = None

    def networks(self) -> dict[str, nn.Module]:
        nets = {"G": self.generator, "S": self.segmentor, "R": self.reconstructor}
        if self.eval_segmentor is not None:
            nets["S_pred"] = self.eval_segmentor
        return nets

    def validate(self) -> None:
        checks = [
            ("G", self.generator.spec, 1, 1, LINEAR_CLAMPED),
            ("S", self.segmentor.spec, 1, 2, SOFTMAX),
            ("R", self.reconstructor.spec, 2, 1, LINEAR_CLAMPED),
        ]
        for name, spec, cin, cout, head in checks:
            if (spec.in_channels, spec.out_channels, spec.output_head) != (cin, cout, head):
                raise ConfigError(
                    f"{name} must be {cin}->{cout} with {head} head, got "
                    f"{spec.in_channels}->{spec.out_channels} {spec.output_head}")


def build_bundle(root_seed: int, g_spec: NetworkSpec | None = None,
                 s_spec: NetworkSpec | None = None,
                 r_spec: NetworkSpec | None = None) -> ModelBundle:
    from .seeding import derive_seed
    bundle = ModelBundle(
        generator=UNet(g_spec or generator_spec(), seed=derive_seed(root_seed, "init.G")),
        segmentor=UNet(s_spec or segmentor_spec(), seed=derive_seed(root_seed, "init.S")),
        reconstructor=UNet(r_spec or reconstructor_spec(), seed=derive_seed(root_seed, "init.R")),
    )
    bundle.validate()
    return bundle


def param_hash(net: nn.Module) -> str:
    """SHA-256 over all parameters and buffers, in state_dict order."""
    h = hashlib.sha256()
    for name, t in net.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def check_finite(net: nn.Module, context: str = "") -> None:
    for name, p in net.named_parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteError(f"{context}: parameter {name} contains NaN/Inf")


def find_nonfinite_layer(net: nn.Module, x: torch.Tensor) -> str | None:
    """Name the first submodule whose output is non-finite, for diagnostics."""
    bad: list[str] = []
    hooks = []

    def make_hook(name):
        def hook(_mod, _inp, out):
            if isinstance(out, torch.Tensor) and not torch.isfinite(out).all() and not bad:
                bad.append(name)
        return hook

    for name, mod in net.named_modules():
        if name:
            hooks.append(mod.register_forward_hook(make_hook(name)))
    try:
        with torch.no_grad():
            net(x)
    finally:
        for h in hooks:
            h.remove()
    return bad[0] if bad else None


def samples_to_tensors(samples, device=None, dtype=torch.float32):
    """Stack Samples into (images, masks) tensors of shape (B, 1, H, W).

    Unlabeled samples contribute an all-zero mask; use the returned
    ``labeled`` bool tensor to tell them apart from genuinely empty masks.
    """
    import numpy as np
    images = torch.from_numpy(np.stack([s.image for s in samples])).unsqueeze(1).to(dtype)
    h, w = samples[0].image.shape
    masks = torch.zeros(len(samples), 1, h, w, dtype=dtype)
    labeled = torch.zeros(len(samples), dtype=torch.bool)
    for i, s in enumerate(samples):
        if s.mask is not None:
            masks[i, 0] = torch.from_numpy(s.mask.astype("float32"))
            labeled[i] = True
    if device is not None:
        images, masks = images.to(device), masks.to(device)
    return images, masks, labeled


# ---------------------------------------------------------------------------
# Parameter persistence (independent of optimizer state)
# ---------------------------------------------------------------------------

def save_network(net: nn.Module, path) -> None:
    meta = {
        "kind": "identity_generator" if isinstance(net, IdentityGenerator) else "unet",
        "spec": asdict(net.spec),
        "init_seed": net.init_seed,
    }
    tensors = {f"param.{k}": v for k, v in net.state_dict().items()}
    tensorio.write_container(path, meta, tensors)


def load_network(path) -> nn.Module:
    meta, tensors = tensorio.read_container(path)
    if meta.get("kind") == "identity_generator":
        return IdentityGenerator()
    if meta.get("kind") != "unet":
        raise ConfigError(f"{path}: not a network container (kind={meta.get('kind')!r})")
    spec = NetworkSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["spec"].items()})
    net = UNet(spec, seed=int(meta["init_seed"]))
    state = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    net.load_state_dict(state)
    return net
