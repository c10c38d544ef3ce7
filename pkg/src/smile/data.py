"""Phantom brain-slice dataset: generation, preprocessing, splits, persistence.

Images are H x W float32 grids in [0, 1]; lesion masks are uint8 grids of
exactly 0/1.  Abnormal phantoms are a smooth elliptical "brain" with
low-frequency texture plus bright, soft-edged lesion blobs whose exact pixel
support is the ground-truth mask.  Normal phantoms are the same brain with
no blobs and an all-zero mask.

Dataset container format (version ``SMILEDS1``), one file per split part:

    SMILEDS1\n
    part=<train|validation|test>\n
    count=<int>\n
    height=<int>\n
    width=<int>\n
    dtype=float32\n
    labeled_fraction=<float repr>\n
    \n
    then per sample, in order:
      id_len  uint16 little-endian
      id      id_len bytes of UTF-8
      flags   uint8   (bit0 = is_abnormal, bit1 = mask present)
      image   height*width float32 little-endian, row-major
      mask    height*width uint8            (only if bit1 set)

The layout is byte-exact reproducible: saving the same split twice yields
identical files.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    ConfigError,
    ConfigurationInfeasibleError,
    DatasetFormatError,
    InsufficientDataError,
    UnknownFormatVersionError,
)
from .seeding import derive_seed

DATASET_FORMAT_VERSION = "SMILEDS1"
PART_NAMES = ("train", "validation", "test")

_MAX_PLACEMENT_ATTEMPTS = 200


@dataclass
class Sample:
    """One image with optional ground-truth lesion mask.

    A sample is *labeled* when ``mask`` is present (normal samples carry an
    all-zero mask), and *unlabeled* when ``mask`` is None.
    """

    id: str
    image: np.ndarray            # (H, W) float32 in [0, 1]
    mask: np.ndarray | None      # (H, W) uint8 of 0/1, or None if unlabeled
    is_abnormal: bool

    @property
    def labeled(self) -> bool:
        return self.mask is not None

    def validate(self) -> None:
        if self.image.ndim != 2:
            raise ConfigError(f"sample {self.id}: image must be 2-D, got {self.image.shape}")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ConfigError(f"sample {self.id}: pixels outside [0, 1]")
        if self.mask is not None:
            if self.mask.shape != self.image.shape:
                raise ConfigError(f"sample {self.id}: mask shape {self.mask.shape} != image shape")
            vals = np.unique(self.mask)
            if not np.all(np.isin(vals, (0, 1))):
                raise ConfigError(f"sample {self.id}: mask values outside {{0, 1}}")
            n_lesion = int(self.mask.sum())
            if self.is_abnormal and n_lesion < 1:
                raise ConfigError(f"sample {self.id}: abnormal but mask empty")
            if not self.is_abnormal and n_lesion > 0:
                raise ConfigError(f"sample {self.id}: normal but mask non-zero")


@dataclass
class PhantomConfig:
    image_size: int = 64
    n_samples: int = 2400
    abnormal_fraction: float = 0.7
    lesion_count_range: tuple[int, int] = (1, 3)
    lesion_radius_range: tuple[float, float] = (3.0, 7.0)
    lesion_intensity_boost: float = 0.5
    texture_smoothness: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        s = self.image_size
        if s < 32 or (s & (s - 1)) != 0:
            raise ConfigError(f"image_size must be a power of two >= 32, got {s}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if not (0.0 <= self.abnormal_fraction <= 1.0):
            raise ConfigError(f"abnormal_fraction must be in [0, 1], got {self.abnormal_fraction}")
        lo, hi = self.lesion_count_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"lesion_count_range must satisfy 1 <= lo <= hi, got {self.lesion_count_range}")
        rlo, rhi = self.lesion_radius_range
        if rlo <= 0 or rhi < rlo:
            raise ConfigError(f"lesion_radius_range must satisfy 0 < lo <= hi, got {self.lesion_radius_range}")
        if rhi > self.image_size / 4:
            raise ConfigError(
                f"lesion_radius_range max {rhi} exceeds image_size/4 = {self.image_size / 4}")
        if self.lesion_intensity_boost <= 0:
            raise ConfigError(f"lesion_intensity_boost must be > 0, got {self.lesion_intensity_boost}")
        if self.texture_smoothness <= 0:
            raise ConfigError(f"texture_smoothness must be > 0, got {self.texture_smoothness}")


@dataclass
class DatasetSplit:
    train: list[Sample] = field(default_factory=list)
    validation: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)
    labeled_fraction: float = 1.0

    def parts(self) -> dict[str, list[Sample]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def validate(self) -> None:
        ids: dict[str, str] = {}
        for part, samples in self.parts().items():
            for s in samples:
                if s.id in ids:
                    raise ConfigError(f"sample id {s.id} appears in both {ids[s.id]} and {part}")
                ids[s.id] = part
        if self.train:
            labeled = sum(1 for s in self.train if s.labeled)
            expected = self.labeled_fraction * len(self.train)
            if abs(labeled - expected) > 1.0:
                raise ConfigError(
                    f"train labeled count {labeled} inconsistent with labeled_fraction "
                    f"{self.labeled_fraction} (expected ~{expected:.1f})")


def percentile_clip(pixels: np.ndarray, p: float = 99.5) -> np.ndarray:
    """Clip intensities to [0, V_p] and rescale so the maximum is 1.

    V_p is the nearest-rank p-th percentile of the grid's values.  An
    all-zero (or all non-positive) grid is returned as all zeros rather than
    dividing by zero.
    """
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise ConfigError("percentile_clip: empty grid")
    if not (0.0 < p <= 100.0):
        raise ConfigError(f"percentile_clip: p must be in (0, 100], got {p}")
    flat = np.sort(pixels.astype(np.float64, copy=False), axis=None)
    rank = max(1, math.ceil(p / 100.0 * flat.size))   # nearest-rank, 1-based
    v = flat[rank - 1]
    if v <= 0.0:
        return np.zeros(pixels.shape, dtype=np.float32)
    out = np.clip(pixels.astype(np.float64, copy=False), 0.0, v) / v
    return out.astype(np.float32)


def _disk_offsets(radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer offsets (dy, dx) with dy^2 + dx^2 <= r^2, plus their distances."""
    r_int = int(math.floor(radius))
    dy, dx = np.mgrid[-r_int:r_int + 1, -r_int:r_int + 1]
    d2 = dy * dy + dx * dx
    keep = d2 <= radius * radius
    return dy[keep], dx[keep], np.sqrt(d2[keep])


def _render_brain(size: int, rng: np.random.Generator, smoothness: float):
    """Elliptical brain with low-frequency texture.  Returns (image, inside)."""
    cy = size / 2 + rng.uniform(-size / 32, size / 32)
    cx = size / 2 + rng.uniform(-size / 32, size / 32)
    ay = size * rng.uniform(0.30, 0.38)
    ax = size * rng.uniform(0.30, 0.38)
    yy, xx = np.mgrid[0:size, 0:size]
    ell = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2
    inside = ell <= 1.0

    noise = rng.standard_normal((size, size))
    texture = gaussian_filter(noise, sigma=smoothness)
    std = texture.std()
    if std > 0:
        texture = texture / std
    # gentle radial falloff so the rim is slightly darker than the core
    base = 0.55 - 0.10 * ell
    img = np.where(inside, base + 0.10 * texture, 0.0)
    return np.clip(img, 0.0, None), (inside, cy, cx, ay, ax)


def _place_lesions(img, mask, brain, cfg: PhantomConfig, rng: np.random.Generator) -> None:
    """Superimpose bright soft-edged blobs; records exact support in mask."""
    inside, cy, cx, ay,ax = brain
    size = cfg.image_size
    n_lesions = int(rng.integers(cfg.lesion_count_range[0], cfg.lesion_count_range[1] + 1))
    placed: list[tuple[float, float, float]] = []
    for _ in range(n_lesions):
        for attempt in range(_MAX_PLACEMENT_ATTEMPTS):
            r = rng.uniform(*cfg.lesion_radius_range)
            ly = rng.uniform(r + 1, size - r - 1)
            lx = rng.uniform(r + 1, size - r - 1)
            # blob must sit fully inside the ellipse (so masks stay within the
            # brain) with a 1px margin
            margin = (r + 1.0)
            if ((ly - cy) / (ay - margin)) ** 2 + ((lx - cx) / (ax - margin)) ** 2 > 1.0:
                continue
            # keep blobs disjoint (3px gap) so each mask component is one blob
            if any((ly - py) ** 2 + (lx - px) ** 2 < (r + pr + 3.0) ** 2 for py, px, pr in placed):
                continue
            dy, dx, dist = _disk_offsets(r)
            ys = (np.round(ly).astype(int) + dy).astype(int)
            xs = (np.round(lx).astype(int) + dx).astype(int)
            # soft-edged boost: bright core fading to ~30% at the rim
            profile = np.exp(-1.2 * (dist / r) ** 2)
            img[ys, xs] += cfg.lesion_intensity_boost * profile
            mask[ys, xs] = 1
            placed.append((ly, lx, r))
            break
        else:
            raise ConfigurationInfeasibleError(
                f"could not place a lesion of radius range {cfg.lesion_radius_range} inside the "
                f"brain ellipse after {_MAX_PLACEMENT_ATTEMPTS} attempts; shrink "
                f"lesion_radius_range or lesion_count_range")


def generate_phantom(config: PhantomConfig, clip_scope: str = "image") -> list[Sample]:
    """Generate ``config.n_samples`` phantom samples, deterministic in the seed.

    ``clip_scope`` selects the percentile-clipping unit: ``image`` (default)
    clips each slice on its own statistics; ``volume`` treats the whole
    generated set as one volume and clips every slice with the shared V_p,
    for workflows that stack slices of a common acquisition.
    """
    config.validate()
    if clip_scope not in ("image", "volume"):
        raise ConfigError(f"clip_scope must be 'image' or 'volume', got {clip_scope!r}")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = config.n_samples
    n_abnormal = int(round(n * config.abnormal_fraction))
    flags = np.zeros(n, dtype=bool)
    flags[:n_abnormal] = True
    flags = flags[rng.permutation(n)]

    raws: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    for i in range(n):
        img, brain = _render_brain(config.image_size, rng, config.texture_smoothness)
        mask = np.zeros((config.image_size, config.image_size), dtype=np.uint8)
        if flags[i]:
            _place_lesions(img, mask, brain, config, rng)
        raws.append(img)
        masks.append(mask)

    if clip_scope == "image":
        images = [percentile_clip(raw, 99.5) for raw in raws]
    else:
        stacked = percentile_clip(np.stack(raws), 99.5)
        images = [stacked[i] for i in range(n)]

    return [
        Sample(id=f"s{i:05d}", image=images[i], mask=masks[i], is_abnormal=bool(flags[i]))
        for i in range(n)
    ]


def split_dataset(samples: list[Sample], ratios: tuple[float, float, float], seed: int) -> DatasetSplit:
    """Disjoint train/validation/test partition, deterministic in the seed."""
    if len(samples) < 3:
        raise InsufficientDataError(f"need at least 3 samples to split, got {len(samples)}")
    if any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")
    n = len(samples)
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise InsufficientDataError(
            f"ratios {ratios} on {n} samples yield an empty part "
            f"(train={n_train}, val={n_val}, test={n_test})")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    picked = [samples[j] for j in order]
    return DatasetSplit(
        train=picked[:n_train],
        validation=picked[n_train:n_train + n_val],
        test=picked[n_train + n_val:],
        labeled_fraction=1.0,
    )


def strip_labels(split: DatasetSplit, labeled_fraction: float, seed: int) -> DatasetSplit:
    """Remove masks from a uniform random subset of train samples.

    After stripping, exactly round(labeled_fraction * n_train) train samples
    keep their masks.  Validation and test are untouched; image pixels are
    never modified.  labeled_fraction = 0 is rejected: the framework needs a
    meaningful labeled core to train on.
    """
    if not (0.0 < labeled_fraction <= 1.0):
        raise ConfigError(
            f"labeled_fraction must be in (0, 1], got {labeled_fraction}; fully unlabeled "
            f"training is unsupported (training collapses without a labeled core)")
    n = len(split.train)
    n_keep = int(round(n * labeled_fraction))
    n_strip = n - n_keep
    rng = np.random.Generator(np.random.PCG64(seed))
    strip_idx = set(rng.choice(n, size=n_strip, replace=False).tolist()) if n_strip else set()
    new_train = [
        replace(s, mask=None) if i in strip_idx else s
        for i, s in enumerate(split.train)
    ]
    return DatasetSplit(
        train=new_train,
        validation=split.validation,
        test=split.test,
        labeled_fraction=labeled_fraction,
    )


def default_split_seed(root_seed: int) -> int:
    return derive_seed(root_seed, "split")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _part_filename(part: str) -> str:
    return f"{part}.smileds"


def _write_part(path: Path, part: str, samples: list[Sample], labeled_fraction: float,
                height: int, width: int) -> None:
    header = (
        f"{DATASET_FORMAT_VERSION}\n"
        f"part={part}\n"
        f"count={len(samples)}\n"
        f"height={height}\n"
        f"width={width}\n"
        f"dtype=float32\n"
        f"labeled_fraction={labeled_fraction!r}\n"
        f"\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for s in samples:
            sid = s.id.encode("utf-8")
            flags = (1 if s.is_abnormal else 0) | (2 if s.mask is not None else 0)
            f.write(struct.pack("<H", len(sid)))
            f.write(sid)
            f.write(struct.pack("<B", flags))
            img = np.ascontiguousarray(s.image, dtype="<f4")
            if img.shape != (height, width):
                raise DatasetFormatError(f"sample {s.id}: image shape {img.shape} != ({height}, {width})")
            f.write(img.tobytes())
            if s.mask is not None:
                f.write(np.ascontiguousarray(s.mask, dtype=np.uint8).tobytes())


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    """Write one container file per split part under the given directory."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {s.image.shape for part in split.parts().values() for s in part}
    if len(shapes) > 1:
        raise DatasetFormatError(f"samples have inconsistent shapes: {sorted(shapes)}")
    height, width = (shapes.pop() if shapes else (0, 0))
    for part, samples in split.parts().items():
        _write_part(out / _part_filename(part), part, samples, split.labeled_fraction, height, width)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DatasetFormatError(f"truncated file while reading {what} "
                                 f"(wanted {n} bytes, got {len(buf)})")
    return buf


def _read_part(path: Path) -> tuple[str, list[Sample], float]:
    with open(path, "rb") as f:
        first = f.readline().decode("ascii", errors="replace").rstrip("\n")
        if first != DATASET_FORMAT_VERSION:
            raise UnknownFormatVersionError(
                f"{path}: unknown dataset format version {first!r} "
                f"(expected {DATASET_FORMAT_VERSION})")
        fields: dict[str, str] = {}
        while True:
            line = f.readline().decode("ascii", errors="replace")
            if line == "":
                raise DatasetFormatError(f"{path}: header not terminated by blank line")
            line = line.rstrip("\n")
            if line == "":
                break
            if "=" not in line:
                raise DatasetFormatError(f"{path}: malformed header line {line!r}")
            k, v = line.split("=", 1)
            fields[k] = v
        for key in ("part", "count", "height", "width", "dtype", "labeled_fraction"):
            if key not in fields:
                raise DatasetFormatError(f"{path}: missing header field {key!r}")
        if fields["dtype"] != "float32":
            raise DatasetFormatError(f"{path}: unsupported dtype {fields['dtype']!r}")
        part = fields["part"]
        if part not in PART_NAMES:
            raise DatasetFormatError(f"{path}: unknown part name {part!r}")
        count = int(fields["count"])
        height = int(fields["height"])
        width = int(fields["width"])
        labeled_fraction = float(fields["labeled_fraction"])
        n_px = height * width

        samples: list[Sample] = []
        for i in range(count):
            where = f"record {i} of {count} in {path.name}"
            (id_len,) = struct.unpack("<H", _read_exact(f, 2, f"id length, {where}"))
            sid = _read_exact(f, id_len, f"id, {where}").decode("utf-8")
            (flags,) = struct.unpack("<B", _read_exact(f, 1, f"flags, {where}"))
            img = np.frombuffer(_read_exact(f, 4 * n_px, f"image, {where}"), dtype="<f4")
            img = img.reshape(height, width).copy()
            mask = None
            if flags & 2:
                mask = np.frombuffer(_read_exact(f, n_px, f"mask, {where}"), dtype=np.uint8)
                mask = mask.reshape(height, width).copy()
            samples.append(Sample(id=sid, image=img, mask=mask, is_abnormal=bool(flags & 1)))
        trailing = f.read(1)
        if trailing:
            raise DatasetFormatError(f"{path}: trailing bytes after final record")
    return part, samples, labeled_fraction


def load_dataset(path: str | Path) -> DatasetSplit:
    """Load a split saved with save_dataset.  Round-trip is bit-exact."""
    root = Path(path)
    parts: dict[str, list[Sample]] = {}
    labeled_fraction = 1.0
    for name in PART_NAMES:
        fp = root / _part_filename(name)
        if not fp.exists():
            raise DatasetFormatError(f"missing dataset part file {fp}")
        part, samples, lf = _read_part(fp)
        if part != name:
            raise DatasetFormatError(f"{fp}: header declares part {part!r}, expected {name!r}")
        parts[name] = samples
        if name == "train":
            labeled_fraction = lf
    return DatasetSplit(
        train=parts["train"],
        validation=parts["validation"],
        test=parts["test"],
        labeled_fraction=labeled_fraction,
    )


def splits_equal(a: DatasetSplit, b: DatasetSplit) -> bool:
    """Bit-exact equality of two splits (used by round-trip checks)."""
    if a.labeled_fraction != b.labeled_fraction:
        return False
    for (pa, sa), (pb, sb) in zip(a.parts().items(), b.parts().items()):
        if pa != pb or len(sa) != len(sb):
            return False
        for x, y in zip(sa, sb):
            if x.id != y.id or x.is_abnormal != y.is_abnormal:
                return False
            if not np.array_equal(x.image, y.image):
                return False
            if (x.mask is None) != (y.mask is None):
                return False
            if x.mask is not None and not np.array_equal(x.mask, y.mask):
                return False
    return True
