"""Named-tensor container files.

A container is a text header followed by raw little-endian tensor buffers:

    SMILETC1\n
    meta=<compact JSON, sorted keys>\n
    tensor=<name>;<dtype>;<comma-separated shape>\n   (one line per tensor)
    end\n
    <raw buffers, in header order>

Supported dtypes: float32, float64, int64, uint8.  Network parameters are
loadable independently of optimizer state because each tensor is addressed
by name; readers simply select the prefixes they care about.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import torch

from .errors import ContainerFormatError, UnknownFormatVersionError

CONTAINER_FORMAT_VERSION = "SMILETC1"

_DTYPES = {
    "float32": (np.dtype("<f4"), torch.float32),
    "float64": (np.dtype("<f8"), torch.float64),
    "int64": (np.dtype("<i8"), torch.int64),
    "uint8": (np.dtype("u1"), torch.uint8),
}
_TORCH_NAMES = {t: name for name, (_, t) in _DTYPES.items()}


def write_container(path: str | Path, meta: dict, tensors: dict[str, torch.Tensor]) -> None:
    lines = [CONTAINER_FORMAT_VERSION, "meta=" + json.dumps(meta, sort_keys=True)]
    buffers: list[bytes] = []
    for name, t in tensors.items():
        if ";" in name or "\n" in name:
            raise ContainerFormatError(f"tensor name {name!r} contains reserved characters")
        t = t.detach().cpu().contiguous()
        if t.dtype not in _TORCH_NAMES:
            raise ContainerFormatError(f"tensor {name}: unsupported dtype {t.dtype}")
        dtype_name = _TORCH_NAMES[t.dtype]
        arr = t.numpy()
        if sys.byteorder == "big":
            arr = arr.byteswap()
        shape = ",".join(str(d) for d in t.shape)
        lines.append(f"tensor={name};{dtype_name};{shape}")
        buffers.append(arr.tobytes())
    lines.append("end")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for buf in buffers:
            f.write(buf)


def read_container(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    path = Path(path)
    with open(path, "rb") as f:
        first = f.readline().decode("ascii", errors="replace").rstrip("\n")
        if first != CONTAINER_FORMAT_VERSION:
            raise UnknownFormatVersionError(
                f"{path}: unknown container version {first!r} (expected {CONTAINER_FORMAT_VERSION})")
        meta_line = f.readline().decode("ascii", errors="replace").rstrip("\n")
        if not meta_line.startswith("meta="):
            raise ContainerFormatError(f"{path}: missing meta line")
        try:
            meta = json.loads(meta_line[len("meta="):])
        except json.JSONDecodeError as e:
            raise ContainerFormatError(f"{path}: bad meta JSON: {e}") from e

        entries: list[tuple[str, str, tuple[int, ...]]] = []
        while True:
            line = f.readline().decode("ascii", errors="replace")
            if line == "":
                raise ContainerFormatError(f"{path}: header not terminated with 'end'")
            line = line.rstrip("\n")
            if line == "end":
                break
            if not line.startswith("tensor="):
                raise ContainerFormatError(f"{path}: malformed header line {line!r}")
            body = line[len("tensor="):]
            try:
                name, dtype_name, shape_s = body.split(";")
            except ValueError as e:
                raise ContainerFormatError(f"{path}: malformed tensor line {line!r}") from e
            if dtype_name not in _DTYPES:
                raise ContainerFormatError(f"{path}: tensor {name}: unknown dtype {dtype_name!r}")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            entries.append((name, dtype_name, shape))

        tensors: dict[str, torch.Tensor] = {}
        for name, dtype_name, shape in entries:
            np_dtype, torch_dtype = _DTYPES[dtype_name]
            n = int(np.prod(shape)) if shape else 1
            raw = f.read(n * np_dtype.itemsize)
            if len(raw) != n * np_dtype.itemsize:
                raise ContainerFormatError(
                    f"{path}: truncated while reading tensor {name!r} "
                    f"(wanted {n * np_dtype.itemsize} bytes, got {len(raw)})")
            arr = np.frombuffer(raw, dtype=np_dtype).reshape(shape).copy()
            if sys.byteorder == "big":
                arr = arr.byteswap()
            tensors[name] = torch.from_numpy(arr).to(torch_dtype)
        if f.read(1):
            raise ContainerFormatError(f"{path}: trailing bytes after final tensor")
    return meta, tensors
