"""Self-describing checkpoint archive.

Layout: magic, little-endian uint64 header length, a JSON header carrying
``format_version``, free-form ``meta`` and the array directory (name, dtype,
shape, sorted by name), then the raw C-order array bytes in directory order.
Writing is fully deterministic, so identical state produces identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_MAGIC = b"SFCKPT01"


class CheckpointError(Exception):
    pass


def save_archive(path, arrays, meta=None):
    path = Path(path)
    names = sorted(arrays)
    directory = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        directory.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}, "arrays": directory}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name]).tobytes())
    return path


def load_archive(path):
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint archive")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format_version {header.get('format_version')!r}")
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return arrays, header["meta"]


def save_model_checkpoint(path, model, extra_arrays=None, extra_meta=None):
    """Persist a model (weights + config) plus optional optimizer/extra state."""
    from . import nn
    arrays = {f"gen/{k}": v for k, v in nn.get_params(model).items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    meta = {
        "kind": model.kind,
        "model_config": model.config.to_dict(),
        "init_seed": model.init_seed,
    }
    if model.kind == "fusion":
        meta["zero_shadow_branch"] = bool(model.zero_shadow_branch)
        meta["zero_inpaint_branch"] = bool(model.zero_inpaint_branch)
    if extra_meta:
        meta.update(extra_meta)
    return save_archive(path, arrays, meta)


def load_model_checkpoint(path):
    """Rebuild the model stored in a checkpoint; returns (model, arrays, meta)."""
    from . import nn
    from .networks import EncoderDecoderConfig, FusionNet, FusionNetConfig, NaiveEncoderDecoder

    arrays, meta = load_archive(path)
    kind = meta.get("kind")
    if kind == "fusion":
        model = FusionNet(FusionNetConfig.from_dict(meta["model_config"]),
                          meta.get("init_seed", 0))
        model.zero_shadow_branch = bool(meta.get("zero_shadow_branch", False))
        model.zero_inpaint_branch = bool(meta.get("zero_inpaint_branch", False))
    elif kind == "naive":
        model = NaiveEncoderDecoder(EncoderDecoderConfig.from_dict(meta["model_config"]),
                                    meta.get("init_seed", 0))
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    gen = {k[len("gen/"):]: v for k, v in arrays.items() if k.startswith("gen/")}
    nn.set_params(model, gen)
    return model, arrays, meta
