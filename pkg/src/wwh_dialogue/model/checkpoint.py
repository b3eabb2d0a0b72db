"""Self-describing binary checkpoints.

Layout: 8-byte magic, uint32 little-endian header length, a canonical JSON
header (model config, label-slot mode, step counter, full vocabulary, array
manifest, free-form meta), then each array's raw little-endian bytes in
manifest order. Writing the same state twice produces identical files, which
the replay and determinism tests rely on; archive formats with embedded
timestamps cannot give that guarantee.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..vocab import Vocabulary
from .config import ModelConfig

MAGIC = b"WWHCKPT1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    config: ModelConfig
    vocab: Vocabulary
    step: int
    rtl_mode: bool
    meta: dict

    def params64(self) -> dict:
        return {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in self.params.items()}


def save_checkpoint(
    path,
    params: dict,
    config: ModelConfig,
    vocab: Vocabulary,
    step: int,
    rtl_mode: bool = True,
    meta: dict | None = None,
) -> None:
    names = sorted(params)
    arrays = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name])
        le = arr.dtype.newbyteorder("<")
        arr = arr.astype(le, copy=False)
        arrays.append({"name": name, "dtype": str(le.str), "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "config": config.as_dict(),
        "rtl_mode": bool(rtl_mode),
        "step": int(step),
        "vocab_tokens": list(vocab.tokens),
        "vocab_sha256": vocab.sha256(),
        "arrays": arrays,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_vocab: Vocabulary | None = None) -> Checkpoint:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        params = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(f"{path}: truncated array {spec['name']}")
            params[spec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after arrays")

    vocab = Vocabulary(tokens=tuple(header["vocab_tokens"]))
    if vocab.sha256() != header["vocab_sha256"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch inside checkpoint")
    if expected_vocab is not None and expected_vocab.sha256() != vocab.sha256():
        raise CheckpointError(
            f"{path}: checkpoint vocabulary does not match the supplied one"
        )
    return Checkpoint(
        params=params,
        config=ModelConfig.from_dict(header["config"]),
        vocab=vocab,
        step=int(header["step"]),
        rtl_mode=bool(header["rtl_mode"]),
        meta=header.get("meta", {}),
    )
