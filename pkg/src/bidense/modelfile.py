"""Binary model files.

Layout, all little-endian::

    b"BDNS"  u32 version
    u32 len, config JSON (sorted keys)
    u32 record count
    per record:
        u16 len, name (UTF-8)      u8 kind tag
        u16 array count
        per array: u16 len, array name, u8 ndim, u32 extents..., float32 data
        bidense records only:
            u32 rows, u32 words, u64 packed sign words, float32 per-row scales

Every module owning parameters or buffers gets one record, in module order.
Loading rebuilds the model from the config, copies the arrays in and
re-derives the packed weights, which must match the stored words exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .binarize import binarize_weights
from .network import LAYER_KINDS, BiDenseConvLayer, BiDenseModel, ModelConfig, f32, kind_tag

MAGIC = b"BDNS"
VERSION = 1
_KIND_NAMES = {v: k for k, v in LAYER_KINDS.items()}


class ModelFileError(ValueError):
    """The file is truncated, corrupt or written by an unsupported format version."""


def _named_arrays(module) -> list[tuple[str, np.ndarray]]:
    arrays = [(k, p.data) for k, p in module.params.items()]
    arrays += list(module.buffers.items())
    return arrays


def _records(model: BiDenseModel):
    for mod in model.modules():
        if mod.params or mod.buffers:
            tag = kind_tag(mod)
            if tag is None:
                raise ValueError(f"module {mod.name!r} of kind {mod.kind!r} has no file tag")
            yield mod, tag


def _text(s: str, width: str = "<H") -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(width, len(raw)) + raw


def dumps(model: BiDenseModel) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    out += [struct.pack("<I", len(config)), config]
    records = list(_records(model))
    out.append(struct.pack("<I", len(records)))
    for mod, tag in records:
        out += [_text(mod.name), struct.pack("<B", tag)]
        arrays = _named_arrays(mod)
        out.append(struct.pack("<H", len(arrays)))
        for key, arr in arrays:
            single = arr.astype("<f4")
            if not np.array_equal(single.astype(np.float64), arr):
                raise ValueError(f"{mod.name}.{key} is not representable in float32")
            out += [_text(key), struct.pack("<B", arr.ndim),
                    struct.pack(f"<{arr.ndim}I", *arr.shape), single.tobytes()]
        if isinstance(mod, BiDenseConvLayer) and not mod.full_precision:
            bits, scales = mod.packed
            out += [struct.pack("<II", *bits.words.shape), bits.words.astype("<u8").tobytes(),
                    scales.astype("<f4").tobytes()]
    return b"".join(out)


def save(model: BiDenseModel, path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ModelFileError(f"file truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, width: str = "<H") -> str:
        (n,) = self.unpack(width)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as err:
            raise ModelFileError(f"invalid name at byte {self.pos - n}") from err

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape))
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype).reshape(shape)


def loads(data: bytes) -> BiDenseModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ModelFileError(f"format version {version} is not supported; this reader handles "
                             f"version {VERSION}")
    config_text = r.text("<I")
    try:
        config = ModelConfig(**json.loads(config_text))
    except (ValueError, TypeError) as err:
        raise ModelFileError(f"invalid config record: {err}") from err
    model = BiDenseModel(config)
    expected = list(_records(model))
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise ModelFileError(f"file has {count} layer records, config implies {len(expected)}")
    for mod, tag in expected:
        name = r.text()
        (file_tag,) = r.unpack("<B")
        if file_tag not in _KIND_NAMES:
            raise ModelFileError(f"unknown layer kind tag {file_tag} in {name!r}; the file needs a "
                                 f"newer reader than format version {VERSION}")
        if name != mod.name or file_tag != tag:
            raise ModelFileError(f"record {name!r} ({_KIND_NAMES[file_tag]}) does not match "
                                 f"{mod.name!r} ({_KIND_NAMES[tag]})")
        targets = dict(_named_arrays(mod))
        (n_arrays,) = r.unpack("<H")
        if n_arrays != len(targets):
            raise ModelFileError(f"{name}: expected {len(targets)} arrays, found {n_arrays}")
        for _ in range(n_arrays):
            key = r.text()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            if key not in targets or targets[key].shape != shape:
                raise ModelFileError(f"{name}.{key}: unexpected array of shape {shape}")
            values = r.array("<f4", shape).astype(np.float64)
            if not np.isfinite(values).all():
                raise ModelFileError(f"{name}.{key}: non-finite values")
            if key in mod.params:
                mod.params[key].data = values
            else:
                mod.buffers[key] = values
        if isinstance(mod, BiDenseConvLayer) and not mod.full_precision:
            rows, words = r.unpack("<II")
            stored = r.array("<u8", (rows, words))
            stored_scales = r.array("<f4", (rows,))
            bits, scales = binarize_weights(mod.weight.data)
            if bits.words.shape != stored.shape or not np.array_equal(bits.words, stored):
                raise ModelFileError(f"{name}: packed weights disagree with latent weights")
            if not np.array_equal(f32(scales), stored_scales.astype(np.float64)):
                raise ModelFileError(f"{name}: weight scales disagree with latent weights")
            mod.packed = (bits, scales)
    if r.pos != len(data):
        raise ModelFileError(f"{len(data) - r.pos} trailing bytes after the last record")
    return model


def load(path) -> BiDenseModel:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise ModelFileError(f"cannot read {path}: {err}") from err
    return loads(data)
