"""Dense real tensors, bit-packed sign tensors and the two convolution kernels.

Real tensors are plain ``float64`` numpy arrays in NCHW order.  Binary tensors
pack one sign per bit into little-endian ``uint64`` words: bit ``1`` encodes
``+1`` and bit ``0`` encodes ``-1``.  Each packing row is padded to a whole
number of words and the unused tail bits are always zero.

Packing rows:

* activations ``(N, C, H, W)``: one row per ``(n, c)`` plane, ``H*W`` bits long;
* weights ``(C_out, C_in/groups, kh, kw)``: one row per output filter;
* vectors ``(n,)``: a single row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

WORD_BITS = 64

ACTIVATION = "activation"
WEIGHT = "weight"
VECTOR = "vector"

Scale = Union[float, np.ndarray]


def as_real(x, ndim: int | None = 4) -> np.ndarray:
    """Validate ``x`` as a finite float64 tensor (NCHW unless ``ndim`` says otherwise)."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a rank-{ndim} tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def words_per_row(n_bits: int) -> int:
    return -(-n_bits // WORD_BITS)


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean ``(..., n)`` array into ``(..., ceil(n/64))`` uint64 words.

    Element ``i`` of a row lands in word ``i // 64`` at bit ``i % 64``.
    """
    bits = np.asarray(bits, dtype=bool)
    n = bits.shape[-1]
    nw = words_per_row(n)
    pad = nw * WORD_BITS - n
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), dtype=bool)], axis=-1)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").reshape(bits.shape[:-1] + (nw,))


def unpack_rows(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Inverse of :func:`pack_rows`; returns a boolean ``(..., n_bits)`` array."""
    words = np.ascontiguousarray(words, dtype="<u8")
    as_bytes = words.view(np.uint8).reshape(words.shape[:-1] + (words.shape[-1] * 8,))
    return np.unpackbits(as_bytes, axis=-1, count=n_bits, bitorder="little").astype(bool)


def _row_geometry(shape: tuple[int, ...], layout: str) -> tuple[int, int]:
    if layout == ACTIVATION:
        if len(shape) != 4:
            raise ValueError(f"activation BitTensor needs NCHW shape, got {shape}")
        return shape[0] * shape[1], shape[2] * shape[3]
    if layout == WEIGHT:
        if len(shape) != 4:
            raise ValueError(f"weight BitTensor needs (C_out, C_in, kh, kw), got {shape}")
        return shape[0], shape[1] * shape[2] * shape[3]
    if layout == VECTOR:
        if len(shape) != 1:
            raise ValueError(f"vector BitTensor needs rank 1, got {shape}")
        return 1, shape[0]
    raise ValueError(f"unknown layout {layout!r}")


@dataclass(frozen=True, eq=False)
class BitTensor:
    """Packed ``±1`` tensor with a positive scale.

    ``scale`` is a scalar, or for activations optionally one value per sample
    (shape ``(N,)``) so a batch can carry per-sample binarizer scales.
    """

    shape: tuple[int, ...]
    words: np.ndarray
    scale: Scale = 1.0
    layout: str = ACTIVATION

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if any(s < 0 for s in shape):
            raise ValueError(f"negative extent in {shape}")
        object.__setattr__(self, "shape", shape)
        rows, n = _row_geometry(shape, self.layout)
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        expected = (rows, words_per_row(n))
        if words.shape != expected:
            raise ValueError(f"word array has shape {words.shape}, expected {expected}")
        tail = expected[1] * WORD_BITS - n
        if tail and rows and np.any(words[:, -1] >> np.uint64(WORD_BITS - tail)):
            raise ValueError("tail bits of the final word must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

        scale = self.scale
        if np.ndim(scale) == 0:
            scale = float(scale)
            if not (np.isfinite(scale) and scale > 0):
                raise ValueError(f"scale must be positive and finite, got {scale}")
        else:
            scale = np.array(scale, dtype=np.float64)
            if self.layout != ACTIVATION or scale.shape != (shape[0],):
                raise ValueError("per-sample scales need an activation tensor and shape (N,)")
            if not np.all(np.isfinite(scale) & (scale > 0)):
                raise ValueError("scales must be positive and finite")
            scale.setflags(write=False)
        object.__setattr__(self, "scale", scale)

    @property
    def row_bits(self) -> int:
        return _row_geometry(self.shape, self.layout)[1]

    def bits(self) -> np.ndarray:
        """Boolean view of the signs in the tensor's logical shape."""
        return unpack_rows(self.words, self.row_bits).reshape(self.shape)

    def with_scale(self, scale: Scale) -> "BitTensor":
        return BitTensor(self.shape, self.words, scale, self.layout)


def pack_signs(x, layout: str = ACTIVATION) -> BitTensor:
    """Binarize ``x`` with Sign(0) = +1 and pack the result (scale 1)."""
    arr = as_real(x, ndim=None)
    bits = arr >= 0
    rows, n = _row_geometry(arr.shape, layout)
    return BitTensor(arr.shape, pack_rows(bits.reshape(rows, n)), 1.0, layout)


def unpack_signs(b: BitTensor) -> np.ndarray:
    signs = np.where(b.bits(), 1.0, -1.0)
    if np.ndim(b.scale) == 0:
        return signs * b.scale
    return signs * np.asarray(b.scale).reshape((-1,) + (1,) * (len(b.shape) - 1))


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words)


def xnor_dot(a: np.ndarray, b: np.ndarray, n: int) -> int:
    """Inner product of two packed ``±1`` rows holding ``n`` valid bits each.

    Computed as ``n - 2*popcount(a XOR b)``.
    """
    a = np.asarray(a, dtype=np.uint64).ravel()
    b = np.asarray(b, dtype=np.uint64).ravel()
    nw = words_per_row(n)
    if a.size != nw or b.size != nw:
        raise ValueError(f"rows of {a.size} and {b.size} words do not hold {n} bits")
    return int(n - 2 * int(popcount(a ^ b).sum()))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_geometry(x_shape, w_shape, stride, padding, groups):
    n, c, h, w = x_shape
    c_out, c_in_g, kh, kw = w_shape
    if kh <= 0 or kw <= 0 or c_in_g <= 0:
        raise ValueError(f"zero-sized kernel {w_shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"bad geometry stride={stride} padding={padding} groups={groups}")
    if c % groups or c_out % groups or c // groups != c_in_g:
        raise ValueError(
            f"input channels {c} / weights {w_shape} incompatible with groups={groups}"
        )
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")
    return ho, wo


def binary_conv2d(
    x: BitTensor,
    w: BitTensor,
    w_scales=None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    chunk: int = 8,
) -> np.ndarray:
    """XNOR-popcount convolution of packed activations with packed weights.

    Padding positions read as ``-1`` (a zero bit).  Every output is the exact
    integer ``sum(a*w)`` over the receptive field, then scaled by the
    activation scale and the per-output-channel weight scale, in that order.
    """
    if x.layout != ACTIVATION or w.layout != WEIGHT:
        raise ValueError("binary_conv2d expects an activation and a weight BitTensor")
    ho, wo = _check_geometry(x.shape, w.shape, stride, padding, groups)
    n, c, h, wd = x.shape
    c_out, c_in_g, kh, kw = w.shape
    out_g = c_out // groups
    row = c_in_g * kh * kw

    w_words = w.words.reshape(groups, out_g, 1, -1)
    bits = x.bits()
    if padding:
        bits = np.pad(bits, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    acc = np.empty((n, c_out, ho * wo), dtype=np.int64)
    for start in range(0, n, chunk):
        part = bits[start:start + chunk]
        m = part.shape[0]
        win = np.lib.stride_tricks.sliding_window_view(part, (kh, kw), axis=(2, 3))
        win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
        # (m, C, ho, wo, kh, kw) -> rows ordered (c, ky, kx) like the weight filters
        win = win.reshape(m, groups, c_in_g, ho, wo, kh, kw)
        win = win.transpose(0, 1, 3, 4, 2, 5, 6).reshape(m, groups, 1, ho * wo, row)
        patches = pack_rows(win)
        mismatches = popcount(patches ^ w_words).sum(axis=-1, dtype=np.int64)
        acc[start:start + m] = (row - 2 * mismatches).reshape(m, c_out, ho * wo)

    out = acc.reshape(n, c_out, ho, wo).astype(np.float64)
    if np.ndim(x.scale) == 0:
        out = out * x.scale
    else:
        out = out * np.asarray(x.scale)[:, None, None, None]
    if w_scales is not None:
        w_scales = np.asarray(w_scales, dtype=np.float64)
        if w_scales.shape != (c_out,):
            raise ValueError(f"need {c_out} weight scales, got shape {w_scales.shape}")
        out = out * w_scales[None, :, None, None]
    elif w.scale != 1.0:
        out = out * w.scale
    return out


def real_conv2d(x, w, stride: int = 1, padding: int = 0, groups: int = 1,
                pad_value: float = 0.0) -> np.ndarray:
    """Cross-correlation with constant padding.

    Each output is one contraction over ``(c, ky, kx)`` per sample and group,
    so results do not depend on batch size or chunking.
    """
    x = as_real(x)
    w = as_real(w)
    ho, wo = _check_geometry(x.shape, w.shape, stride, padding, groups)
    n, c, _, _ = x.shape
    c_out, c_in_g, kh, kw = w.shape
    out_g = c_out // groups
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    if c_in_g == 1 and out_g == 1:
        # depthwise: one product per offset
        out = np.zeros((n, c_out, ho, wo))
        for ky in range(kh):
            for kx in range(kw):
                patch = x[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
                out += patch * w[None, :, 0, ky, kx, None, None]
        return out
    cols = im2col(x, kh, kw, stride, groups)
    out = np.matmul(w.reshape(groups, out_g, c_in_g * kh * kw), cols)
    return out.reshape(n, c_out, ho, wo)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, groups: int = 1) -> np.ndarray:
    """Unfold an already padded ``(N, C, H, W)`` input into
    ``(N, groups, C/groups * kh * kw, Ho * Wo)`` with rows ordered ``(c, ky, kx)``."""
    n, c, h, w = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    cols = win.reshape(n, groups, c // groups, ho, wo, kh, kw).transpose(0, 1, 2, 5, 6, 3, 4)
    return cols.reshape(n, groups, (c // groups) * kh * kw, ho * wo)
