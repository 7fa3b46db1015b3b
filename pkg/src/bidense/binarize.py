"""Activation and weight binarizers, plus entropy diagnostics for packed signs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import ACTIVATION, WEIGHT, BitTensor, as_real, pack_rows

# threshold modes: none | learned (beta) | dab (k*mean + b) | const (b) | mean (k*mean)
# scale modes:     one  | learned (alpha) | dab (exp(a*(MAD-1))) | mad
VARIANTS: dict[str, tuple[str, str]] = {
    "plain_sign": ("none", "one"),
    "learned_threshold": ("learned", "one"),
    "elastic": ("learned", "learned"),
    "dab": ("dab", "dab"),
    "dab_no_threshold": ("none", "dab"),
    "dab_threshold_const": ("const", "dab"),
    "dab_threshold_mean": ("mean", "dab"),
    "dab_no_scale": ("dab", "one"),
    "dab_raw_mad_scale": ("dab", "mad"),
    "dab_learned_scale": ("dab", "learned"),
}

# Smallest activation scale; only reachable by the raw-MAD variant on constant input.
MIN_SCALE = 1e-12


@dataclass(frozen=True)
class DabParams:
    k: float = 0.0
    b: float = 0.0
    a: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.k, self.b, self.a)):
            raise ValueError(f"non-finite DAB parameters {self}")


@dataclass(frozen=True)
class BinarizerKind:
    """One binarizer variant and the values of its (learnable) parameters.

    ``beta`` is a scalar or a per-channel array for the learned-threshold
    variants; ``alpha`` is the learned scale of the elastic variants.
    """

    name: str = "plain_sign"
    dab: DabParams = field(default_factory=DabParams)
    beta: float | np.ndarray = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ValueError(f"unknown binarizer {self.name!r}; choose from {sorted(VARIANTS)}")
        if not np.all(np.isfinite(self.beta)) or not np.isfinite(self.alpha):
            raise ValueError("binarizer parameters must be finite")
        if self.alpha <= 0:
            raise ValueError("learned scale must be positive")

    @property
    def threshold_mode(self) -> str:
        return VARIANTS[self.name][0]

    @property
    def scale_mode(self) -> str:
        return VARIANTS[self.name][1]

    def with_params(self, **kw) -> "BinarizerKind":
        return replace(self, **kw)


def PlainSign() -> BinarizerKind:
    return BinarizerKind("plain_sign")


def LearnedThreshold(beta=0.0) -> BinarizerKind:
    return BinarizerKind("learned_threshold", beta=beta)


def Elastic(alpha=1.0, beta=0.0) -> BinarizerKind:
    return BinarizerKind("elastic", alpha=alpha, beta=beta)


def Dab(k=0.0, b=0.0, a=0.0) -> BinarizerKind:
    return BinarizerKind("dab", DabParams(k, b, a))


@dataclass
class BinarizeCache:
    """Per-sample statistics retained from one activation binarization."""

    mean: np.ndarray
    mad: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    shifted: np.ndarray


def _nonempty(x: np.ndarray, what: str):
    if x.size == 0:
        raise ValueError(f"{what} of an empty tensor")


def threshold_dab(x, k: float, b: float) -> float:
    """Adaptive threshold ``k * mean(x) + b`` over every element of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    _nonempty(x, "threshold")
    return k * float(np.mean(x)) + b


def mean_abs(x) -> float:
    return float(np.mean(np.abs(x)))


def scale_dab(x_s, a: float) -> float:
    """Adaptive scale ``exp(a * (MAD(x_s) - 1))`` with ``MAD = mean|x_s|``."""
    x_s = np.asarray(x_s, dtype=np.float64)
    _nonempty(x_s, "scale")
    return float(np.exp(a * (mean_abs(x_s) - 1.0)))


def optimal_alpha(x) -> float:
    """l2-optimal scale for ``Sign(x)``: the mean absolute value of ``x``.

    All-zero input gives 0, which is a degenerate value and not a usable scale.
    """
    x = np.asarray(x, dtype=np.float64)
    _nonempty(x, "optimal scale")
    return mean_abs(x)


def _beta_per_sample(x: np.ndarray, kind: BinarizerKind, per_channel: bool):
    """Threshold broadcastable against ``x`` and the sample means used for it."""
    axes = (2, 3) if per_channel else (1, 2, 3)
    mean = x.mean(axis=axes, keepdims=True)
    mode = kind.threshold_mode
    p = kind.dab
    if mode == "none":
        beta = np.zeros_like(mean)
    elif mode == "learned":
        beta = np.broadcast_to(np.asarray(kind.beta, dtype=np.float64), (x.shape[1],))
        beta = np.broadcast_to(beta.reshape(1, -1, 1, 1), (x.shape[0], x.shape[1], 1, 1))
    elif mode == "dab":
        beta = p.k * mean + p.b
    elif mode == "const":
        beta = np.full_like(mean, p.b)
    else:
        beta = p.k * mean
    return beta, mean


def binarize_activations(x, kind: BinarizerKind,
                         per_channel: bool = False) -> tuple[BitTensor, BinarizeCache]:
    """Shift, binarize and scale a batch of activations, one sample at a time.

    Statistics are taken per sample over the whole ``C*H*W`` activation, or
    per ``(sample, channel)`` for the threshold when ``per_channel`` is set.
    The scale is always one value per sample since it must factor out of the
    channel sum inside a binary convolution.
    """
    x = as_real(x)
    _nonempty(x, "binarization")
    beta, mean = _beta_per_sample(x, kind, per_channel)
    x_s = x - beta
    mad = np.abs(x_s).mean(axis=(1, 2, 3))
    mode = kind.scale_mode
    if mode == "one":
        alpha = np.ones(x.shape[0])
    elif mode == "learned":
        alpha = np.full(x.shape[0], kind.alpha)
    elif mode == "dab":
        alpha = np.exp(kind.dab.a * (mad - 1.0))
    else:
        alpha = np.maximum(mad, MIN_SCALE)
    n, c = x.shape[:2]
    bits = pack_rows((x_s >= 0).reshape(n * c, -1))
    packed = BitTensor(x.shape, bits, alpha, ACTIVATION)
    cache = BinarizeCache(mean=mean.reshape(n, -1), mad=mad, alpha=alpha,
                          beta=np.asarray(beta).reshape(n, -1), shifted=x_s)
    return packed, cache


def weight_scales(w) -> tuple[np.ndarray, np.ndarray]:
    """Per-output-channel centred weights and their mean absolute deviation."""
    w = as_real(w)
    centred = w - w.mean(axis=(1, 2, 3), keepdims=True)
    # a constant filter centres to exact zeros even when its mean rounds
    flat = w.reshape(w.shape[0], -1)
    constant = (flat == flat[:, :1]).all(axis=1)
    centred[constant] = 0.0
    return centred, np.abs(centred).mean(axis=(1, 2, 3))


def binarize_weights(w) -> tuple[BitTensor, np.ndarray]:
    """Mean-centred sign of each output filter with its l2-optimal scale.

    A constant filter centres to zeros, packs as all ``+1`` and gets scale 0.
    """
    centred, scales = weight_scales(w)
    if centred.shape[0] == 0 or centred[0].size == 0:
        raise ValueError("empty weight tensor")
    words = pack_rows((centred >= 0).reshape(centred.shape[0], -1))
    return BitTensor(centred.shape, words, 1.0, WEIGHT), scales


def binary_entropy(p) -> np.ndarray:
    """``-p ln p - (1-p) ln(1-p)`` in nats, with 0 at p in {0, 1}."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log(p) - (1.0 - p) * np.log1p(-p)
    return np.where((p <= 0.0) | (p >= 1.0), 0.0, h)


def channel_entropy(b: BitTensor) -> tuple[np.ndarray, float]:
    """Per-channel sign entropy of an activation tensor and its channel mean."""
    if b.layout != ACTIVATION:
        raise ValueError("channel entropy needs an activation tensor")
    n, c, h, w = b.shape
    if n * h * w < 1:
        raise ValueError("each channel needs at least one element")
    p = b.bits().mean(axis=(0, 2, 3))
    ent = binary_entropy(p)
    return ent, float(ent.mean())
