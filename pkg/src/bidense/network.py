"""BiDense layers, the binarized ConvNeXt/UPerNet-style model and its cost model.

A :class:`BiDenseConvLayer` computes::

    out = act(BN(BiConv(binarize(x)))) + bypass(x)

where the bypass carries the full-precision input through spatial alignment
and channel fusion.  The stem and the final 1x1 prediction conv stay
full-precision.

Cost accounting (per forward pass, multiply-accumulates and elementwise ops):

* convolution: one MAC per kernel tap per output element, binary or full-precision;
* batch norm, RPReLU, output scaling, residual adds: one op per output element;
* binarizer statistics: one op per input element each for the mean, the shift
  and the absolute-deviation sum, when the variant uses them;
* bypass: one op per input element for spatial pooling and for each channel
  group mean, nothing for repetition;
* parameters: binary conv weights are 1-bit, everything else full-precision.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import autograd as ag
from . import cfb
from .autograd import Parameter, Tensor
from .binarize import (MIN_SCALE, VARIANTS, BinarizerKind, DabParams, binarize_weights,
                       binary_entropy)
from .tensor import BitTensor, binary_conv2d, conv_output_size, pack_signs

SEGMENTATION, DEPTH = "segmentation", "depth"
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def f32(x) -> np.ndarray:
    """Round to the nearest float32 value, kept in float64."""
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


@dataclass
class ModelConfig:
    depths: list = field(default_factory=lambda: [1, 1])
    widths: list = field(default_factory=lambda: [16, 32])
    in_channels: int = 3
    out_channels: int = 4
    binarizer: str = "dab"
    bypass: bool = True
    decoder_width: int = 16
    task: str = SEGMENTATION
    full_precision: bool = False
    stem_stride: int = 2
    per_channel_stats: bool = False
    activation: str = "rprelu"
    layer_scale_init: float = 1e-6

    def __post_init__(self):
        self.depths = [int(d) for d in self.depths]
        self.widths = [int(w) for w in self.widths]
        if not self.depths or len(self.depths) != len(self.widths):
            raise ValueError("depths and widths must be non-empty and of equal length")
        if any(d < 1 for d in self.depths) or any(w < 1 for w in self.widths):
            raise ValueError("depths and widths must be positive")
        for name in ("in_channels", "out_channels", "decoder_width", "stem_stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.binarizer not in VARIANTS:
            raise ValueError(f"unknown binarizer {self.binarizer!r}")
        if self.task not in (SEGMENTATION, DEPTH):
            raise ValueError(f"unknown task {self.task!r}")
        if self.activation not in ("rprelu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CostReport:
    params_fp: int = 0
    params_bin: int = 0
    ops_fp: int = 0
    ops_bin: int = 0

    @property
    def effective_params(self) -> float:
        return self.params_fp + self.params_bin / 32

    @property
    def effective_ops(self) -> float:
        return self.ops_fp + self.ops_bin / 64

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(self.params_fp + other.params_fp, self.params_bin + other.params_bin,
                          self.ops_fp + other.ops_fp, self.ops_bin + other.ops_bin)

    def describe(self) -> str:
        return "\n".join([
            f"params_fp        {self.params_fp:>16,d}",
            f"params_bin       {self.params_bin:>16,d}",
            f"ops_fp           {self.ops_fp:>16,d}",
            f"ops_bin          {self.ops_bin:>16,d}",
            f"effective_params {self.effective_params:>16,.0f}",
            f"effective_ops    {self.effective_ops:>16,.0f}",
        ])


@dataclass
class Context:
    """Forward-pass switches shared by every module."""

    training: bool = False
    packed: bool = False
    record: Callable[[str, BitTensor], None] | None = None


# -------------------------------------------------------------------- modules

class Module:
    kind = "module"

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}
        self.name = ""

    def param(self, name: str, value) -> Tensor:
        t = Parameter(f32(value), name)
        self.params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def modules(self, prefix: str = "") -> Iterator["Module"]:
        self.name = prefix
        yield self
        for key, mod in self.children.items():
            yield from mod.modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for mod in self.modules():
            for key, p in mod.params.items():
                yield (f"{mod.name}.{key}" if mod.name else key), p

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class BatchNorm(Module):
    kind = "batchnorm"

    def __init__(self, channels: int):
        super().__init__()
        self.gain = self.param("gain", np.ones(channels))
        self.bias = self.param("bias", np.zeros(channels))
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        if ctx.training:
            out, mu, var = ag.batch_norm_train(x, self.gain, self.bias, BN_EPS)
            m = x.data.size // x.shape[1]
            unbiased = var * m / max(m - 1, 1)
            b = self.buffers
            b["running_mean"] = f32((1 - BN_MOMENTUM) * b["running_mean"] + BN_MOMENTUM * mu)
            b["running_var"] = f32((1 - BN_MOMENTUM) * b["running_var"] + BN_MOMENTUM * unbiased)
            return out
        return ag.batch_norm_eval(x, self.gain, self.bias, self.buffers["running_mean"],
                                  self.buffers["running_var"], BN_EPS)

    def cost(self, shape) -> CostReport:
        return CostReport(params_fp=2 * shape[1], ops_fp=int(np.prod(shape)))


class RPReLU(Module):
    """``prelu(x - shift_in, slope) + shift_out`` with per-channel parameters."""

    kind = "rprelu"

    def __init__(self, channels: int):
        super().__init__()
        self.shift_in = self.param("shift_in", np.zeros(channels))
        self.slope = self.param("slope", np.full(channels, 0.25))
        self.shift_out = self.param("shift_out", np.zeros(channels))

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        c4 = (1, -1, 1, 1)
        y = ag.prelu(x - ag.reshape(self.shift_in, c4), ag.reshape(self.slope, c4))
        return y + ag.reshape(self.shift_out, c4)

    def cost(self, shape) -> CostReport:
        return CostReport(params_fp=3 * shape[1], ops_fp=int(np.prod(shape)))


class Binarizer(Module):
    """Learnable activation binarizer; returns the shifted input and per-sample scale."""

    kind = "binarizer"

    def __init__(self, variant: str, channels: int, per_channel: bool = False,
                 init: BinarizerKind | None = None):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown binarizer {variant!r}")
        self.variant = variant
        self.per_channel = per_channel
        init = init or BinarizerKind(variant)
        thr, scale = VARIANTS[variant]
        if thr in ("dab", "mean"):
            self.param("k", [init.dab.k])
        if thr in ("dab", "const"):
            self.param("b", [init.dab.b])
        if thr == "learned":
            # per-channel thresholds for the learned-threshold baseline, a scalar for elastic
            n = channels if variant == "learned_threshold" else 1
            self.param("beta", np.broadcast_to(np.asarray(init.beta, float).ravel(), (n,)))
        if scale == "dab":
            self.param("a", [init.dab.a])
        if scale == "learned":
            self.param("alpha", [init.alpha])

    def as_kind(self) -> BinarizerKind:
        """Current parameter values as a plain :class:`BinarizerKind`."""
        p = {k: v.data for k, v in self.params.items()}
        dab = DabParams(float(p.get("k", [0.0])[0]), float(p.get("b", [0.0])[0]),
                        float(p.get("a", [0.0])[0]))
        beta = p["beta"] if "beta" in p else 0.0
        if np.size(beta) == 1:
            beta = float(np.ravel(beta)[0])
        alpha = float(abs(p["alpha"][0])) if "alpha" in p else 1.0
        return BinarizerKind(self.variant, dab, beta, alpha)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor | None]:
        thr, scale = VARIANTS[self.variant]
        p = self.params
        axes = (2, 3) if self.per_channel else (1, 2, 3)
        if thr == "none":
            xs = x
        elif thr == "learned":
            xs = x - ag.reshape(p["beta"], (1, -1, 1, 1))
        elif thr == "const":
            xs = x - p["b"]
        else:
            m = ag.mean(x, axis=axes, keepdims=True)
            beta = m * p["k"] + p["b"] if thr == "dab" else m * p["k"]
            xs = x - beta
        if scale == "one":
            return xs, None
        if scale == "learned":
            # the learned scale enters through its magnitude so it stays positive
            ones = ag.Tensor(np.ones((x.shape[0], 1, 1, 1)))
            return xs, ones * ag.reshape(ag.abs_(p["alpha"]), (1, 1, 1, 1))
        mad = ag.mean(ag.abs_(xs), axis=(1, 2, 3), keepdims=True)
        if scale == "dab":
            return xs, ag.exp((mad - 1.0) * p["a"])
        if np.any(mad.data < MIN_SCALE):
            return xs, ag.Tensor(np.maximum(mad.data, MIN_SCALE))
        return xs, mad

    def cost(self, shape) -> CostReport:
        thr, scale = VARIANTS[self.variant]
        per_elem = (thr in ("dab", "mean")) + (thr != "none") + (scale in ("dab", "mad"))
        return CostReport(params_fp=sum(p.data.size for p in self.params.values()),
                          ops_fp=per_elem * int(np.prod(shape)))


class BiDenseConvLayer(Module):
    """Binarizer, binary conv, batch norm, activation, plus the full-precision bypass.

    With ``full_precision`` set the binarizer is skipped and the conv uses the
    real weights; this builds the FP32 reference network.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, groups: int = 1,
                 binarizer: str = "dab", bypass: bool = True, activation: str = "rprelu",
                 full_precision: bool = False, per_channel_stats: bool = False,
                 rng: np.random.Generator | None = None, init: BinarizerKind | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if c_in % groups or c_out % groups:
            raise ValueError(f"channels {c_in}->{c_out} not divisible by groups={groups}")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.groups = stride, groups
        self.padding = kernel // 2 if kernel % 2 else 0
        self.bypass = bypass
        self.full_precision = full_precision
        fan_in = (c_in // groups) * kernel * kernel
        self.weight = self.param(
            "weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in // groups, kernel, kernel)))
        self.binarizer = None
        if not full_precision:
            self.binarizer = self.child(
                "binarizer", Binarizer(binarizer, c_in, per_channel_stats, init))
        self.bn = self.child("bn", BatchNorm(c_out))
        self.act = self.child("act", RPReLU(c_out)) if activation == "rprelu" else None
        self.plan = cfb.plan_fusion(c_in, c_out)
        self.packed: tuple[BitTensor, np.ndarray] | None = None
        self.repack()

    @property
    def kind(self) -> str:  # type: ignore[override]
        return "fp_conv_block" if self.full_precision else "bidense"

    def repack(self):
        """Refresh the packed sign bits and scales from the latent weights."""
        if not self.full_precision:
            self.packed = binarize_weights(self.weight.data)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (conv_output_size(h, self.kernel, self.stride, self.padding),
                conv_output_size(w, self.kernel, self.stride, self.padding))

    def _binary_branch(self, x: Tensor, ctx: Context) -> Tensor:
        xs, alpha = self.binarizer(x)
        if ctx.record is not None:
            ctx.record(self.name, pack_signs(xs.data))
        if ctx.packed and not ag.is_smooth():
            bits = pack_signs(xs.data)
            if alpha is not None:
                bits = bits.with_scale(alpha.data.reshape(-1))
            words, scales = self.packed
            return Tensor(binary_conv2d(bits, words, scales, self.stride, self.padding,
                                        self.groups))
        bx = ag.sign_ste(xs)
        w = self.weight
        centred = w - ag.mean(w, axis=(1, 2, 3), keepdims=True)
        bw = ag.sign_ste(centred)
        scale = ag.mean(ag.abs_(centred), axis=(1, 2, 3), keepdims=True)
        y = ag.conv2d(bx, bw, self.stride, self.padding, self.groups, pad_value=-1.0)
        if alpha is not None:
            y = y * alpha
        return y * ag.reshape(scale, (1, -1, 1, 1))

    def bypass_path(self, x: Tensor, h: int, w: int) -> Tensor | None:
        if self.bypass:
            if (h, w) != x.shape[2:]:
                x = ag.align(x, h, w, "shrink")
            return ag.channel_fusion(x, self.plan) if self.plan.direction != cfb.IDENTITY else x
        if (self.c_out, h, w) == x.shape[1:]:
            return x
        return None

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        if x.shape[1] != self.c_in:
            raise ValueError(f"{self.name}: expected {self.c_in} channels, got {x.shape[1]}")
        if self.full_precision:
            y = ag.conv2d(x, self.weight, self.stride, self.padding, self.groups)
        else:
            y = self._binary_branch(x, ctx)
        y = self.bn(y, ctx)
        if self.act is not None:
            y = self.act(y, ctx)
        skip = self.bypass_path(x, *y.shape[2:])
        return y if skip is None else y + skip

    def cost(self, shape) -> tuple[CostReport, tuple]:
        n, c, h, w = shape
        ho, wo = self.output_hw(h, w)
        out = (n, self.c_out, ho, wo)
        out_elems = int(np.prod(out))
        macs = out_elems * (self.c_in // self.groups) * self.kernel ** 2
        if self.full_precision:
            rep = CostReport(params_fp=self.weight.data.size, ops_fp=macs)
        else:
            rep = CostReport(params_bin=self.weight.data.size, ops_bin=macs, ops_fp=out_elems)
            rep = rep + self.binarizer.cost(shape)
        rep = rep + self.bn.cost(out)
        if self.act is not None:
            rep = rep + self.act.cost(out)
        if self.bypass:
            if (ho, wo) != (h, w):
                rep = rep + CostReport(ops_fp=n * c * h * w)
            pooled = sum(hi - lo for lo, hi in self.plan.groups)
            if self.plan.direction != cfb.IDENTITY:
                rep = rep + CostReport(ops_fp=n * pooled * ho * wo)
            rep = rep + CostReport(ops_fp=out_elems)
        elif (c, h, w) == out[1:]:
            rep = rep + CostReport(ops_fp=out_elems)
        return rep, out


class RealConv(Module):
    """Full-precision convolution with bias (stem and prediction head)."""

    kind = "real_conv"

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.padding = kernel // 2 if kernel % 2 else 0
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.weight = self.param("weight", rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel)))
        self.bias = self.param("bias", rng.uniform(-bound, bound, c_out))

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        y = ag.conv2d(x, self.weight, self.stride, self.padding)
        return y + ag.reshape(self.bias, (1, -1, 1, 1))

    def cost(self, shape) -> tuple[CostReport, tuple]:
        n, _, h, w = shape
        out = (n, self.c_out, conv_output_size(h, self.kernel, self.stride, self.padding),
               conv_output_size(w, self.kernel, self.stride, self.padding))
        macs = int(np.prod(out)) * self.c_in * self.kernel ** 2
        return CostReport(params_fp=self.weight.data.size + self.c_out, ops_fp=macs), out


class LayerScale(Module):
    kind = "layer_scale"

    def __init__(self, channels: int, init: float):
        super().__init__()
        self.gamma = self.param("gamma", np.full(channels, init))

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        return x * ag.reshape(self.gamma, (1, -1, 1, 1))


LAYER_KINDS = {"bidense": 1, "fp_conv_block": 2, "real_conv": 3, "batchnorm": 4,
               "layer_scale": 5, "rprelu": 6, "binarizer": 7}


def kind_tag(module: Module) -> int | None:
    return LAYER_KINDS.get(module.kind)


class ConvNeXtBlock(Module):
    """Depthwise 7x7, pointwise x4 expansion, pointwise projection, scaled residual."""

    def __init__(self, dim: int, layer, layer_scale_init: float):
        super().__init__()
        self.dw = self.child("dw", layer(dim, dim, 7, groups=dim))
        self.pw1 = self.child("pw1", layer(dim, 4 * dim, 1))
        self.pw2 = self.child("pw2", layer(4 * dim, dim, 1))
        self.scale = self.child("scale", LayerScale(dim, layer_scale_init))

    def __call__(self, x: Tensor, ctx: Context) -> Tensor:
        y = self.pw2(self.pw1(self.dw(x, ctx), ctx), ctx)
        return x + self.scale(y, ctx)

    def cost(self, shape) -> tuple[CostReport, tuple]:
        total = CostReport()
        s = shape
        for layer in (self.dw, self.pw1, self.pw2):
            rep, s = layer.cost(s)
            total = total + rep
        return total + CostReport(params_fp=shape[1], ops_fp=2 * int(np.prod(s))), s


def _sequential_cost(layers, shape):
    total = CostReport()
    for layer in layers:
        rep, shape = layer.cost(shape)
        total = total + rep
    return total, shape


class BiDenseModel(Module):
    """ConvNeXt-style encoder, pooled-context FPN decoder and a dense prediction head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = cfg = config
        rng = np.random.default_rng(seed)

        def layer(c_in, c_out, kernel, stride=1, groups=1):
            return BiDenseConvLayer(
                c_in, c_out, kernel, stride, groups, binarizer=cfg.binarizer,
                bypass=cfg.bypass and not cfg.full_precision, activation=cfg.activation,
                full_precision=cfg.full_precision, per_channel_stats=cfg.per_channel_stats,
                rng=rng)

        widths, d = cfg.widths, cfg.decoder_width
        self.stem = self.child("stem", RealConv(cfg.in_channels, widths[0], cfg.stem_stride,
                                                cfg.stem_stride, rng))
        self.stem_bn = self.child("stem_bn", BatchNorm(widths[0]))
        self.stages: list[list[Module]] = []
        for i, (depth, width) in enumerate(zip(cfg.depths, widths)):
            stage = []
            if i > 0:
                stage.append(self.child(f"down{i}", layer(widths[i - 1], width, 2, stride=2)))
            for j in range(depth):
                stage.append(self.child(f"stage{i}.{j}",
                                        ConvNeXtBlock(width, layer, cfg.layer_scale_init)))
            self.stages.append(stage)
        last = len(widths) - 1
        self.context = self.child("context", layer(2 * widths[last], d, 3))
        self.laterals = [self.child(f"lateral{i}", layer(widths[i], d, 1)) for i in range(last)]
        self.fpn = [self.child(f"fpn{i}", layer(d, d, 3)) for i in range(last)]
        self.fuse = self.child("fuse", layer(len(widths) * d, d, 3))
        self.head = self.child("head", layer(d, d, 3))
        self.classifier = self.child("classifier", RealConv(d, cfg.out_channels, 1, 1, rng))
        # assign dotted names once so recording and serialization can use them
        for _ in self.modules():
            pass

    # ------------------------------------------------------------ forward pass

    def binary_layers(self) -> list[BiDenseConvLayer]:
        return [m for m in self.modules() if isinstance(m, BiDenseConvLayer)]

    def repack(self):
        for m in self.binary_layers():
            m.repack()

    def forward(self, x, ctx: Context | None = None) -> Tensor:
        ctx = ctx or Context()
        x = ag.as_tensor(x)
        n, c, h, w = x.shape
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {c}")
        y = self.stem_bn(self.stem(x, ctx), ctx)
        feats = []
        for stage in self.stages:
            for mod in stage:
                y = mod(y, ctx)
            feats.append(y)

        top = feats[-1]
        pooled = ag.broadcast_spatial(ag.mean(top, axis=(2, 3), keepdims=True), *top.shape[2:])
        p = self.context(ag.concat([top, pooled]), ctx)
        pyramid = [p]
        for i in reversed(range(len(self.laterals))):
            lat = self.laterals[i](feats[i], ctx)
            p = lat + ag.align(p, *lat.shape[2:], "grow")
            pyramid.insert(0, self.fpn[i](p, ctx))
        base_hw = pyramid[0].shape[2:]
        merged = [q if q.shape[2:] == base_hw else ag.align(q, *base_hw, "grow") for q in pyramid]
        y = self.head(self.fuse(ag.concat(merged), ctx), ctx)
        y = ag.resize_bilinear(self.classifier(y, ctx), h, w)
        if self.config.task == DEPTH:
            y = ag.sigmoid(y) * (1.0 - DEPTH_FLOOR) + DEPTH_FLOOR
        return y

    __call__ = forward

    # -------------------------------------------------------------- accounting

    def cost(self, shape) -> CostReport:
        n, c, h, w = shape
        total, s = _sequential_cost([self.stem], shape)
        total = total + self.stem_bn.cost(s)
        feats = []
        for stage in self.stages:
            rep, s = _sequential_cost(stage, s)
            total = total + rep
            feats.append(s)
        top = feats[-1]
        ctx_in = (top[0], 2 * top[1], top[2], top[3])
        total = total + CostReport(ops_fp=int(np.prod(top)))  # global pooling
        rep, p = self.context.cost(ctx_in)
        total = total + rep
        pyramid = [p]
        for i in reversed(range(len(self.laterals))):
            rep, lat = self.laterals[i].cost(feats[i])
            total = total + rep + CostReport(ops_fp=int(np.prod(lat)))  # top-down add
            rep, q = self.fpn[i].cost(lat)
            total = total + rep
            pyramid.insert(0, q)
        base = pyramid[0]
        fused_in = (n, sum(q[1] for q in pyramid), base[2], base[3])
        rep, s = _sequential_cost([self.fuse, self.head, self.classifier], fused_in)
        total = total + rep
        # bilinear resize: four taps per output element
        total = total + CostReport(ops_fp=4 * n * s[1] * h * w)
        return total


DEPTH_FLOOR = 1e-3


def build_model(config: ModelConfig, seed: int = 0) -> BiDenseModel:
    return BiDenseModel(config, seed)


def count_costs(model: BiDenseModel, input_shape) -> CostReport:
    shape = tuple(int(s) for s in input_shape)
    if len(shape) == 3:
        shape = (1,) + shape
    return model.cost(shape)


def bidense_layer_forward(layer: BiDenseConvLayer, x, ctx: Context | None = None) -> Tensor:
    return layer(ag.as_tensor(x), ctx or Context())


def disable_binary_branch(layer: BiDenseConvLayer):
    """Zero the batch-norm affine and activation shifts so only the bypass remains."""
    layer.bn.gain.data[:] = 0.0
    layer.bn.bias.data[:] = 0.0
    if layer.act is not None:
        layer.act.shift_in.data[:] = 0.0
        layer.act.shift_out.data[:] = 0.0


FULL_SCALE = dict(depths=[3, 3, 9, 3], widths=[96, 192, 384, 768], in_channels=3,
                  out_channels=150, decoder_width=448, stem_stride=4)


def layer_entropies(model: BiDenseModel, images, batch_size: int = 32) -> list[tuple[str, int, float]]:
    """``(layer, channels, mean channel sign entropy)`` for every binarized layer.

    Sign frequencies are pooled over all images before taking entropies.
    """
    ones: dict[str, np.ndarray] = {}
    totals: dict[str, int] = {}

    def record(name: str, bits: BitTensor):
        n, c, h, w = bits.shape
        ones[name] = ones.get(name, 0) + bits.bits().sum(axis=(0, 2, 3))
        totals[name] = totals.get(name, 0) + n * h * w

    ctx = Context(training=False, packed=True, record=record)
    images = np.asarray(images, dtype=np.float64)
    with ag.no_grad():
        for lo in range(0, len(images), batch_size):
            model(images[lo:lo + batch_size], ctx)
    rows = []
    for name in ones:
        ent = binary_entropy(ones[name] / totals[name])
        rows.append((name, ent.size, float(ent.mean())))
    return rows
