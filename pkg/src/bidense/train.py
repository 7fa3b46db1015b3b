"""Losses, AdamW with a OneCycle schedule, finite-difference checks and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import DenseDataset, gen_synthetic_dense
from .metrics import depth_scores, seg_scores_from_confusion, confusion_matrix
from .network import DEPTH, SEGMENTATION, BiDenseModel, Context, ModelConfig, f32

CROSS_ENTROPY, SILOG = "cross_entropy", "silog"
VAL_SEED_OFFSET = 1_000_003


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: str = CROSS_ENTROPY
    max_lr: float = 2e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    train_samples: int = 256
    val_samples: int = 64
    image_size: int = 32
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    silog_lambda: float = 0.85
    silog_scale: float = 10.0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.loss not in (CROSS_ENTROPY, SILOG):
            raise ValueError(f"unknown loss {self.loss!r}")
        for name in ("epochs", "batch_size", "train_samples", "val_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if not (self.max_lr > 0 and 0 < self.pct_start < 1):
            raise ValueError("max_lr must be positive and pct_start in (0, 1)")
        if (self.loss == SILOG) != (self.model.task == DEPTH):
            raise ValueError(f"loss {self.loss!r} does not fit task {self.model.task!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- losses

def cross_entropy_loss(logits, labels, ignore_index: int | None = None) -> Tensor:
    return ag.cross_entropy(ag.as_tensor(logits), np.asarray(labels), ignore_index)


def silog_loss(pred, gt, mask=None, lam: float = 0.85, scale: float = 10.0) -> Tensor:
    """``scale * sqrt(mean(d^2) - lam * mean(d)^2)`` with ``d = ln pred - ln gt``."""
    pred = ag.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError("prediction and ground truth differ in shape")
    mask = np.ones(gt.shape, bool) if mask is None else np.asarray(mask, bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no valid pixels")
    if (pred.data[mask] <= 0).any() or (gt[mask] <= 0).any():
        raise ValueError("depths must be positive on the mask")
    weight = mask / count
    log_gt = np.log(np.where(mask, gt, 1.0))
    safe_pred = pred if mask.all() else pred * mask + (1.0 - mask)
    d = ag.log(safe_pred) - log_gt
    m1 = ag.sum_(d * weight)
    m2 = ag.sum_(d * d * weight)
    return ag.sqrt(m2 - m1 * m1 * lam) * scale


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, wd: float = 0.01,
               eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One AdamW update with decoupled weight decay; returns new arrays and state."""
    if not state.m:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    t = state.step + 1
    out, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out.append(p * (1 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + eps))
        ms.append(m)
        vs.append(v)
    return out, AdamState(t, ms, vs)


def onecycle_lr(step: int, total_steps: int, max_lr: float, pct_start: float = 0.3,
                div_factor: float = 25.0, final_div_factor: float = 1e4) -> float:
    """Cosine warm-up from ``max_lr/div_factor`` then cosine decay to ``max_lr/final_div_factor``."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = pct_start * total_steps
    start, end = max_lr / div_factor, max_lr / final_div_factor

    def cos_interp(lo, hi, frac):
        return hi + (lo - hi) * (1 + math.cos(math.pi * frac)) / 2

    if step <= peak:
        return cos_interp(start, max_lr, step / peak if peak > 0 else 1.0)
    return cos_interp(max_lr, end, (step - peak) / (total_steps - peak))


# ------------------------------------------------------- gradient checking

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
               max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative error between autodiff and central differences.

    The error for each parameter tensor is ``max|g_ad - g_fd| / S`` with
    ``S = max(G_tensor, 1e-3 * G_all, 1e-8)``, where ``G`` is the largest
    gradient magnitude in that tensor or over all tensors.  Entries and whole
    tensors with near-zero gradients are thus judged against a meaningful
    scale rather than their own finite-difference round-off.  Sign is evaluated with its
    smooth surrogate so the finite differences are meaningful.  With
    ``max_entries`` only that many entries per tensor are perturbed: the one
    with the largest analytic gradient plus a random selection.
    """
    rng = np.random.default_rng(seed)
    with ag.smooth_sign():
        loss = f()
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("non-finite loss")
        ag.backward(loss, params)
        analytic = [p.grad.copy() for p in params]
        floor = max(1e-8, 1e-3 * max(np.abs(g).max(initial=0.0) for g in analytic))
        worst = 0.0
        for p, g_ad in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                top = int(np.argmax(np.abs(g_ad)))
                rest = rng.choice(np.delete(idx, top), max_entries - 1, replace=False)
                idx = np.sort(np.append(rest, top))
            g_fd = np.empty(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise FloatingPointError("non-finite loss during finite differences")
                g_fd[j] = (up - down) / (2 * eps)
            diff = np.abs(g_ad.reshape(-1)[idx] - g_fd).max(initial=0.0)
            scale = max(floor, np.abs(g_fd).max(initial=0.0), np.abs(g_ad).max(initial=0.0))
            worst = max(worst, diff / scale)
    return float(worst)


# ------------------------------------------------------------------ training

def make_datasets(config: TrainConfig) -> tuple[DenseDataset, DenseDataset]:
    task, size, ch = config.model.task, config.image_size, config.model.in_channels
    train = gen_synthetic_dense(config.seed, task, config.train_samples, size, ch)
    val = gen_synthetic_dense(config.seed + VAL_SEED_OFFSET, task, config.val_samples, size, ch)
    return train, val


def compute_loss(model: BiDenseModel, config: TrainConfig, out: Tensor, targets) -> Tensor:
    if config.loss == CROSS_ENTROPY:
        return cross_entropy_loss(out, targets)
    return silog_loss(out, targets, lam=config.silog_lambda, scale=config.silog_scale)


def evaluate(model: BiDenseModel, data: DenseDataset, batch_size: int = 32) -> dict:
    """Inference on the packed path; returns task metrics."""
    ctx = Context(training=False, packed=True)
    seg = model.config.task == SEGMENTATION
    k = model.config.out_channels
    cm = np.zeros((k, k), dtype=np.int64)
    preds = []
    with ag.no_grad():
        for lo in range(0, len(data), batch_size):
            out = model(data.images[lo:lo + batch_size], ctx).data
            if seg:
                cm += confusion_matrix(out.argmax(axis=1), data.labels[lo:lo + batch_size], k)
            else:
                preds.append(out)
    if seg:
        return seg_scores_from_confusion(cm).as_dict()
    return depth_scores(np.concatenate(preds), data.depth).as_dict()


def train_loop(config: TrainConfig, log: Callable[[dict], None] | None = None,
               data: tuple[DenseDataset, DenseDataset] | None = None
               ) -> tuple[BiDenseModel, list[dict]]:
    """Train a fresh model; each epoch appends ``{epoch, loss, lr, <metrics>}`` to the history."""
    model = BiDenseModel(config.model, seed=config.seed)
    train, val = data or make_datasets(config)
    params = model.parameters()
    rng = np.random.default_rng([config.seed, 1])
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total = config.epochs * steps_per_epoch
    state = AdamState()
    ctx = Context(training=True)
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(train), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            lr = onecycle_lr(step, total, config.max_lr, config.pct_start,
                             config.div_factor, config.final_div_factor)
            out = model(train.images[idx], ctx)
            loss = compute_loss(model, config, out, train.targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch} step {step} (lr={lr:.3g})")
            try:
                ag.backward(loss, params)
            except FloatingPointError as err:
                raise DivergenceError(f"epoch {epoch} step {step}: {err}") from err
            new, state = adamw_step([p.data for p in params], [p.grad for p in params], state,
                                    lr, config.beta1, config.beta2, config.weight_decay)
            with np.errstate(over="ignore"):
                # parameters live on the float32 grid so saved models reload exactly
                new = [f32(v) for v in new]
            if not all(np.isfinite(v).all() for v in new):
                raise DivergenceError(f"non-finite parameters after epoch {epoch} step {step} "
                                      f"(lr={lr:.3g})")
            for p, value_new in zip(params, new):
                p.data = value_new
                p.grad = None
            model.repack()
            losses.append(value)
            step += 1
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr}
        record.update(evaluate(model, val, config.batch_size))
        history.append(record)
        if log is not None:
            log(record)
    return model, history


def print_record(record: dict):
    print(json.dumps(record, sort_keys=True), flush=True)


def model_grad_check(model: BiDenseModel, images, targets, eps: float = 1e-6,
                     max_entries: int | None = None, seed: int = 0) -> float:
    """:func:`grad_check` of a mean-square loss over every model parameter (batch-norm in training mode)."""
    ctx = Context(training=True)
    targets = np.asarray(targets, dtype=np.float64)

    def loss():
        d = model(images, ctx) - targets
        return ag.mean(d * d)

    return grad_check(loss, model.parameters(), eps, max_entries, seed)


CHECK_PARAM_NAMES = ("k", "b", "a", "beta", "shift_in", "shift_out", "gamma")


def gradcheck_model(config: ModelConfig, seed: int = 0, input_size: int = 16, batch: int = 2,
                    max_entries: int | None = 3) -> float:
    """Grad-check a freshly built model on random data.

    Binarizer, activation and layer-scale parameters are moved off their
    initial values first so every term of the chain rule is exercised.
    """
    rng = np.random.default_rng([seed, 2])
    model = BiDenseModel(config, seed=seed)
    for name, p in model.named_parameters():
        if name.rsplit(".", 1)[-1] in CHECK_PARAM_NAMES:
            p.data = f32(rng.normal(0.0, 0.3, p.data.shape))
    images = rng.normal(size=(batch, config.in_channels, input_size, input_size))
    targets = rng.normal(size=(batch, config.out_channels, input_size, input_size))
    if config.task == DEPTH:
        targets = rng.uniform(0.1, 1.0, targets.shape)
    return model_grad_check(model, images, targets, max_entries=max_entries, seed=seed)
