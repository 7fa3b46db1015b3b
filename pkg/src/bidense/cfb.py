"""Channel fusion plans and the full-precision bypass transforms.

A plan maps ``c_in`` channels to ``c_out`` channels by repeating the whole
input ``n_r`` times and appending one averaged channel per group of a
contiguous partition of the input channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import as_real

DOWN, UP, IDENTITY = "down", "up", "identity"


@dataclass(frozen=True)
class FusionPlan:
    c_in: int
    c_out: int
    n_r: int
    groups: tuple[tuple[int, int], ...]
    direction: str

    @property
    def kernel(self) -> int:
        """Pooling width of the leading groups (0 when there is no pooling branch)."""
        return self.groups[0][1] - self.groups[0][0] if self.groups else 0

    def describe(self) -> str:
        groups = ",".join(f"{lo}..{hi}" for lo, hi in self.groups)
        return f"c_in={self.c_in} c_out={self.c_out} n_r={self.n_r} groups=[{groups}]"

    def matrix(self) -> np.ndarray:
        """The plan as a ``(c_out, c_in)`` linear map."""
        m = np.zeros((self.c_out, self.c_in))
        for r in range(self.n_r):
            m[r * self.c_in:(r + 1) * self.c_in] = np.eye(self.c_in)
        base = self.n_r * self.c_in
        for g, (lo, hi) in enumerate(self.groups):
            m[base + g, lo:hi] = 1.0 / (hi - lo)
        return m


def _partition(c_in: int, targets: int) -> tuple[tuple[int, int], ...]:
    if targets == 0:
        return ()
    k = c_in // targets
    groups = [(g * k, (g + 1) * k) for g in range(targets - 1)]
    # the last group absorbs every remaining channel so the groups cover [0, c_in)
    groups.append(((targets - 1) * k, c_in))
    return tuple(groups)


def plan_fusion(c_in: int, c_out: int) -> FusionPlan:
    if int(c_in) != c_in or int(c_out) != c_out or c_in < 1 or c_out < 1:
        raise ValueError(f"channel counts must be positive integers, got ({c_in}, {c_out})")
    c_in, c_out = int(c_in), int(c_out)
    if c_out == c_in:
        # singleton groups: the pooling rule with K=1 degenerates to a copy
        return FusionPlan(c_in, c_out, 0, _partition(c_in, c_out), IDENTITY)
    if c_out > c_in:
        return FusionPlan(c_in, c_out, c_out // c_in, _partition(c_in, c_out % c_in), UP)
    return FusionPlan(c_in, c_out, 0, _partition(c_in, c_out), DOWN)


def _check(x: np.ndarray, plan: FusionPlan, direction: str | None):
    if direction is not None and plan.direction not in (direction, IDENTITY):
        raise ValueError(f"plan direction is {plan.direction}, expected {direction}")
    if x.shape[1] != plan.c_in:
        raise ValueError(f"input has {x.shape[1]} channels, plan expects {plan.c_in}")


def _pool_groups(x: np.ndarray, groups) -> list[np.ndarray]:
    return [x[:, lo:hi].mean(axis=1, keepdims=True) for lo, hi in groups]


def apply_fusion(x, plan: FusionPlan) -> np.ndarray:
    """Repetition block first, then the pooled group means."""
    x = as_real(x)
    _check(x, plan, None)
    if plan.direction == IDENTITY:
        return x.copy()
    parts = [x] * plan.n_r + _pool_groups(x, plan.groups)
    return np.concatenate(parts, axis=1)


def fusion_down(x, plan: FusionPlan) -> np.ndarray:
    x = as_real(x)
    _check(x, plan, DOWN)
    return apply_fusion(x, plan)


def fusion_up(x, plan: FusionPlan) -> np.ndarray:
    x = as_real(x)
    _check(x, plan, UP)
    return apply_fusion(x, plan)


def fusion_adjoint(g, plan: FusionPlan) -> np.ndarray:
    """Transpose of :func:`apply_fusion`, used for back-propagation."""
    g = np.asarray(g, dtype=np.float64)
    if plan.direction == IDENTITY:
        return g.copy()
    if g.shape[1] != plan.c_out:
        raise ValueError(f"gradient has {g.shape[1]} channels, plan produces {plan.c_out}")
    c = plan.c_in
    out = np.zeros(g.shape[:1] + (c,) + g.shape[2:])
    for r in range(plan.n_r):
        out += g[:, r * c:(r + 1) * c]
    base = plan.n_r * c
    for i, (lo, hi) in enumerate(plan.groups):
        out[:, lo:hi] += g[:, base + i:base + i + 1] / (hi - lo)
    return out


def _ratio(src: int, dst: int) -> int:
    big, small = max(src, dst), min(src, dst)
    if small < 1 or big % small:
        raise ValueError(f"extents {src} and {dst} are not related by an integer ratio")
    return big // small


def align_spatial(x, target_h: int, target_w: int, mode: str) -> np.ndarray:
    """Average-pool (``shrink``) or nearest-repeat (``grow``) to a target extent."""
    x = as_real(x)
    n, c, h, w = x.shape
    rh, rw = _ratio(h, target_h), _ratio(w, target_w)
    if mode == "shrink":
        if target_h > h or target_w > w:
            raise ValueError("shrink cannot enlarge")
        return x.reshape(n, c, target_h, rh, target_w, rw).mean(axis=(3, 5))
    if mode == "grow":
        if target_h < h or target_w < w:
            raise ValueError("grow cannot reduce")
        return np.repeat(np.repeat(x, rh, axis=2), rw, axis=3)
    raise ValueError(f"unknown alignment mode {mode!r}")


def align_adjoint(g, src_h: int, src_w: int, mode: str) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    n, c, h, w = g.shape
    if mode == "shrink":
        rh, rw = src_h // h, src_w // w
        g = np.repeat(np.repeat(g, rh, axis=2), rw, axis=3)
        return g / (rh * rw)
    rh, rw = h // src_h, w // src_w
    return g.reshape(n, c, src_h, rh, src_w, rw).sum(axis=(3, 5))
