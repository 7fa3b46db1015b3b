"""Deterministic synthetic dense-prediction scenes.

Each image shows one to four anti-aliased shapes (disk, rectangle, triangle)
over smoothed noise.  Segmentation targets label every pixel with the class of
the topmost shape covering it (0 is background).  Depth targets are the
distance to the nearest shape boundary, normalised into ``(0, 1]``.

Every image also receives a random global gain and offset, so the activation
statistics vary from image to image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

NUM_CLASSES = 4  # background, disk, rectangle, triangle
CLASS_COLOURS = np.array([
    [0.9, 0.2, 0.2],
    [0.2, 0.8, 0.3],
    [0.25, 0.35, 0.9],
])
SUPERSAMPLE = 4
COLOUR_BASE = 0.5
COLOUR_SEPARATION = 0.25  # class colours are close, so fine value detail matters
COLOUR_JITTER = 0.05
GAIN_RANGE = (0.5, 2.0)
OFFSET_RANGE = 1.0


@dataclass
class DenseDataset:
    images: np.ndarray   # (N, C, S, S) float64
    labels: np.ndarray   # (N, S, S) int64
    depth: np.ndarray    # (N, 1, S, S) float64 in (0, 1]
    task: str

    def __len__(self) -> int:
        return len(self.images)

    @property
    def targets(self) -> np.ndarray:
        return self.labels if self.task == "segmentation" else self.depth


def _coverage(kind: int, params, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    if kind == 1:
        cy, cx, r = params
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif kind == 2:
        y0, x0, y1, x1 = params
        inside = (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1)
    else:
        (ay, ax), (by, bx), (cy, cx) = params
        d1 = (xx - bx) * (ay - by) - (ax - bx) * (yy - by)
        d2 = (xx - cx) * (by - cy) - (bx - cx) * (yy - cy)
        d3 = (xx - ax) * (cy - ay) - (cx - ax) * (yy - ay)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        inside = ~(neg & pos)
    s = SUPERSAMPLE
    h, w = inside.shape[0] // s, inside.shape[1] // s
    return inside.reshape(h, s, w, s).mean(axis=(1, 3))


def _random_shape(rng: np.random.Generator, size: int):
    kind = int(rng.integers(1, 4))
    r = rng.uniform(size / 8, size / 4)
    cy, cx = rng.uniform(r * 0.5, size - r * 0.5, 2)
    if kind == 1:
        return kind, (cy, cx, r)
    if kind == 2:
        hy, hx = r * rng.uniform(0.6, 1.2, 2)
        return kind, (cy - hy, cx - hx, cy + hy, cx + hx)
    angle = rng.uniform(0, 2 * np.pi)
    corners = [(cy + 1.3 * r * np.sin(angle + t), cx + 1.3 * r * np.cos(angle + t))
               for t in (0, 2 * np.pi / 3, 4 * np.pi / 3)]
    return kind, tuple(corners)


def _scene(rng: np.random.Generator, size: int, channels: int):
    s = SUPERSAMPLE
    sub = (np.arange(size * s) + 0.5) / s
    yy, xx = np.meshgrid(sub, sub, indexing="ij")

    noise = rng.normal(size=(channels, size, size))
    image = ndimage.gaussian_filter(noise, sigma=(0, 1.5, 1.5)) * 1.5
    image += rng.uniform(-0.3, 0.3, (channels, 1, 1))
    labels = np.zeros((size, size), dtype=np.int64)
    for _ in range(int(rng.integers(1, 5))):
        kind, params = _random_shape(rng, size)
        cov = _coverage(kind, params, yy, xx)
        base = CLASS_COLOURS[kind - 1, np.arange(channels) % 3]
        colour = COLOUR_BASE + COLOUR_SEPARATION * (base - 0.5)
        colour = colour + rng.uniform(-COLOUR_JITTER, COLOUR_JITTER, channels)
        image = image * (1 - cov) + colour[:, None, None] * cov
        labels[cov >= 0.5] = kind
    gain = rng.uniform(*GAIN_RANGE)
    offset = rng.uniform(-OFFSET_RANGE, OFFSET_RANGE)
    image = gain * image + offset

    edges = np.zeros_like(labels, dtype=bool)
    edges[:-1] |= labels[:-1] != labels[1:]
    edges[1:] |= labels[:-1] != labels[1:]
    edges[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edges[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    if edges.any():
        dist = ndimage.distance_transform_edt(~edges)
    else:
        dist = np.zeros(labels.shape)
    depth = (dist + 1.0) / (dist.max() + 1.0)
    return image, labels, depth


def gen_synthetic_dense(seed: int, task: str = "segmentation", count: int = 16,
                        size: int = 32, channels: int = 3) -> DenseDataset:
    if size < 16:
        raise ValueError("image size must be at least 16")
    if task not in ("segmentation", "depth"):
        raise ValueError(f"unknown task {task!r}")
    images = np.empty((count, channels, size, size))
    labels = np.empty((count, size, size), dtype=np.int64)
    depth = np.empty((count, 1, size, size))
    for i in range(count):
        # per-index streams keep samples independent of count and of worker order
        rng = np.random.default_rng([seed, i])
        images[i], labels[i], depth[i, 0] = _scene(rng, size, channels)
    return DenseDataset(images, labels, depth, task)
