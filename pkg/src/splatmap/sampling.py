"""Quadtree adaptive image sampling driven by gradient variance.

A keyframe image is recursively subdivided: a cell splits while its shorter
side exceeds an adaptive minimum size and the population variance of the
Sobel gradient magnitude inside it exceeds an adaptive threshold.  Each
resulting leaf contributes one sample at its strongest-gradient pixel, so
sample density tracks local texture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class EmptyCell(ValueError):
    """Raised when a variance query addresses an empty cell."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle: rows [y, y+h), columns [x, x+w)."""

    y: int
    x: int
    h: int
    w: int

    @property
    def area(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class GradientMap:
    """Per-pixel gradient magnitude (>= 0) of a source image."""

    magnitude: np.ndarray

    @property
    def height(self) -> int:
        return self.magnitude.shape[0]

    @property
    def width(self) -> int:
        return self.magnitude.shape[1]


@dataclass(frozen=True)
class QuadtreeParams:
    """Base thresholds (c, tau) and their resolution-adaptive forms.

    eta = sqrt(H*W)/512 rescales both: cells stop splitting at
    c_th = max(1, eta*c) pixels, and only split while the cell's gradient
    variance exceeds tau_th = eta*tau.
    """

    c: float
    tau: float

    def __post_init__(self):
        if self.c < 1:
            raise ValueError("c must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")

    def eta(self, height: int, width: int) -> float:
        return float(np.sqrt(height * width) / 512.0)

    def c_th(self, height: int, width: int) -> float:
        return max(1.0, self.eta(height, width) * self.c)

    def tau_th(self, height: int, width: int) -> float:
        return self.eta(height, width) * self.tau


@dataclass
class SampleSet:
    """Quadtree output: one sample pixel per leaf, in canonical order.

    ``pixels`` holds (u, v) integer coordinates; ``leaves`` the matching
    leaf rectangles.  ``depths`` and ``colors`` are attached downstream
    once sensor depth / source color are known.
    """

    pixels: np.ndarray
    leaves: list[Rect]
    depths: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.leaves)


INTENSITY_SCALE = 255.0  # variance thresholds are calibrated for 8-bit intensities


def gradient_magnitude(image: np.ndarray) -> GradientMap:
    """Sobel gradient magnitude of an (H, W) or (H, W, 1|3) image.

    RGB is reduced to luminance first; borders use replicate padding.
    Images are stored in [0, 1] but gradients are taken on the 8-bit
    intensity scale, which the default variance threshold assumes.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] == 3:
            img = img @ LUMA_WEIGHTS
        elif img.shape[2] == 1:
            img = img[:, :, 0]
        else:
            raise ValueError("expected 1 or 3 channels")
    img = img * INTENSITY_SCALE
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    return GradientMap(np.sqrt(gx * gx + gy * gy))


def gradient_variance(grad: GradientMap, cell: Rect) -> float:
    """Population variance of the gradient magnitude inside a cell."""
    if cell.h <= 0 or cell.w <= 0:
        raise EmptyCell(f"empty cell {cell}")
    if cell.y < 0 or cell.x < 0 or cell.y + cell.h > grad.height or cell.x + cell.w > grad.width:
        raise EmptyCell(f"cell {cell} outside {grad.height}x{grad.width} image")
    patch = grad.magnitude[cell.y : cell.y + cell.h, cell.x : cell.x + cell.w]
    return float(np.var(patch))


def _split(cell: Rect) -> tuple[Rect, Rect, Rect, Rect]:
    """Integer-halving children in NW, NE, SW, SE order."""
    h1, w1 = cell.h // 2, cell.w // 2
    h2, w2 = cell.h - h1, cell.w - w1
    return (
        Rect(cell.y, cell.x, h1, w1),
        Rect(cell.y, cell.x + w1, h1, w2),
        Rect(cell.y + h1, cell.x, h2, w1),
        Rect(cell.y + h1, cell.x + w1, h2, w2),
    )


def adaptive_sample(image: np.ndarray, params: QuadtreeParams) -> SampleSet:
    """Quadtree-subdivide an image and emit one sample per leaf.

    A cell is split iff min(h, w) > c_th AND its gradient variance > tau_th.
    Each leaf samples its maximum-gradient pixel (ties: smallest row, then
    smallest column).  Leaves are emitted depth-first in NW, NE, SW, SE
    order, which fixes the output ordering.
    """
    grad = gradient_magnitude(image)
    H, W = grad.height, grad.width
    c_th = params.c_th(H, W)
    tau_th = params.tau_th(H, W)

    leaves: list[Rect] = []
    stack = [Rect(0, 0, H, W)]
    while stack:
        cell = stack.pop()
        if min(cell.h, cell.w) > c_th and gradient_variance(grad, cell) > tau_th:
            nw, ne, sw, se = _split(cell)
            stack.extend((se, sw, ne, nw))  # reversed so NW pops first
        else:
            leaves.append(cell)

    pixels = np.empty((len(leaves), 2), dtype=np.int64)
    for i, leaf in enumerate(leaves):
        patch = grad.magnitude[leaf.y : leaf.y + leaf.h, leaf.x : leaf.x + leaf.w]
        flat = int(np.argmax(patch))  # row-major argmax = smallest row, then column
        dy, dx = divmod(flat, leaf.w)
        pixels[i] = (leaf.x + dx, leaf.y + dy)
    return SampleSet(pixels=pixels, leaves=leaves)


def dense_sample(image: np.ndarray, stride: int = 2) -> SampleSet:
    """Regular-grid sampling fallback (every ``stride``-th pixel both ways).

    Stands in for adaptive sampling when the adaptive path is disabled in
    ablations; leaves are the stride-aligned grid cells.
    """
    img = np.asarray(image)
    H, W = img.shape[0], img.shape[1]
    leaves: list[Rect] = []
    pix: list[tuple[int, int]] = []
    for y in range(0, H, stride):
        for x in range(0, W, stride):
            leaves.append(Rect(y, x, min(stride, H - y), min(stride, W - x)))
            pix.append((x, y))
    return SampleSet(pixels=np.array(pix, dtype=np.int64), leaves=leaves)
