"""Region pooling over video feature maps and global-local fusion.

RoIAlign here is written as a linear map: for a given box, every output bin
is a fixed weighted sum of grid cells, so the pooling reduces to one matmul
with a precomputed weight matrix. That keeps the gradient rule trivially
exact and lets many boxes from many clips share a single product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

ROI_OUTPUT = (7, 7)
SAMPLES_PER_BIN = 2
DEFAULT_BETA = 0.3


class RegionError(ValueError):
    pass


class FusionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float | None = None

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise RegionError(f"non-finite box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise RegionError(f"box must satisfy x1 < x2 and y1 < y2, got {coords}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise RegionError(f"box score {self.score} outside [0, 1]")

    @classmethod
    def ingest(cls, x1, y1, x2, y2, frame_size, score=None) -> "BoundingBox":
        """Clip raw detector coordinates to the frame; zero area after clipping is an error."""
        w, h = frame_size
        cx1, cx2 = min(max(float(x1), 0.0), w), min(max(float(x2), 0.0), w)
        cy1, cy2 = min(max(float(y1), 0.0), h), min(max(float(y2), 0.0), h)
        if not (cx1 < cx2 and cy1 < cy2):
            raise RegionError(f"box {(x1, y1, x2, y2)} has zero area inside a {w}x{h} frame")
        return cls(cx1, cy1, cx2, cy2, None if score is None else float(score))

    def clipped(self, frame_size) -> "BoundingBox":
        return BoundingBox.ingest(self.x1, self.y1, self.x2, self.y2, frame_size, self.score)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def temporal_collapse(f_v: Tensor) -> Tensor:
    """Mean over the temporal axis: ``[T', d, H', W'] -> [d, H', W']``."""
    if f_v.ndim != 4:
        raise T.DimensionError(f"feature map must be [T',d,H',W'], got {f_v.shape}")
    return T.mean_over_axes(f_v, (0,))


def _axis_weights(lo: float, hi: float, bins: int, samples: int, cells: int) -> np.ndarray:
    """Per-bin average of 1-d bilinear weights over ``samples`` regularly spaced points.

    Grid cell ``i`` covers ``[i, i+1)`` with its value at the center ``i + 0.5``;
    sample positions are clamped to the outermost centers.
    """
    out = np.zeros((bins, cells))
    step = (hi - lo) / bins
    for b in range(bins):
        for s in range(samples):
            u = lo + (b + (s + 0.5) / samples) * step - 0.5
            u = min(max(u, 0.0), cells - 1.0)
            i0 = int(math.floor(u))
            i1 = min(i0 + 1, cells - 1)
            frac = u - i0
            out[b, i0] += (1.0 - frac) / samples
            out[b, i1] += frac / samples
    return out


def roi_weights(box: BoundingBox, grid: tuple[int, int], frame_size,
                out: tuple[int, int] = ROI_OUTPUT, samples_per_bin: int = SAMPLES_PER_BIN) -> np.ndarray:
    """Weight matrix ``[h*w, H'*W']`` such that pooled = weights @ map_cells."""
    gh, gw = grid
    fw, fh = frame_size
    b = box.clipped(frame_size)
    sx, sy = gw / fw, gh / fh
    wy = _axis_weights(b.y1 * sy, b.y2 * sy, out[0], samples_per_bin, gh)
    wx = _axis_weights(b.x1 * sx, b.x2 * sx, out[1], samples_per_bin, gw)
    return np.kron(wy, wx)


def roi_align(map2d: Tensor, box: BoundingBox, frame_size,
              out: tuple[int, int] = ROI_OUTPUT, samples_per_bin: int = SAMPLES_PER_BIN) -> Tensor:
    """Bilinear RoIAlign of one box on a ``[d, H', W']`` map -> ``[d, h, w]``."""
    if map2d.ndim != 3:
        raise T.DimensionError(f"roi_align needs a [d,H',W'] map, got {map2d.shape}")
    d, gh, gw = map2d.shape
    w = roi_weights(box, (gh, gw), frame_size, out, samples_per_bin)
    cells = T.reshape(map2d, (d, gh * gw))
    pooled = T.matmul(cells, T.as_tensor(np.ascontiguousarray(w.T)))
    return T.reshape(pooled, (d,) + tuple(out))


def pooled_region(f_v: Tensor, box: BoundingBox, frame_size) -> Tensor:
    """Region descriptor before projection: collapse time, RoIAlign, average bins."""
    return T.mean_over_axes(roi_align(temporal_collapse(f_v), box, frame_size), (1, 2))


def region_feature(f_v: Tensor, box: BoundingBox, frame_size,
                   project: Callable[[Tensor], Tensor]) -> Tensor:
    return project(pooled_region(f_v, box, frame_size))


def batched_region_features(f_v: Tensor, clip_ids: Sequence[int], boxes: Sequence[BoundingBox],
                            frame_size, project: Callable[[Tensor], Tensor]) -> Tensor:
    """Region features for boxes spread over a batch of clips.

    ``f_v`` is ``[B, T', d, H', W']``; box ``k`` lives in clip ``clip_ids[k]``.
    Mathematically identical to :func:`region_feature` per box, computed with
    one block-structured matmul. Returns ``[K, d]``.
    """
    B, _, d, gh, gw = f_v.shape
    h, w = ROI_OUTPUT
    cells = gh * gw
    weights = np.zeros((len(boxes) * h * w, B * cells))
    for k, (c, box) in enumerate(zip(clip_ids, boxes)):
        weights[k * h * w:(k + 1) * h * w, c * cells:(c + 1) * cells] = roi_weights(box, (gh, gw), frame_size)
    collapsed = T.mean_over_axes(f_v, (1,))  # [B, d, H', W']
    flat = T.reshape(T.transpose(T.reshape(collapsed, (B, d, cells)), (0, 2, 1)), (B * cells, d))
    pooled = T.matmul(T.as_tensor(weights), flat)  # [K*h*w, d]
    pooled = T.mean_over_axes(T.reshape(pooled, (len(boxes), h * w, d)), (1,))
    return project(pooled)


def fuse(f_r: Tensor, f_g: Tensor, beta: float = DEFAULT_BETA) -> Tensor:
    """``beta * f_r + (1 - beta) * f_g`` on raw (unnormalized) features."""
    if not 0.0 <= beta <= 1.0:
        raise FusionConfigError(f"fusion ratio beta={beta} outside [0, 1]")
    if f_r.shape != f_g.shape:
        raise T.DimensionError(f"fuse: region {f_r.shape} and global {f_g.shape} differ")
    return T.add(T.scale(f_r, beta), T.scale(f_g, 1.0 - beta))
