"""Training objective for the offline model.

The score target is a Gaussian bump with a size-adaptive spread, peaking
at exactly 1 on the low-resolution cell containing the ground-truth
center. Classification uses a penalty-reduced pixel-wise focal loss; the
offset and size heads take L1 penalties evaluated only at that cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

CLAMP_EPS = 1e-7


@dataclass
class FocalParams:
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("focal exponents must be positive")


@dataclass
class GroundTruth:
    """Localization targets for one search patch."""
    center: tuple[float, float]        # patch pixels
    cell: tuple[int, int]              # low-resolution cell (x, y)
    box_size: tuple[float, float]      # patch pixels
    norm_size: tuple[float, float]     # box size / patch extent
    label: np.ndarray = field(repr=False)  # (Hs, Ws), peak exactly 1 at cell


def adaptive_sigma(box_w: float, box_h: float, min_overlap: float = 0.7,
                   sigma_floor: float = 0.5) -> float:
    """Spread from the largest corner-shift radius keeping IoU >= min_overlap.

    The three quadratic cases bound the radius for a box whose corners move
    inward, outward, or one of each; sigma is radius/3, floored so tiny
    boxes still get a usable bump. Box extents are in grid cells.
    """
    if box_w <= 0 or box_h <= 0:
        raise ValueError("box extents must be positive")
    o = min_overlap
    h, w = box_h, box_w

    b1 = h + w
    c1 = w * h * (1 - o) / (1 + o)
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * c1)) / 2

    b2 = 2 * (h + w)
    c2 = (1 - o) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 16 * c2)) / 8

    b3 = -2 * o * (h + w)
    c3 = (o - 1) * w * h
    r3 = (b3 + math.sqrt(b3 * b3 - 16 * o * c3)) / (8 * o)

    return max(min(r1, r2, r3) / 3.0, sigma_floor)


def gaussian_label(cell: tuple[int, int], sigma: float, hs: int, ws: int) -> np.ndarray:
    """exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2)) over the (hs, ws) grid."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    cx, cy = cell
    ys, xs = np.meshgrid(np.arange(hs, dtype=np.float64),
                         np.arange(ws, dtype=np.float64), indexing="ij")
    label = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    label[cy, cx] = 1.0
    return label


def make_ground_truth(center: tuple[float, float], box_size: tuple[float, float],
                      patch_w: int, patch_h: int, stride: int,
                      hs: int, ws: int) -> GroundTruth:
    """Build all targets for a ground-truth box inside a search patch."""
    cx, cy = center
    cell = (int(cx // stride), int(cy // stride))
    cell = (min(max(cell[0], 0), ws - 1), min(max(cell[1], 0), hs - 1))
    sigma = adaptive_sigma(box_size[0] / stride, box_size[1] / stride)
    return GroundTruth(
        center=(cx, cy),
        cell=cell,
        box_size=box_size,
        norm_size=(box_size[0] / patch_w, box_size[1] / patch_h),
        label=gaussian_label(cell, sigma, hs, ws),
    )


def focal_loss(score: Tensor, label: np.ndarray,
               params: FocalParams | None = None) -> Tensor:
    """Penalty-reduced pixel-wise focal loss, summed without normalization.

    Cells where the label equals exactly 1 contribute
    -(1-Y)^alpha log(Y); every other cell contributes
    -(1-label)^beta Y^alpha log(1-Y).
    """
    if params is None:
        params = FocalParams()
    if score.shape != label.shape:
        from .errors import ShapeError
        raise ShapeError(f"score {score.shape} vs label {label.shape}")
    y = T.clamp(score, CLAMP_EPS, 1.0 - CLAMP_EPS)
    pos = (label == 1.0).astype(np.float64)
    neg_weight = (1.0 - label) ** params.beta
    pos_term = T.mul(T.mul(T.power(T.sub(1.0, y), params.alpha), T.log(y)), pos)
    neg_term = T.mul(T.mul(T.power(y, params.alpha), T.log(T.sub(1.0, y))),
                     neg_weight * (1.0 - pos))
    return T.mul(T.tensor_sum(T.add(pos_term, neg_term)), -1.0)


def offset_loss(offset: Tensor, center: tuple[float, float], stride: int) -> Tensor:
    """L1 between the predicted offset at the center cell and the true residual."""
    cx, cy = center
    cell_x, cell_y = int(cx // stride), int(cy // stride)
    residual = np.array([cx / stride - cell_x, cy / stride - cell_y])
    pred = offset[cell_y, cell_x]
    return T.tensor_sum(T.absolute(T.sub(pred, residual)))


def size_loss(size: Tensor, norm_size: tuple[float, float],
              cell: tuple[int, int]) -> Tensor:
    """L1 between the predicted normalized size at the center cell and truth."""
    gx, gy = cell
    pred = size[gy, gx]
    return T.tensor_sum(T.absolute(T.sub(pred, np.asarray(norm_size, dtype=np.float64))))


def joint_loss(score_loss: Tensor, off_loss: Tensor, sz_loss: Tensor,
               lambda_offset: float = 1.0, lambda_size: float = 1.0) -> Tensor:
    return T.add(score_loss, T.add(T.mul(off_loss, lambda_offset),
                                   T.mul(sz_loss, lambda_size)))
