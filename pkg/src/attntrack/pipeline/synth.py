"""Seeded synthetic sequences: a textured rectangle over a textured field.

Frames are deterministic functions of the seed and the spec. The target
carries its own texture tile (stretched to the current box), so its
appearance is stable as it translates and rescales; an optional
distractor rectangle and a late multiplicative brightness drift provide
controlled nuisance factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..localize import BoundingBox
from .seqio import Frame


@dataclass
class SequenceSpec:
    image_size: tuple[int, int] = (112, 112)           # (H, W)
    start_box: tuple[float, float, float, float] = (56.0, 56.0, 26.0, 20.0)
    velocity: tuple[float, float] = (1.5, 1.0)         # pixels / frame
    size_rate: float = 0.0                             # fractional growth / frame
    distractor: bool = False
    distractor_start: tuple[float, float, float, float] = (28.0, 80.0, 22.0, 16.0)
    distractor_velocity: tuple[float, float] = (-1.0, -0.8)
    brightness_drift: float = 0.0                      # total drop by final frame
    drift_start: float = 0.5                           # fraction of sequence
    texture_cells: int = 7
    # fine static grain keeps background positions distinguishable even
    # after frames round-trip through 8-bit files
    background_noise: float = 0.02


def _smooth_texture(rng: np.random.Generator, cells: int, h: int, w: int) -> np.ndarray:
    """Coarse random grid upsampled bilinearly to (3, h, w)."""
    coarse = rng.uniform(0.1, 0.9, size=(3, cells, cells))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    y0 = np.minimum(ys.astype(int), cells - 2)
    x0 = np.minimum(xs.astype(int), cells - 2)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    c00 = coarse[:, y0][:, :, x0]
    c01 = coarse[:, y0][:, :, x0 + 1]
    c10 = coarse[:, y0 + 1][:, :, x0]
    c11 = coarse[:, y0 + 1][:, :, x0 + 1]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def _paint_rect(canvas: np.ndarray, box: BoundingBox, tile: np.ndarray) -> None:
    """Nearest-sample the tile across the box footprint (clipped to canvas)."""
    _, img_h, img_w = canvas.shape
    x0 = int(round(box.cx - box.w / 2.0))
    y0 = int(round(box.cy - box.h / 2.0))
    x1 = int(round(box.cx + box.w / 2.0))
    y1 = int(round(box.cy + box.h / 2.0))
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, img_w), min(y1, img_h)
    if cx1 <= cx0 or cy1 <= cy0:
        return
    th, tw = tile.shape[1], tile.shape[2]
    ys = ((np.arange(cy0, cy1) - y0) * th // max(y1 - y0, 1)).clip(0, th - 1)
    xs = ((np.arange(cx0, cx1) - x0) * tw // max(x1 - x0, 1)).clip(0, tw - 1)
    canvas[:, cy0:cy1, cx0:cx1] = tile[:, ys][:, :, xs]


def generate_synthetic_sequence(seed: int, n_frames: int,
                                spec: SequenceSpec | None = None
                                ) -> tuple[list[Frame], list[BoundingBox]]:
    """Render n_frames frames and exact ground-truth boxes."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if spec is None:
        spec = SequenceSpec()
    rng = np.random.default_rng(seed)
    img_h, img_w = spec.image_size
    background = _smooth_texture(rng, spec.texture_cells, img_h, img_w)
    if spec.background_noise > 0.0:
        background = background + rng.uniform(-spec.background_noise,
                                              spec.background_noise,
                                              background.shape)
    target_tile = rng.uniform(0.0, 1.0, size=(3, 6, 6))
    distractor_tile = rng.uniform(0.0, 1.0, size=(3, 6, 6))

    frames, boxes = [], []
    cx, cy, w, h = spec.start_box
    dx0, dy0, dw, dh = spec.distractor_start
    drift_from = spec.drift_start * (n_frames - 1)
    for t in range(n_frames):
        canvas = background.copy()
        if spec.distractor:
            dbox = BoundingBox(dx0 + t * spec.distractor_velocity[0],
                               dy0 + t * spec.distractor_velocity[1], dw, dh)
            _paint_rect(canvas, dbox, distractor_tile)
        scale = (1.0 + spec.size_rate) ** t
        box = BoundingBox(cx + t * spec.velocity[0], cy + t * spec.velocity[1],
                          w * scale, h * scale)
        _paint_rect(canvas, box, target_tile)
        if spec.brightness_drift > 0.0 and n_frames > 1 and t > drift_from:
            frac = (t - drift_from) / max(n_frames - 1 - drift_from, 1e-9)
            canvas = canvas * (1.0 - spec.brightness_drift * frac)
        frames.append(Frame(pixels=np.clip(canvas, 0.0, 1.0), index=t))
        boxes.append(box)
    return frames, boxes
