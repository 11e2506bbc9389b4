"""Fixed-learning-rate training loop for desk-scale experiments.

Builds (template, search, target) triples from a sequence with exact
ground truth, then minimizes the joint objective (focal score loss plus
L1 offset/size losses) with Adam at a constant learning rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..errors import TrainingDivergence
from ..localize import BoundingBox, HeadMaps, heads_forward
from ..loss import (GroundTruth, focal_loss, joint_loss, make_ground_truth,
                    offset_loss, size_loss)
from ..tensor import Tensor
from ..transformer import (DecoderInput, EncoderInput,
                           build_positional_encoding, decode, encode)
from .crop import (CropResult, context_side, crop_search, crop_template,
                   image_to_patch, pad_to_multiple)
from .seqio import Frame
from .tracker import (STRIDE, ModelWeights, TrackerConfig, grid_pad_mask)


@dataclass
class TrainSettings:
    steps: int = 500
    lr: float = 1e-3
    seed: int = 0
    batch_size: int = 2                 # sampled crops averaged per step
    center_jitter_cells: float = 2.0    # crop-center jitter, in grid cells
    scale_jitter: float = 0.2           # log-uniform crop-side perturbation
    lambda_offset: float = 1.0
    lambda_size: float = 1.0


@dataclass
class TrainingPair:
    search_crop: CropResult
    target: GroundTruth


class Adam:
    """Plain Adam, constant learning rate."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_template_crop(frame: Frame, box: BoundingBox,
                       config: TrackerConfig) -> CropResult:
    return pad_to_multiple(
        crop_template(frame.pixels, box, config.template_size), STRIDE)


def sample_training_pair(frames: list[Frame], boxes: list[BoundingBox],
                         config: TrackerConfig, rng: np.random.Generator,
                         center_jitter_cells: float = 2.0,
                         scale_jitter: float = 0.2) -> TrainingPair:
    """A random frame cropped around a perturbed previous-frame box.

    The crop center is jittered by up to the given number of grid cells
    and the crop side by a log-uniform scale factor, so the offset and
    size fields get supervised across cells and crop geometries (the way
    the tracker will actually read them).
    """
    t = int(rng.integers(1, len(frames)))
    prev = boxes[t - 1]
    scale = context_side(prev) / config.template_size   # image px per patch px
    jitter = center_jitter_cells * STRIDE * scale
    factor = float(np.exp(rng.uniform(-scale_jitter, scale_jitter)))
    center = BoundingBox(prev.cx + rng.uniform(-jitter, jitter),
                         prev.cy + rng.uniform(-jitter, jitter),
                         prev.w * factor, prev.h * factor)
    crop = pad_to_multiple(
        crop_search(frames[t].pixels, center, config.search_size,
                    config.template_size), STRIDE)
    padded = crop.patch.shape[1]
    grid = padded // STRIDE
    truth = boxes[t]
    center_patch = image_to_patch((truth.cx, truth.cy), crop)
    size_patch = (truth.w / crop.scale, truth.h / crop.scale)
    return TrainingPair(
        search_crop=crop,
        target=make_ground_truth(center_patch, size_patch, padded, padded,
                                 STRIDE, grid, grid))


def forward_pair(model: ModelWeights, config: TrackerConfig,
                 template: CropResult, search: CropResult) -> HeadMaps:
    """Full tape-recorded forward pass: backbone, transformer, heads."""
    from .backbone import backbone_forward

    _, z_out = backbone_forward(Tensor(template.patch), model.backbone)
    z_tokens = T.transpose(z_out, (1, 2, 0))
    z_mask = grid_pad_mask(template.pad_mask)
    h, w, d = z_tokens.shape
    pe_z = build_positional_encoding(h, w, d, z_mask if config.pe_mask else None)
    memory = encode(EncoderInput(z_tokens, z_mask),
                    model.transformer.encoder, pe=pe_z)

    _, x_out = backbone_forward(Tensor(search.patch), model.backbone)
    x_tokens = T.transpose(x_out, (1, 2, 0))
    x_mask = grid_pad_mask(search.pad_mask)
    hh, ww, _ = x_tokens.shape
    pe_x = build_positional_encoding(hh, ww, d, x_mask if config.pe_mask else None)
    decoded = decode(DecoderInput(x_tokens, x_mask), memory, pe_z,
                     model.transformer.decoder, pe=pe_x)
    return heads_forward(decoded, model.heads, STRIDE)


def pair_loss(maps: HeadMaps, target: GroundTruth,
              lambda_offset: float = 1.0, lambda_size: float = 1.0):
    """Joint objective for one pair; returns (total, score, offset, size)."""
    hs, ws, _ = maps.score.shape
    score2d = T.reshape(maps.score, (hs, ws))
    ly = focal_loss(score2d, target.label)
    lo = offset_loss(maps.offset, target.center, maps.stride)
    ls = size_loss(maps.size, target.norm_size, target.cell)
    return joint_loss(ly, lo, ls, lambda_offset, lambda_size), ly, lo, ls


def train_toy(model: ModelWeights, config: TrackerConfig, frames: list[Frame],
              boxes: list[BoundingBox], settings: TrainSettings | None = None,
              log=None) -> list[float]:
    """Overfit the model to one sequence; returns the per-step loss history."""
    if settings is None:
        settings = TrainSettings()
    if len(frames) < 2:
        raise ValueError("need at least two frames to build training pairs")
    rng = np.random.default_rng(settings.seed)
    template = make_template_crop(frames[0], boxes[0], config)
    optimizer = Adam([p for _, p in model.named_parameters()], lr=settings.lr)
    history = []
    for step in range(settings.steps):
        model.zero_grad()
        losses = []
        parts = np.zeros(3)
        for _ in range(max(settings.batch_size, 1)):
            pair = sample_training_pair(frames, boxes, config, rng,
                                        settings.center_jitter_cells,
                                        settings.scale_jitter)
            maps = forward_pair(model, config, template, pair.search_crop)
            total, ly, lo, ls = pair_loss(maps, pair.target,
                                          settings.lambda_offset,
                                          settings.lambda_size)
            losses.append(total)
            parts += (ly.item(), lo.item(), ls.item())
        batch = losses[0]
        for extra in losses[1:]:
            batch = T.add(batch, extra)
        if len(losses) > 1:
            batch = T.mul(batch, 1.0 / len(losses))
        value = batch.item()
        if not np.isfinite(value):
            raise TrainingDivergence(f"loss became non-finite at step {step}")
        batch.backward()
        optimizer.step()
        history.append(value)
        if log is not None and (step % 25 == 0 or step == settings.steps - 1):
            parts /= max(settings.batch_size, 1)
            log(f"step {step:4d}  loss {value:.4f}  "
                f"(score {parts[0]:.4f} offset {parts[1]:.4f} size {parts[2]:.4f})")
    return history
