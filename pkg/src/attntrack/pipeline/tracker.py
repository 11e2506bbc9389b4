"""Per-sequence tracking state machine.

``Tracker.init`` crops the template once, encodes it, and freezes the
resulting memory; ``Tracker.track`` crops a search patch around the last
box, decodes it against the template memory, reads the head maps, and
maps the decoded box back to image coordinates. The optional online
branch maintains a sample memory over mid-level features and refreshes
its filter with short Gauss-Newton/CG bursts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..errors import ConfigurationError, TrackingError
from ..localize import (BoundingBox, CosineWindow, HeadMaps, HeadWeights,
                        apply_window, decode_center, decode_size, heads_forward,
                        init_head_weights, make_cosine_window, peak_cell,
                        smooth_size)
from ..loss import adaptive_sigma, gaussian_label
from ..online import (OnlineFilter, TrainingMemory, blend, init_online_filter,
                      online_forward, solve_cg, update_memory)
from ..tensor import Tensor, load_checkpoint, save_checkpoint
from ..transformer import (AttentionTrace, DecoderInput, EncoderInput,
                           PositionalEncoding, TransformerWeights,
                           build_positional_encoding, decode, encode,
                           init_transformer)
from .backbone import BackboneWeights, backbone_forward, init_backbone
from .crop import (CropResult, context_side, crop_search, crop_template,
                   image_to_patch, pad_to_multiple, patch_to_image)
from .seqio import Frame

STRIDE = 8


@dataclass
class TrackerConfig:
    template_size: int = 127
    search_size: int = 255
    stride: int = STRIDE
    d: int = 32
    n_heads: int = 4
    ffn_hidden: int = 0                  # 0 -> 8 * d
    n_encoder_layers: int = 1
    n_decoder_layers: int = 1
    c_mid: int = 32
    window_influence: float = 0.4
    size_smoothing: float = 0.3
    blend_weight: float = 0.6
    online: bool = False
    pe_mask: bool = True
    online_hidden: int = 64
    online_kernel: int = 4
    online_reg: float = 1e-2
    memory_capacity: int = 50
    # sample decay 0.1 / refresh every frame keep the filter tracking the
    # target under appearance drift; slower schedules leave it anchored to
    # the first-frame appearance and drag the blended map behind the target
    memory_lr: float = 0.1
    online_init_gn_steps: int = 10
    online_init_cg_iters: int = 10
    online_update_gn_steps: int = 1
    online_update_cg_iters: int = 5
    online_update_interval: int = 1
    online_score_threshold: float = 0.7

    def __post_init__(self):
        if self.search_size < self.template_size:
            raise ConfigurationError("search size must be >= template size")
        if self.stride != STRIDE:
            raise ConfigurationError(f"backbone stride is fixed at {STRIDE}")
        if self.d % 4:
            raise ConfigurationError("model width must be divisible by 4")
        if self.d % self.n_heads:
            raise ConfigurationError("head count must divide model width")
        if self.n_encoder_layers < 1 or self.n_decoder_layers < 1:
            raise ConfigurationError("need at least one encoder and decoder layer")
        if not (0.0 <= self.window_influence <= 1.0 and 0.0 <= self.blend_weight <= 1.0):
            raise ConfigurationError("window and blend weights must be in [0, 1]")

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden else 8 * self.d


# integer/boolean config fields round-trip through the float checkpoint
_INT_FIELDS = {"template_size", "search_size", "stride", "d", "n_heads",
               "ffn_hidden", "n_encoder_layers", "n_decoder_layers", "c_mid",
               "online_hidden", "online_kernel", "memory_capacity",
               "online_init_gn_steps", "online_init_cg_iters",
               "online_update_gn_steps", "online_update_cg_iters",
               "online_update_interval"}
_BOOL_FIELDS = {"online", "pe_mask"}


@dataclass
class ModelWeights:
    backbone: BackboneWeights
    transformer: TransformerWeights
    heads: HeadWeights

    def named_parameters(self):
        yield from self.backbone.named_parameters()
        yield from self.transformer.named_parameters()
        yield from self.heads.named_parameters()

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def build_model(rng: np.random.Generator, config: TrackerConfig) -> ModelWeights:
    return ModelWeights(
        backbone=init_backbone(rng, c_mid=config.c_mid, d=config.d),
        transformer=init_transformer(rng, config.d, config.n_heads,
                                     config.n_encoder_layers,
                                     config.n_decoder_layers,
                                     config.ffn_width),
        heads=init_head_weights(rng, config.d),
    )


def save_model(path, model: ModelWeights, config: TrackerConfig) -> None:
    """Checkpoint the parameters plus the config scalars needed to rebuild."""
    entries = [(f"config.{f.name}", Tensor(float(getattr(config, f.name))))
               for f in dataclasses.fields(config)]
    entries.extend(model.named_parameters())
    save_checkpoint(entries, path)


def load_model(path) -> tuple[ModelWeights, TrackerConfig]:
    data = load_checkpoint(path)
    kwargs = {}
    for f in dataclasses.fields(TrackerConfig):
        key = f"config.{f.name}"
        if key not in data:
            continue
        value = float(data[key])
        if f.name in _INT_FIELDS:
            kwargs[f.name] = int(round(value))
        elif f.name in _BOOL_FIELDS:
            kwargs[f.name] = bool(round(value))
        else:
            kwargs[f.name] = value
    config = TrackerConfig(**kwargs)
    model = build_model(np.random.default_rng(0), config)
    for name, param in model.named_parameters():
        if name not in data:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if data[name].shape != param.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}: "
                             f"{data[name].shape} vs {param.data.shape}")
        param.data = data[name]
    return model, config


def grid_pad_mask(pixel_mask: np.ndarray, stride: int = STRIDE) -> np.ndarray:
    """A grid cell counts as padded when its whole pixel block is padded."""
    h, w = pixel_mask.shape
    blocks = pixel_mask.reshape(h // stride, stride, w // stride, stride)
    return blocks.all(axis=(1, 3))


@dataclass
class PatchFeatures:
    """Backbone outputs for one padded crop."""
    crop: CropResult
    tokens: Tensor               # (h, w, d) channel-last feature grid
    mid: np.ndarray              # (c_mid, h, w) online-branch tap
    mask: np.ndarray             # (h, w) grid-level pad mask
    padded_size: int


def extract_features(frame_pixels: np.ndarray, crop: CropResult,
                     model: ModelWeights, config: TrackerConfig) -> PatchFeatures:
    padded = pad_to_multiple(crop, STRIDE)
    mid, out = backbone_forward(Tensor(padded.patch), model.backbone)
    tokens = T.transpose(out, (1, 2, 0))
    mask = grid_pad_mask(padded.pad_mask)
    return PatchFeatures(crop=padded, tokens=tokens, mid=mid.data,
                         mask=mask if config.pe_mask else np.zeros_like(mask),
                         padded_size=padded.patch.shape[1])


@dataclass
class FrameDiagnostics:
    score_map: np.ndarray                  # raw head output
    windowed_map: np.ndarray               # after cosine-window suppression
    blended_map: np.ndarray | None         # after online blending (if enabled)
    online_map: np.ndarray | None
    peak_score: float
    lost: bool
    crop: CropResult
    head_maps: HeadMaps | None = None


@dataclass
class TrackerState:
    template_memory: Tensor
    template_pe: PositionalEncoding
    box: BoundingBox
    window: CosineWindow
    online_filter: OnlineFilter | None = None
    online_memory: TrainingMemory | None = None
    frame_index: int = 0
    frames_since_update: int = 0


class Tracker:
    """Single-target tracker; one instance owns one sequence's state."""

    def __init__(self, model: ModelWeights, config: TrackerConfig | None = None):
        self.model = model
        self.config = config or TrackerConfig()
        self.state: TrackerState | None = None

    # -- initialization -----------------------------------------------------

    def init(self, frame: Frame | np.ndarray, box: BoundingBox,
             trace: AttentionTrace | None = None) -> TrackerState:
        pixels = frame.pixels if isinstance(frame, Frame) else frame
        cfg = self.config
        with T.no_grad():
            crop = crop_template(pixels, box, cfg.template_size)
            feats = extract_features(pixels, crop, self.model, cfg)
            h, w, d = feats.tokens.shape
            pe = build_positional_encoding(
                h, w, d, feats.mask if cfg.pe_mask else None)
            memory = encode(EncoderInput(feats.tokens, feats.mask),
                            self.model.transformer.encoder, pe=pe, trace=trace)

        grid = self._search_grid_extent()
        window = make_cosine_window(grid, grid, cfg.window_influence)
        self.state = TrackerState(template_memory=memory.detach(),
                                  template_pe=pe, box=box, window=window)
        if cfg.online:
            self._init_online(pixels, box)
        return self.state

    def _search_grid_extent(self) -> int:
        padded = ((self.config.search_size + STRIDE - 1) // STRIDE) * STRIDE
        return padded // STRIDE

    def _online_label(self, center_patch: tuple[float, float],
                      box_patch: tuple[float, float], grid: int) -> np.ndarray:
        cell = (int(np.clip(center_patch[0] // STRIDE, 0, grid - 1)),
                int(np.clip(center_patch[1] // STRIDE, 0, grid - 1)))
        sigma = adaptive_sigma(max(box_patch[0] / STRIDE, 0.25),
                               max(box_patch[1] / STRIDE, 0.25))
        return gaussian_label(cell, sigma, grid, grid)

    def _init_online(self, pixels: np.ndarray, box: BoundingBox) -> None:
        cfg = self.config
        rng = np.random.default_rng(0)
        self.state.online_filter = init_online_filter(
            rng, cfg.c_mid, hidden=cfg.online_hidden,
            kernel=cfg.online_kernel, reg=cfg.online_reg)
        self.state.online_memory = TrainingMemory(capacity=cfg.memory_capacity)

        grid = self._search_grid_extent()
        shift_patch = cfg.search_size / 8.0
        shifts = [(0.0, 0.0), (shift_patch, 0.0), (-shift_patch, 0.0),
                  (0.0, shift_patch), (0.0, -shift_patch)]
        scale = context_side(box) / cfg.template_size
        with T.no_grad():
            for dx, dy in shifts:
                shifted_box = BoundingBox(box.cx + dx * scale,
                                          box.cy + dy * scale, box.w, box.h)
                try:
                    crop = crop_search(pixels, shifted_box, cfg.search_size,
                                       cfg.template_size)
                except TrackingError:
                    continue
                feats = extract_features(pixels, crop, self.model, cfg)
                center_patch = image_to_patch((box.cx, box.cy), feats.crop)
                label = self._online_label(
                    center_patch, (box.w / feats.crop.scale, box.h / feats.crop.scale),
                    grid)
                update_memory(self.state.online_memory, feats.mid, label,
                              lr=cfg.memory_lr)
        result = solve_cg(self.state.online_filter, self.state.online_memory,
                          n_iters=cfg.online_init_cg_iters,
                          gn_steps=cfg.online_init_gn_steps)
        if not result.degraded:
            self.state.online_filter = result.filter

    # -- per-frame update ----------------------------------------------------

    def track(self, frame: Frame | np.ndarray,
              trace: AttentionTrace | None = None
              ) -> tuple[BoundingBox, FrameDiagnostics]:
        if self.state is None:
            raise TrackingError("tracker not initialized")
        pixels = frame.pixels if isinstance(frame, Frame) else frame
        cfg = self.config
        state = self.state
        state.frame_index += 1

        with T.no_grad():
            crop = crop_search(pixels, state.box, cfg.search_size, cfg.template_size)
            feats = extract_features(pixels, crop, self.model, cfg)
            h, w, d = feats.tokens.shape
            pe = build_positional_encoding(h, w, d,
                                           feats.mask if cfg.pe_mask else None)
            decoded = decode(DecoderInput(feats.tokens, feats.mask),
                             state.template_memory, state.template_pe,
                             self.model.transformer.decoder, pe=pe, trace=trace)
            maps = heads_forward(decoded, self.model.heads, STRIDE)

        raw = maps.score.data[:, :, 0]
        windowed = apply_window(raw, state.window)
        online_map = None
        blended = None
        if cfg.online and state.online_filter is not None:
            online_map = np.clip(online_forward(state.online_filter, feats.mid),
                                 0.0, 1.0)
            blended = blend(windowed, online_map, cfg.blend_weight)
            decode_map = blended
        else:
            decode_map = windowed

        if not np.all(np.isfinite(decode_map)):
            diag = FrameDiagnostics(score_map=raw, windowed_map=windowed,
                                    blended_map=blended, online_map=online_map,
                                    peak_score=float("nan"), lost=True,
                                    crop=feats.crop, head_maps=maps)
            return state.box, diag

        cell = peak_cell(decode_map)
        peak_score = float(decode_map[cell[1], cell[0]])
        center_patch = decode_center(decode_map, maps.offset.data, STRIDE)
        size_patch = decode_size(maps.size.data, cell,
                                 feats.padded_size, feats.padded_size)

        center_img = patch_to_image(center_patch, feats.crop)
        size_img = (size_patch[0] * feats.crop.scale,
                    size_patch[1] * feats.crop.scale)
        new_w, new_h = smooth_size((state.box.w, state.box.h), size_img,
                                   cfg.size_smoothing)
        _, img_h, img_w = pixels.shape
        new_box = BoundingBox(
            cx=float(np.clip(center_img[0], 0.0, img_w - 1.0)),
            cy=float(np.clip(center_img[1], 0.0, img_h - 1.0)),
            w=max(new_w, 1.0), h=max(new_h, 1.0))
        state.box = new_box

        if cfg.online and state.online_filter is not None:
            # label the sample memory at the offline decode: anchoring the
            # filter to the sharper focal-trained map avoids reinforcing the
            # online branch's own blur through its training targets
            center_off = decode_center(windowed, maps.offset.data, STRIDE)
            self._online_step(feats, center_off, size_patch, peak_score)

        diag = FrameDiagnostics(score_map=raw, windowed_map=windowed,
                                blended_map=blended, online_map=online_map,
                                peak_score=peak_score, lost=False,
                                crop=feats.crop, head_maps=maps)
        return new_box, diag

    def _online_step(self, feats: PatchFeatures, center_patch, size_patch,
                     peak_score: float) -> None:
        cfg = self.config
        state = self.state
        grid = self._search_grid_extent()
        label = self._online_label(center_patch, size_patch, grid)
        update_memory(state.online_memory, feats.mid, label, lr=cfg.memory_lr)
        state.frames_since_update += 1
        due = state.frames_since_update >= cfg.online_update_interval
        confident = peak_score > cfg.online_score_threshold
        if due or confident:
            result = solve_cg(state.online_filter, state.online_memory,
                              n_iters=cfg.online_update_cg_iters,
                              gn_steps=cfg.online_update_gn_steps)
            if not result.degraded:
                state.online_filter = result.filter
            state.frames_since_update = 0


def track_sequence(model: ModelWeights, config: TrackerConfig,
                   frames: list[Frame], init_box: BoundingBox
                   ) -> list[BoundingBox]:
    """Track a whole sequence; the first output echoes the init box."""
    if not frames:
        raise TrackingError("empty sequence")
    tracker = Tracker(model, config)
    tracker.init(frames[0], init_box)
    boxes = [init_box]
    for frame in frames[1:]:
        box, _ = tracker.track(frame)
        boxes.append(box)
    return boxes
