"""Encoder-decoder stack over flattened feature grids.

The encoder self-attends over the template feature sequence; the decoder
self-attends over the search feature sequence and cross-attends to the
encoder output (queries carry search positions, keys carry template
positions, values carry no positions). Grid cells flagged as padding get
all-zero positional rows, so equal-feature padded cells receive identical
attention treatment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (AttentionInputs, FfnWeights, LayerNormWeights,
                        MultiHeadWeights, ffn, init_ffn, init_layernorm,
                        init_multi_head, multi_head_attention, named_ffn,
                        named_layernorm, named_multi_head, residual_norm)
from .errors import ConfigurationError, ShapeError
from .tensor import Tensor


@dataclass
class PositionalEncoding:
    """Fixed 2-D sinusoidal codes, one row per grid cell (row-major)."""
    table: Tensor            # (height*width, d); masked rows exactly zero
    height: int
    width: int


@dataclass
class EncoderInput:
    features: Tensor                       # (h, w, d)
    pad_mask: np.ndarray | None = None     # (h, w) bool, True = padded cell


@dataclass
class DecoderInput:
    features: Tensor                       # (H, W, d)
    pad_mask: np.ndarray | None = None


@dataclass
class EncoderLayerWeights:
    attn: MultiHeadWeights
    attn_norm: LayerNormWeights
    ffn: FfnWeights


@dataclass
class DecoderLayerWeights:
    self_attn: MultiHeadWeights
    self_norm: LayerNormWeights
    cross_attn: MultiHeadWeights
    cross_norm: LayerNormWeights
    ffn: FfnWeights


@dataclass
class TransformerWeights:
    encoder: list[EncoderLayerWeights]
    decoder: list[DecoderLayerWeights]
    d: int
    n_heads: int

    def named_parameters(self, prefix: str = "transformer"):
        for i, layer in enumerate(self.encoder):
            base = f"{prefix}.encoder{i}"
            yield from named_multi_head(f"{base}.attn", layer.attn)
            yield from named_layernorm(f"{base}.attn_norm", layer.attn_norm)
            yield from named_ffn(f"{base}.ffn", layer.ffn)
        for i, layer in enumerate(self.decoder):
            base = f"{prefix}.decoder{i}"
            yield from named_multi_head(f"{base}.self_attn", layer.self_attn)
            yield from named_layernorm(f"{base}.self_norm", layer.self_norm)
            yield from named_multi_head(f"{base}.cross_attn", layer.cross_attn)
            yield from named_layernorm(f"{base}.cross_norm", layer.cross_norm)
            yield from named_ffn(f"{base}.ffn", layer.ffn)


@dataclass
class AttentionTrace:
    """Diagnostic capture of attention weight maps, keyed by call site."""
    maps: dict = field(default_factory=dict)

    def sink(self, key: str) -> list:
        return self.maps.setdefault(key, [])


def init_transformer(rng: np.random.Generator, d: int, n_heads: int,
                     n_encoder_layers: int = 1, n_decoder_layers: int = 1,
                     ffn_hidden: int | None = None) -> TransformerWeights:
    if n_encoder_layers < 1 or n_decoder_layers < 1:
        raise ConfigurationError("need at least one encoder and one decoder layer")
    hidden = 8 * d if ffn_hidden is None else ffn_hidden
    encoder = [EncoderLayerWeights(attn=init_multi_head(rng, d, n_heads),
                                   attn_norm=init_layernorm(d),
                                   ffn=init_ffn(rng, d, hidden))
               for _ in range(n_encoder_layers)]
    decoder = [DecoderLayerWeights(self_attn=init_multi_head(rng, d, n_heads),
                                   self_norm=init_layernorm(d),
                                   cross_attn=init_multi_head(rng, d, n_heads),
                                   cross_norm=init_layernorm(d),
                                   ffn=init_ffn(rng, d, hidden))
               for _ in range(n_decoder_layers)]
    return TransformerWeights(encoder=encoder, decoder=decoder, d=d, n_heads=n_heads)


def build_positional_encoding(height: int, width: int, d: int,
                              pad_mask: np.ndarray | None = None,
                              temperature: float = 10000.0) -> PositionalEncoding:
    """Sinusoidal grid code: first d/2 channels encode y, the rest encode x.

    Within each half, sin/cos pairs run over geometrically spaced
    frequencies. Rows whose grid cell is marked padded are zeroed, which is
    what makes padded positions interchangeable under attention.
    """
    if d % 4:
        raise ConfigurationError(f"positional encoding needs d divisible by 4, got {d}")
    half = d // 2
    freatios = np.arange(half, dtype=np.float64)
    inv_freq = temperature ** (2.0 * (freatios // 2) / half)

    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    table = np.zeros((height * width, d))
    for channel_base, coords in ((0, ys), (half, xs)):
        phase = coords.reshape(-1, 1) / inv_freq[None, :]      # (hw, half)
        code = np.empty_like(phase)
        code[:, 0::2] = np.sin(phase[:, 0::2])
        code[:, 1::2] = np.cos(phase[:, 1::2])
        table[:, channel_base:channel_base + half] = code
    if pad_mask is not None:
        if pad_mask.shape != (height, width):
            raise ShapeError(f"pad mask {pad_mask.shape} does not match grid "
                             f"{height}x{width}")
        table[pad_mask.reshape(-1)] = 0.0
    return PositionalEncoding(table=Tensor(table), height=height, width=width)


def flatten_grid(x: Tensor) -> Tensor:
    """(h, w, d) -> (h*w, d), row-major."""
    h, w, d = x.shape
    return T.reshape(x, (h * w, d))


def unflatten_grid(x: Tensor, height: int, width: int) -> Tensor:
    """(h*w, d) -> (h, w, d); inverse of flatten_grid."""
    n, d = x.shape
    if n != height * width:
        raise ShapeError(f"cannot unflatten {n} rows to {height}x{width}")
    return T.reshape(x, (height, width, d))


def encode(enc_in: EncoderInput, layers: list[EncoderLayerWeights],
           pe: PositionalEncoding | None = None,
           trace: AttentionTrace | None = None) -> Tensor:
    """Run the encoder stack over the flattened template grid."""
    h, w, d = enc_in.features.shape
    if pe is None:
        pe = build_positional_encoding(h, w, d, enc_in.pad_mask)
    x = flatten_grid(enc_in.features)
    for i, layer in enumerate(layers):
        sink = trace.sink(f"encoder{i}.self") if trace is not None else None
        attn = multi_head_attention(
            AttentionInputs(xq=x, xkv=x, pq=pe.table, pk=pe.table),
            layer.attn, attn_sink=sink)
        x = residual_norm(attn, x, layer.attn_norm)
        x = ffn(x, layer.ffn)
    return x


def decode(dec_in: DecoderInput, memory: Tensor, pe_template: PositionalEncoding,
           layers: list[DecoderLayerWeights],
           pe: PositionalEncoding | None = None,
           trace: AttentionTrace | None = None) -> Tensor:
    """Run the decoder stack; every layer cross-attends to ``memory``."""
    h, w, d = dec_in.features.shape
    if memory.shape[1] != d:
        raise ShapeError(f"memory width {memory.shape[1]} != decoder width {d}")
    if pe is None:
        pe = build_positional_encoding(h, w, d, dec_in.pad_mask)
    x = flatten_grid(dec_in.features)
    for i, layer in enumerate(layers):
        self_sink = trace.sink(f"decoder{i}.self") if trace is not None else None
        attn = multi_head_attention(
            AttentionInputs(xq=x, xkv=x, pq=pe.table, pk=pe.table),
            layer.self_attn, attn_sink=self_sink)
        x = residual_norm(attn, x, layer.self_norm)

        cross_sink = trace.sink(f"decoder{i}.cross") if trace is not None else None
        attn = multi_head_attention(
            AttentionInputs(xq=x, xkv=memory, pq=pe.table, pk=pe_template.table),
            layer.cross_attn, attn_sink=cross_sink)
        x = residual_norm(attn, x, layer.cross_norm)
        x = ffn(x, layer.ffn)
    return unflatten_grid(x, h, w)


def run_transformer(enc_in: EncoderInput, dec_in: DecoderInput,
                    weights: TransformerWeights,
                    trace: AttentionTrace | None = None) -> Tensor:
    """Encode the template, decode the search grid against it."""
    if not weights.encoder or not weights.decoder:
        raise ConfigurationError("transformer needs at least one encoder "
                                 "and one decoder layer")
    h, w, d = enc_in.features.shape
    pe_template = build_positional_encoding(h, w, d, enc_in.pad_mask)
    memory = encode(enc_in, weights.encoder, pe=pe_template, trace=trace)
    return decode(dec_in, memory, pe_template, weights.decoder, trace=trace)
