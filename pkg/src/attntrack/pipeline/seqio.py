"""Sequence and image file I/O.

Sequences live in a directory of numbered binary PPM/PGM frames plus a
``groundtruth_rect.txt`` with one comma- or tab-separated ``x,y,w,h``
line (top-left corner format) per frame. Tracker results use the same
rectangle format. Heatmaps and attention maps dump to 8-bit PGM and CSV.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from ..localize import BoundingBox

GROUNDTRUTH_FILE = "groundtruth_rect.txt"


@dataclass
class Frame:
    pixels: np.ndarray     # (3, H, W) float64 in [0, 1]
    index: int


def _read_token(fh) -> bytes:
    token = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            break
        if ch == b"#":
            while ch and ch != b"\n":
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                break
            continue
        token += ch
    return bytes(token)


def read_netpbm(path) -> np.ndarray:
    """Read a binary PPM (P6) as (3, H, W) or PGM (P5) as (H, W), in [0, 1]."""
    with open(path, "rb") as fh:
        magic = _read_token(fh)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"{path}: unsupported netpbm magic {magic!r}")
        width = int(_read_token(fh))
        height = int(_read_token(fh))
        maxval = int(_read_token(fh))
        channels = 3 if magic == b"P6" else 1
        count = width * height * channels
        raw = fh.read(count)
        if len(raw) != count:
            raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 3:
        return data.reshape(height, width, 3).transpose(2, 0, 1)
    return data.reshape(height, width)


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write a (3, H, W) array in [0, 1] as binary PPM."""
    _, h, w = pixels.shape
    body = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(body.transpose(1, 2, 0).tobytes())


def write_pgm(path, values: np.ndarray, normalize: str = "global") -> None:
    """Write a 2-D array as 8-bit PGM.

    normalize: "global" scales by the array max, "row" scales each row by
    its own max (useful for row-stochastic attention maps), "none" assumes
    values already in [0, 1].
    """
    v = np.asarray(values, dtype=np.float64)
    if normalize == "global":
        peak = v.max()
        v = v / peak if peak > 0 else v
    elif normalize == "row":
        peaks = v.max(axis=1, keepdims=True)
        peaks[peaks == 0] = 1.0
        v = v / peaks
    elif normalize != "none":
        raise ValueError(f"unknown normalize mode {normalize!r}")
    h, w = v.shape
    body = np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(body.tobytes())


def write_csv(path, values: np.ndarray) -> None:
    np.savetxt(path, np.asarray(values), delimiter=",", fmt="%.12g")


def _parse_rect_line(line: str) -> BoundingBox:
    parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
    x, y, w, h = (float(p) for p in parts[:4])
    return BoundingBox.from_corner(x, y, w, h)


def read_rect_file(path) -> list[BoundingBox]:
    boxes = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                boxes.append(_parse_rect_line(line))
    return boxes


def write_rect_file(path, boxes: list[BoundingBox]) -> None:
    with open(path, "w") as fh:
        for box in boxes:
            x, y, w, h = box.as_corner()
            fh.write(f"{x:.4f},{y:.4f},{w:.4f},{h:.4f}\n")


def save_sequence(directory, frames: list[Frame], boxes: list[BoundingBox]) -> None:
    os.makedirs(directory, exist_ok=True)
    for frame in frames:
        write_ppm(os.path.join(directory, f"{frame.index:06d}.ppm"), frame.pixels)
    write_rect_file(os.path.join(directory, GROUNDTRUTH_FILE), boxes)


def load_sequence(directory, loader=read_netpbm) -> tuple[list[Frame], list[BoundingBox]]:
    """Read numbered frames plus ground truth; ``loader`` may be swapped
    for any callable returning (3, H, W) or (H, W) arrays in [0, 1]."""
    names = sorted(n for n in os.listdir(directory)
                   if n.lower().endswith((".ppm", ".pgm")))
    if not names:
        raise ValueError(f"no PPM/PGM frames found in {directory}")
    frames = []
    for i, name in enumerate(names):
        pixels = loader(os.path.join(directory, name))
        if pixels.ndim == 2:
            pixels = np.stack([pixels] * 3)
        frames.append(Frame(pixels=pixels, index=i))
    gt_path = os.path.join(directory, GROUNDTRUTH_FILE)
    boxes = read_rect_file(gt_path) if os.path.exists(gt_path) else []
    return frames, boxes
