"""File formats: PFM float maps, 8-bit PNG frames, JSON motions."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError


def write_pfm(path, array):
    """Write an H x W (or 3 x H x W) float map as little-endian PFM (float32)."""
    path = Path(path)
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim == 2:
        header, rows = b"Pf", a
    elif a.ndim == 3 and a.shape[0] == 3:
        header, rows = b"PF", np.moveaxis(a, 0, -1)
    else:
        raise InvalidInputError(f"PFM holds 1- or 3-channel maps, got shape {a.shape}")
    h, w = rows.shape[:2]
    # PFM stores rows bottom to top
    data = np.ascontiguousarray(rows[::-1], dtype="<f4")
    with open(path, "wb") as f:
        f.write(header + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(data.tobytes())
    return path


def read_pfm(path):
    """Read a PFM file; returns float32 H x W (or 3 x H x W)."""
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise InvalidInputError(f"{path}: not a PFM file")
        dims = f.readline().split()
        scale = float(f.readline().strip())
        w, h = int(dims[0]), int(dims[1])
        channels = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(f.read(4 * count), dtype=dtype)
    if data.size != count:
        raise InvalidInputError(f"{path}: truncated PFM payload")
    data = data.reshape(h, w, channels)[::-1].astype(np.float32)
    if channels == 1:
        return np.ascontiguousarray(data[..., 0])
    return np.ascontiguousarray(np.moveaxis(data, -1, 0))


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
    """Write a 3 x H x W (or H x W) image with values in [0, 1]."""
    path = Path(path)
    a = to_uint8(image)
    if a.ndim == 3:
        a = np.moveaxis(a, 0, -1)
    Image.fromarray(a).save(path, format="PNG")
    return path


def read_png(path):
    """Read a PNG as float 3 x H x W in [0, 1]."""
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(a, -1, 0).copy()


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc


def write_jsonl(path, records):
    path = Path(path)
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


_COLORMAP = np.array([
    [0.001, 0.000, 0.014],
    [0.232, 0.060, 0.437],
    [0.550, 0.161, 0.506],
    [0.868, 0.288, 0.409],
    [0.994, 0.624, 0.427],
    [0.987, 0.991, 0.750],
])


def colorize_inverse_depth(depth):
    """Map inverse depth to a dark-to-bright palette; returns 3 x H x W."""
    d = np.asarray(depth, dtype=float).reshape(np.shape(depth)[-2:])
    inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
    lo, hi = inv[d > 0].min(initial=np.inf), inv.max(initial=0.0)
    t = (inv - lo) / (hi - lo) if hi > lo else np.zeros_like(inv)
    pos = np.clip(t, 0, 1) * (len(_COLORMAP) - 1)
    i0 = np.minimum(np.floor(pos).astype(int), len(_COLORMAP) - 2)
    f = (pos - i0)[..., None]
    rgb = _COLORMAP[i0] * (1 - f) + _COLORMAP[i0 + 1] * f
    return np.moveaxis(rgb, -1, 0)

