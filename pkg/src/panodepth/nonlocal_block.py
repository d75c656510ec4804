"""Non-local fusion block: embedded-Gaussian self-attention with a residual.

For a C x H x W feature map with positions i, j::

    a_ij = softmax_j( (W_theta F_i) . (W_phi F_j) )
    N_i  = F_i + W_z sum_j a_ij W_g F_j

W_theta, W_phi, W_g are (C/2 x C) 1x1 convolutions and W_z is (C x C/2),
zero-initialized so a fresh block is the identity.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError

_MAGIC = b"NLFB"
_VERSION = 1
_NAMES = ("w_theta", "w_phi", "w_g", "w_z")


@dataclass
class NonLocalWeights:
    w_theta: object
    w_phi: object
    w_g: object
    w_z: object

    def __post_init__(self):
        for name in _NAMES:
            setattr(self, name, ad.as_tensor(getattr(self, name)))
        c = self.channels
        half = self.w_theta.shape[0]
        if c % 2 or 2 * half != c:
            raise InvalidInputError(f"projections must map C={c} channels to C/2, got {half}")
        expected = {"w_theta": (half, c), "w_phi": (half, c), "w_g": (half, c), "w_z": (c, half)}
        for name, shape in expected.items():
            t = getattr(self, name)
            if t.shape != shape:
                raise InvalidInputError(f"{name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t.data)):
                raise InvalidInputError(f"{name} contains non-finite entries")

    @property
    def channels(self):
        return self.w_theta.shape[1]

    def tensors(self):
        return [getattr(self, n) for n in _NAMES]

    @classmethod
    def init(cls, channels, rng=None, scale=None, zero_out=True):
        """Random projections; ``w_z`` is zero unless ``zero_out`` is False."""
        if channels < 2 or channels % 2:
            raise InvalidInputError(f"channel count must be even and >= 2, got {channels}")
        rng = np.random.default_rng(rng)
        half = channels // 2
        scale = scale if scale is not None else 1.0 / np.sqrt(channels)
        w = [rng.normal(scale=scale, size=(half, channels)) for _ in range(3)]
        w_z = np.zeros((channels, half)) if zero_out else rng.normal(scale=scale, size=(channels, half))
        return cls(*w, w_z)


def _flatten(features, weights):
    f = ad.as_tensor(features)
    if f.ndim != 3:
        raise InvalidInputError(f"features must be C x H x W, got {f.shape}")
    if f.shape[0] != weights.channels:
        raise InvalidInputError(
            f"feature map has {f.shape[0]} channels but weights expect {weights.channels}"
        )
    c, h, w = f.shape
    return f.reshape((c, h * w))


def attention_row_stochastic(features, weights: NonLocalWeights):
    """Normalized n x n affinity matrix (rows sum to one)."""
    flat = _flatten(features, weights)
    theta = weights.w_theta @ flat
    phi = weights.w_phi @ flat
    return ad.softmax_rows(theta.T @ phi)


def non_local_forward(features, weights: NonLocalWeights):
    flat = _flatten(features, weights)
    attn = attention_row_stochastic(features, weights)
    g = weights.w_g @ flat
    aggregated = g @ attn.T  # (C/2) x n
    out = flat + weights.w_z @ aggregated
    return out.reshape(ad.as_tensor(features).shape)


def save_weights(path, weights: NonLocalWeights):
    """Raw little-endian float64 row-major matrices behind a small header:
    magic, version, C, then (rows, cols) before each matrix."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<II", _VERSION, weights.channels))
        for t in weights.tensors():
            rows, cols = t.shape
            f.write(struct.pack("<II", rows, cols))
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return path


def load_weights(path) -> NonLocalWeights:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise InvalidInputError(f"{path}: not a non-local weight file")
    version, channels = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise InvalidInputError(f"{path}: unsupported version {version}")
    offset = 12
    mats = []
    for name in _NAMES:
        rows, cols = struct.unpack_from("<II", blob, offset)
        offset += 8
        nbytes = 8 * rows * cols
        if offset + nbytes > len(blob):
            raise InvalidInputError(f"{path}: truncated while reading {name}")
        mats.append(np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
                    .reshape(rows, cols).astype(np.float64))
        offset += nbytes
    weights = NonLocalWeights(*mats)
    if weights.channels != channels:
        raise InvalidInputError(f"{path}: header says C={channels}, matrices say {weights.channels}")
    return weights
