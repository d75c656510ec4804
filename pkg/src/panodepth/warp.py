"""Cross-frame reprojection and forward-splatting view synthesis.

A pixel of frame V with colatitude phi, longitude theta and radial depth rho
moves to frame V' as

    X' = rho sin(phi) cos(theta - dr_x) - dv_x
    Y' = rho sin(phi) sin(theta - dr_x) - dv_y
    Z' = rho cos(phi) - dv_z

and (theta', phi', rho') are read back from (X', Y', Z') with quadrant-aware
arctangents. Synthesis scatters source pixels to (theta', phi') with bilinear
weights and normalizes by the accumulated weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError
from .geometry import TWO_PI, PixelGrid, grid_angles

COVERAGE_EPS = 1e-6


@dataclass(frozen=True)
class CameraMotion:
    """Gravity-aligned motion: translation ``dv`` (m) and yaw ``dr_x`` (rad)."""

    dv: tuple = (0.0, 0.0, 0.0)
    dr_x: float = 0.0

    def __post_init__(self):
        dv = tuple(float(v) for v in self.dv)
        if len(dv) != 3:
            raise InvalidInputError(f"dv needs three components, got {len(dv)}")
        object.__setattr__(self, "dv", dv)
        object.__setattr__(self, "dr_x", float(self.dr_x))
        if not np.all(np.isfinite(self.as_array())):
            raise InvalidInputError("camera motion must be finite")

    def __neg__(self):
        return CameraMotion(tuple(-v for v in self.dv), -self.dr_x)

    def as_array(self):
        return np.array([*self.dv, self.dr_x])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(tuple(a[:3]), a[3])

    def inverse(self):
        """Exact inverse motion (differs from negation when both yaw and
        translation are nonzero)."""
        c, s = np.cos(self.dr_x), np.sin(self.dr_x)
        vx, vy, vz = self.dv
        return CameraMotion((-(c * vx - s * vy), -(s * vx + c * vy), -vz), -self.dr_x)

    def to_json(self):
        return {"dv": list(self.dv), "dr_x": self.dr_x}

    @classmethod
    def from_json(cls, record):
        try:
            return cls(tuple(record["dv"]), record["dr_x"])
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed motion record: {record!r}") from exc


@dataclass
class WarpField:
    """Where every source pixel lands in the target frame."""

    target_theta: Tensor
    target_phi: Tensor
    target_rho: Tensor
    valid_mask: np.ndarray
    grid: PixelGrid

    def target_xy(self):
        """Continuous target pixel coordinates (centers at integers)."""
        tx = self.target_theta * (self.grid.width / TWO_PI) - 0.5
        ty = self.target_phi * (self.grid.height / np.pi) - 0.5
        return tx, ty


def motion_tensor(motion) -> Tensor:
    """Four-vector (dv_x, dv_y, dv_z, dr_x) as a Tensor."""
    if isinstance(motion, CameraMotion):
        return Tensor(motion.as_array())
    m = ad.as_tensor(motion)
    if m.shape != (4,):
        raise InvalidInputError(f"motion vector must have shape (4,), got {m.shape}")
    return m


def _depth2d(depth):
    d = ad.as_tensor(depth)
    if d.ndim == 3:
        if d.shape[0] != 1:
            raise InvalidInputError(f"depth map must be 1 x H x W, got {d.shape}")
        d = d.reshape(d.shape[1:])
    if d.ndim != 2:
        raise InvalidInputError(f"depth map must be H x W, got {d.shape}")
    if not np.all(np.isfinite(d.data)) or np.any(d.data <= 0):
        raise InvalidInputError("depth must be strictly positive and finite")
    return d


def transform_points(theta, phi, rho, motion):
    """Move spherical points into the target frame.

    ``motion`` is a 4-vector or a (4, ...) array broadcasting against the
    points. Returns ``(theta', phi', rho', valid)``; the angles and radius are
    Tensors (differentiable in ``rho`` and ``motion``), ``valid`` is False
    where the moved point coincides with the camera center.
    """
    m = ad.as_tensor(motion.as_array() if isinstance(motion, CameraMotion) else motion)
    if m.shape[:1] != (4,):
        raise InvalidInputError(f"motion must have leading dimension 4, got {m.shape}")
    ang = ad.sub(theta, m[3])
    horiz = rho * np.sin(phi)
    x = horiz * ad.cos(ang) - m[0]
    y = horiz * ad.sin(ang) - m[1]
    z = rho * np.cos(phi) - m[2]
    r2 = ad.square(x) + ad.square(y) + ad.square(z)
    valid = r2.data > 1e-24
    if not valid.all():
        # park degenerate points away from the origin; they are masked anyway
        x = x + (~valid)
    h2 = ad.square(x) + ad.square(y)
    t = ad.atan2(y, x)
    t = t + TWO_PI * (t.data < 0)
    p = ad.atan2(ad.sqrt(h2), z)
    rho_t = ad.sqrt(h2 + ad.square(z))
    return t, p, rho_t, valid


def reproject(depth, motion, grid: PixelGrid | None = None) -> WarpField:
    d = _depth2d(depth)
    if grid is None:
        grid = PixelGrid.like(d.data)
    elif grid.shape != d.shape:
        raise InvalidInputError(f"grid {grid.shape} does not match depth {d.shape}")
    theta, phi = grid_angles(grid)
    t, p, rho, valid = transform_points(theta, phi, d, motion_tensor(motion))
    return WarpField(t, p, rho, valid, grid)


def _coverage_normalize(accum, weight):
    covered = weight.data >= COVERAGE_EPS
    return accum / (weight + (~covered)) * covered


def forward_splat(source, field: WarpField):
    """Normalized bilinear splat of ``source`` (C x H x W) through ``field``.

    Returns ``(values, weight)``; ``weight`` is the 1 x H x W accumulated
    splat weight, and pixels below ``COVERAGE_EPS`` are left at zero.
    """
    src = ad.as_tensor(source)
    if src.ndim == 2:
        src = src.reshape((1,) + src.shape)
    if src.ndim != 3 or src.shape[1:] != field.grid.shape:
        raise InvalidInputError(f"source {src.shape} does not match grid {field.grid.shape}")
    tx, ty = field.target_xy()
    valid = field.valid_mask.astype(np.float64)
    accum = ad.bilinear_splat(src * valid, tx, ty)
    weight = ad.bilinear_splat(Tensor(valid[None]), tx, ty)
    return _coverage_normalize(accum, weight), weight


def coverage(weight) -> np.ndarray:
    """Boolean H x W map of pixels that received splat mass."""
    w = ad.as_tensor(weight).data
    return (w.reshape(w.shape[-2:]) >= COVERAGE_EPS)


def synthesize_image(v, d, motion):
    """V'_syn = f_s(V, D, motion); returns ``(image, weight)``.

    The reverse synthesis is ``synthesize_image(v_prime, d_prime, -motion)``.
    """
    field = reproject(d, motion)
    return forward_splat(v, field)


def synthesize_depth(d, motion):
    """Depth seen from the target frame: splats the *transformed* radii."""
    field = reproject(d, motion)
    return forward_splat(field.target_rho, field)


def synthesize_view(v, d, motion):
    """Image and depth synthesis sharing one reprojection.

    Returns ``(image, depth, weight)``.
    """
    field = reproject(d, motion)
    img = ad.as_tensor(v)
    stacked = ad.stack([img[c] for c in range(img.shape[0])] + [field.target_rho])
    out, weight = forward_splat(stacked, field)
    c = img.shape[0]
    return out[:c], out[c:], weight
