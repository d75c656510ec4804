"""Pixel / spherical / Cartesian conventions for equirectangular images.

theta is longitude measured from +x toward +y, phi is colatitude from +z.
Pixel (x, y) has its center at theta = (x + 0.5) 2pi / W, phi = (y + 0.5) pi / H,
so no grid sample sits on a pole or on the theta seam.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AspectRatioError, InvalidInputError, SingularPointError

TWO_PI = 2.0 * np.pi


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite coordinate value")


@dataclass(frozen=True)
class SphericalPoint:
    theta: np.ndarray | float
    phi: np.ndarray | float
    rho: np.ndarray | float


@dataclass(frozen=True)
class CartesianPoint:
    x: np.ndarray | float
    y: np.ndarray | float
    z: np.ndarray | float

    def norm(self):
        return np.sqrt(np.square(self.x) + np.square(self.y) + np.square(self.z))


@dataclass(frozen=True)
class PixelGrid:
    height: int
    width: int | None = None

    def __post_init__(self):
        if self.width is None:
            object.__setattr__(self, "width", 2 * self.height)
        if int(self.height) != self.height or self.height < 2:
            raise InvalidInputError(f"grid height must be an integer >= 2, got {self.height}")
        if self.width != 2 * self.height:
            raise AspectRatioError(
                f"equirectangular grid needs W = 2H, got H={self.height}, W={self.width}"
            )

    @property
    def shape(self):
        return (self.height, self.width)

    @classmethod
    def like(cls, array):
        """Grid matching the trailing two dimensions of ``array``."""
        h, w = np.shape(array)[-2:]
        return cls(h, w)

    def theta_to_x(self, theta):
        """Continuous column coordinate (pixel centers at integers)."""
        return theta * (self.width / TWO_PI) - 0.5

    def phi_to_y(self, phi):
        return phi * (self.height / np.pi) - 0.5


def sph_to_cart(p: SphericalPoint) -> CartesianPoint:
    _check_finite(p.theta, p.phi, p.rho)
    sin_phi = np.sin(p.phi)
    return CartesianPoint(
        p.rho * sin_phi * np.cos(p.theta),
        p.rho * sin_phi * np.sin(p.theta),
        p.rho * np.cos(p.phi),
    )


def cart_to_sph(c: CartesianPoint) -> SphericalPoint:
    """Inverse of :func:`sph_to_cart`.

    Points on the z axis get theta = 0. The origin raises
    :class:`SingularPointError`.
    """
    x, y, z = (np.asarray(v, dtype=float) for v in (c.x, c.y, c.z))
    _check_finite(x, y, z)
    horiz = np.hypot(x, y)
    rho = np.hypot(horiz, z)
    if np.any(rho == 0.0):
        raise SingularPointError("cart_to_sph is undefined at the origin")
    theta = np.mod(np.arctan2(y, x), TWO_PI)
    # mod can round a tiny negative angle up to exactly 2pi
    theta = np.where(theta >= TWO_PI, 0.0, theta)
    phi = np.arctan2(horiz, z)
    if theta.ndim == 0:
        return SphericalPoint(float(theta), float(phi), float(rho))
    return SphericalPoint(theta, phi, rho)


def grid_angles(grid: PixelGrid) -> np.ndarray:
    """2 x H x W array holding (theta, phi) at every pixel center."""
    h, w = grid.shape
    theta = (np.arange(w) + 0.5) * (TWO_PI / w)
    phi = (np.arange(h) + 0.5) * (np.pi / h)
    out = np.empty((2, h, w))
    out[0] = theta[None, :]
    out[1] = phi[:, None]
    return out


def ray_directions(grid: PixelGrid) -> np.ndarray:
    """3 x H x W unit ray directions for every pixel center."""
    theta, phi = grid_angles(grid)
    c = sph_to_cart(SphericalPoint(theta, phi, 1.0))
    return np.stack([c.x, c.y, c.z])


def yaw_rotate(p: SphericalPoint, dr_x: float) -> SphericalPoint:
    """Express ``p`` in a frame yawed by ``dr_x`` about +z."""
    _check_finite(p.theta, dr_x)
    theta = np.mod(np.asarray(p.theta, dtype=float) - dr_x, TWO_PI)
    theta = np.where(theta >= TWO_PI, 0.0, theta)
    if theta.ndim == 0:
        theta = float(theta)
    return SphericalPoint(theta, p.phi, p.rho)
