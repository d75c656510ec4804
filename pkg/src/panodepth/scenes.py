"""Analytic equirectangular renderer for textured box rooms.

The room is the axis-aligned box [-a_x, a_x] x [-a_y, a_y] x [-a_z, a_z].
A camera strictly inside sees every wall point (the box is convex), so the
rendered depth is exact and there is no occlusion.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import PixelGrid, ray_directions
from .io import write_pfm, write_png
from .warp import CameraMotion

FACES = ("+x", "-x", "+y", "-y", "+z", "-z")
TEXTURES = ("smooth", "checker", "uniform")


@dataclass(frozen=True)
class SceneSpec:
    """Box room description.

    ``texture`` selects the wall pattern: ``smooth`` (seeded sum of 3-D
    sinusoids, continuous across room edges), ``checker`` (3-D checkerboard
    with cell size ``period``) or ``uniform`` (one flat color per face).
    """

    half_extents: tuple = (1.0, 1.0, 1.0)
    texture: str = "smooth"
    period: float = 0.8
    seed: int = 0
    n_waves: int = 8

    def __post_init__(self):
        ext = tuple(float(a) for a in self.half_extents)
        object.__setattr__(self, "half_extents", ext)
        if len(ext) != 3 or min(ext) <= 0 or not np.all(np.isfinite(ext)):
            raise InvalidInputError(f"half extents must be three positive numbers, got {ext}")
        if self.texture not in TEXTURES:
            raise InvalidInputError(f"unknown texture {self.texture!r}; choose from {TEXTURES}")
        if not self.period > 0:
            raise InvalidInputError("texture period must be positive")

    @property
    def _waves(self):
        rng = np.random.default_rng(self.seed)
        k = self.n_waves
        dirs = rng.normal(size=(3, k, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        wavelength = self.period * rng.uniform(1.0, 2.0, size=(3, k))
        freqs = dirs * (2 * np.pi / wavelength)[..., None]
        amps = rng.uniform(0.5, 1.0, size=(3, k))
        amps *= 0.45 / amps.sum(axis=1, keepdims=True)
        phases = rng.uniform(0, 2 * np.pi, size=(3, k))
        face_colors = rng.uniform(0.1, 0.9, size=(6, 3))
        return freqs, amps, phases, face_colors

    def color_at(self, points, faces):
        """RGB (3 x N) for wall points (3 x N) lying on ``faces`` (N indices)."""
        points = np.asarray(points, dtype=float)
        freqs, amps, phases, face_colors = self._waves
        if self.texture == "uniform":
            return face_colors[np.asarray(faces)].T.copy()
        if self.texture == "checker":
            cells = np.floor(points / self.period).astype(np.int64).sum(axis=0)
            dark = (cells % 2).astype(float)
            return np.vstack([0.2 + 0.6 * dark] * 3)
        # (3 channels, k waves, N points)
        arg = np.einsum("ckd,dn->ckn", freqs, points) + phases[..., None]
        return 0.5 + np.einsum("ck,ckn->cn", amps, np.sin(arg))

    def face_point(self, face, u, v):
        """Map face coordinates (u, v) in [0, 1]^2 to a 3-D wall point."""
        ax, ay, az = self.half_extents
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        a, b = 2 * u - 1, 2 * v - 1
        sign = 1.0 if face[0] == "+" else -1.0
        axis = face[1]
        if axis == "x":
            return np.stack([np.full_like(a, sign * ax), a * ay, b * az])
        if axis == "y":
            return np.stack([a * ax, np.full_like(a, sign * ay), b * az])
        return np.stack([a * ax, b * ay, np.full_like(a, sign * az)])

    def face_color(self, face, u, v):
        pts = self.face_point(face, u, v)
        flat = pts.reshape(3, -1)
        idx = np.full(flat.shape[1], FACES.index(face))
        return self.color_at(flat, idx).reshape((3,) + np.shape(u))

    def contains(self, position, margin=0.0):
        p = np.asarray(position, dtype=float)
        return bool(np.all(np.abs(p) < np.asarray(self.half_extents) - margin))


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def intersect(scene: SceneSpec, position, dirs):
    """Distance along unit ``dirs`` (3 x N) to the room wall, plus face ids."""
    p = np.asarray(position, dtype=float).reshape(3, 1)
    ext = np.asarray(scene.half_extents).reshape(3, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dirs > 0, (ext - p) / dirs, np.where(dirs < 0, (-ext - p) / dirs, np.inf))
    axis = np.argmin(t, axis=0)
    cols = np.arange(dirs.shape[1])
    dist = t[axis, cols]
    faces = 2 * axis + (dirs[axis, cols] < 0)
    return dist, faces


def render(scene: SceneSpec, position, grid: PixelGrid, yaw=0.0):
    """Render ``(frame 3 x H x W, depth 1 x H x W)`` from inside the room.

    ``yaw`` is the camera heading about +z in world coordinates.
    """
    position = np.asarray(position, dtype=float)
    if position.shape != (3,) or not np.all(np.isfinite(position)):
        raise InvalidInputError(f"camera position must be three finite numbers, got {position}")
    if not scene.contains(position):
        raise InvalidInputError(f"camera position {position.tolist()} is outside the room")
    h, w = grid.shape
    dirs = (_rot_z(yaw) @ ray_directions(grid).reshape(3, -1))
    dist, faces = intersect(scene, position, dirs)
    hits = position[:, None] + dist * dirs
    color = np.clip(scene.color_at(hits, faces), 0.0, 1.0)
    return color.reshape(3, h, w), dist.reshape(1, h, w)


@dataclass
class Trajectory:
    """Camera positions and headings; motions follow from consecutive poses."""

    positions: list
    yaws: list = field(default_factory=list)

    def __post_init__(self):
        self.positions = [np.asarray(p, dtype=float) for p in self.positions]
        if not self.yaws:
            self.yaws = [0.0] * len(self.positions)
        if len(self.yaws) != len(self.positions):
            raise InvalidInputError("one yaw per position is required")

    def __len__(self):
        return len(self.positions)

    def motion(self, k) -> CameraMotion:
        """Motion taking frame ``k`` to frame ``k + 1``."""
        delta = self.positions[k + 1] - self.positions[k]
        dv = _rot_z(-self.yaws[k + 1]) @ delta
        return CameraMotion(tuple(dv), self.yaws[k + 1] - self.yaws[k])

    def motions(self):
        return [self.motion(k) for k in range(len(self) - 1)]

    def validate(self, scene: SceneSpec):
        margin = 0.05 * min(scene.half_extents)
        for p in self.positions:
            if not scene.contains(p, margin):
                raise InvalidInputError(
                    f"trajectory position {p.tolist()} violates the wall margin {margin:g}"
                )


def forward_trajectory(scene: SceneSpec, steps, step=0.2, direction=(1.0, 0.0, 0.0), start=None):
    """Straight-line trajectory of ``steps`` frames, centered on the origin
    unless ``start`` is given. Headings stay at zero."""
    if steps < 1:
        raise InvalidInputError("a trajectory needs at least one frame")
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    if start is None:
        start = -0.5 * (steps - 1) * step * d
    traj = Trajectory([np.asarray(start, dtype=float) + k * step * d for k in range(steps)])
    traj.validate(scene)
    return traj


def generate_pair(scene: SceneSpec, trajectory: Trajectory, grid: PixelGrid, index=0):
    """Frames ``index`` and ``index + 1``: ``(V, V', D, D', motion)``."""
    v, d = render(scene, trajectory.positions[index], grid, trajectory.yaws[index])
    vp, dp = render(scene, trajectory.positions[index + 1], grid, trajectory.yaws[index + 1])
    return v, vp, d, dp, trajectory.motion(index)


def export_dataset(scene: SceneSpec, trajectory: Trajectory, grid: PixelGrid, directory):
    """Write frames (PNG), depths (PFM) and motions (JSON); return the paths."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {directory}: {exc}") from exc
    written = []
    for k in range(len(trajectory)):
        v, d = render(scene, trajectory.positions[k], grid, trajectory.yaws[k])
        written.append(write_png(directory / f"frame_{k:03d}.png", v))
        written.append(write_pfm(directory / f"depth_{k:03d}.pfm", d[0]))
    motions = directory / "motions.json"
    records = [m.to_json() for m in trajectory.motions()]
    try:
        motions.write_text(json.dumps(records, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {motions}: {exc}") from exc
    written.append(motions)
    return written
