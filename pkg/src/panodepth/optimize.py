"""Per-pixel depth and motion recovery from a frame pair by gradient descent.

Depth for both frames is a free latent map (``rho = exp(u)`` by default)
and the forward / backward motions are separate 4-vectors, so the pose
consistency term constrains two independent estimates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DegenerateCoverageError, DivergenceError, InvalidInputError, NonFiniteError
from .losses import (AlignedDepth, LossWeights, align_scale_shift, depth_consistency, gradient_loss,
                     image_consistency, pixel_loss, pose_consistency, total_loss)
from .warp import CameraMotion, coverage, synthesize_view

FLOWS = ("self-only", "supervised-only", "joint-random")
CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class OptimConfig:
    iterations: int = 2000
    lr: float = 0.01
    betas: tuple = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    log_depth: bool = True
    crop_deg: float = 45.0
    flow: str = "self-only"
    # probability of a self-supervised step under joint-random
    p_self: float = 0.5
    seed: int = 0
    # None: 1.0 for self-only, else 0.5 (inside the robust-adjust clamp range,
    # where supervised steps have a nonzero gradient)
    init_depth: float | None = None
    init_motion_scale: float = 1e-3

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise InvalidInputError("iterations must be a positive integer")
        if not self.lr > 0:
            raise InvalidInputError("learning rate must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise InvalidInputError(f"moment decays must lie in [0, 1), got {self.betas}")
        if self.flow not in FLOWS:
            raise InvalidInputError(f"unknown flow {self.flow!r}; choose from {FLOWS}")
        if not 0 <= self.crop_deg < 90:
            raise InvalidInputError("crop must be in [0, 90) degrees")
        if not 0 <= self.p_self <= 1:
            raise InvalidInputError("p_self must be a probability")
        if self.init_depth is not None and not self.init_depth > 0:
            raise InvalidInputError("initial depth must be positive")

    @property
    def start_depth(self) -> float:
        if self.init_depth is not None:
            return float(self.init_depth)
        return 1.0 if self.flow == "self-only" else 0.5

    def updated(self, **overrides):
        return replace(self, **overrides)


class Adam:
    """Adaptive-moment updates; parameters without a gradient this step
    are left untouched (their moments are not advanced either)."""

    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.t[i] += 1
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            m_hat = self.m[i] / (1 - self.b1 ** self.t[i])
            v_hat = self.v[i] / (1 - self.b2 ** self.t[i])
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def crop_rows(height, degrees):
    """Row slice left after removing ``degrees`` of colatitude at each pole."""
    if not 0 <= 2 * degrees < 180:
        raise InvalidInputError(f"cannot crop {degrees} degrees from each pole")
    k = int(round(height * degrees / 180.0))
    if height - 2 * k <= 0:
        raise DegenerateCoverageError(f"cropping {degrees} degrees leaves no rows of {height}")
    return slice(k, height - k)


def crop_fovy(array, degrees):
    """Drop the rows within ``degrees`` of either pole (last two axes are H x W)."""
    rows = crop_rows(np.shape(array.data if isinstance(array, Tensor) else array)[-2], degrees)
    return array[..., rows, :]


def robust_adjust(pred, gt):
    """Normalize ``gt`` by its maximum and clamp ``pred`` into (0, 1).

    The open interval is realized as [1e-6, 1 - 1e-6]. Returns
    ``(pred_clamped, gt_normalized)``; the first keeps its gradient.
    """
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=float)
    gmax = np.nanmax(np.where(np.isfinite(g), g, -np.inf))
    if not gmax > 0:
        raise InvalidInputError("ground truth maximum must be positive")
    return ad.clamp(pred, CLAMP_EPS, 1.0 - CLAMP_EPS), g / gmax


def erode(mask):
    """Pixels whose 3x3 neighborhood is entirely inside ``mask`` (columns wrap)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, ((1, 1), (0, 0)), mode="edge")
    out = np.ones_like(m)
    for dy in (0, 1, 2):
        rows = padded[dy:dy + m.shape[0]]
        for dx in (-1, 0, 1):
            out &= np.roll(rows, dx, axis=1)
    return out


@dataclass
class PairProblem:
    """Frames, optional supervision and the crop, shared by every step."""

    v: np.ndarray
    v_prime: np.ndarray
    gt: np.ndarray | None
    rows: slice
    weights: LossWeights

    def self_losses(self, d, d_prime, m_fwd, m_bwd):
        """L_I, L_D, L_P on the cropped band."""
        r = self.rows
        vps, dps, w_fwd = synthesize_view(self.v, d, m_fwd)
        vs, ds, w_bwd = synthesize_view(self.v_prime, d_prime, m_bwd)
        mask_f = erode(coverage(w_fwd))[r]
        mask_b = erode(coverage(w_bwd))[r]
        if not (mask_f.any() and mask_b.any()):
            raise DegenerateCoverageError("no synthesized pixels left after cropping")
        l_i = image_consistency(self.v[:, r], vs[:, r], self.v_prime[:, r], vps[:, r],
                                mask_b, mask_f, alpha=self.weights.alpha)
        l_d = depth_consistency(d[r], ds[0, r], d_prime[r], dps[0, r], mask_b, mask_f)
        l_p = pose_consistency(m_fwd, m_bwd)
        return {"L_I": l_i, "L_D": l_d, "L_P": l_p}

    def _supervised_inputs(self, d):
        if self.gt is None:
            raise InvalidInputError("supervised losses need ground-truth depth")
        r = self.rows
        valid_gt = np.isfinite(self.gt) & (self.gt > 0)
        pred, gt_n = robust_adjust(d, np.where(valid_gt, self.gt, 0.0))
        return pred[r], gt_n[r], valid_gt[r]

    def fit_alignment(self, d):
        """(s, t) the supervised flow would use for depth ``d``."""
        pred, gt_n, valid = self._supervised_inputs(d)
        aligned = align_scale_shift(pred, gt_n, valid)
        return aligned.s, aligned.t

    def supervised_losses(self, d, alignment=None):
        """L_pix, L_grad after robust adjustment and scale/shift alignment.

        ``alignment`` pins (s, t) instead of refitting them; finite
        differences need this because the fit is a constant to backprop.
        """
        pred, gt_n, valid = self._supervised_inputs(d)
        if alignment is None:
            aligned = align_scale_shift(pred, gt_n, valid)
        else:
            s, t = alignment
            aligned = AlignedDepth(s, t, pred * s + t)
        return {"L_pix": pixel_loss(aligned, gt_n, valid),
                "L_grad": gradient_loss(aligned, gt_n, valid)}


@dataclass
class OptimResult:
    depth: np.ndarray
    depth_prime: np.ndarray
    motion_fwd: CameraMotion
    motion_bwd: CameraMotion
    trace: list


def _realize(u, log_depth):
    return ad.exp(u) if log_depth else u


def optimize_pair(v, v_prime, config: OptimConfig | None = None, gt_depth=None,
                  init=None, callback=None) -> OptimResult:
    """Fit depth for both frames and both directed motions.

    ``init`` may hold ``depth``, ``depth_prime``, ``motion_fwd`` and
    ``motion_bwd`` starting values. ``callback(iteration, record)`` is
    called after every step.
    """
    config = config or OptimConfig()
    v = np.asarray(v, dtype=float)
    v_prime = np.asarray(v_prime, dtype=float)
    if v.shape != v_prime.shape or v.ndim != 3:
        raise InvalidInputError(f"frames must share a C x H x W shape, got {v.shape}, {v_prime.shape}")
    h, w = v.shape[1:]
    if config.flow != "self-only":
        if gt_depth is None:
            raise InvalidInputError(f"flow {config.flow!r} needs ground-truth depth")
        gt_depth = np.asarray(gt_depth, dtype=float).reshape(h, w)
    else:
        gt_depth = None  # never consulted by self-supervised steps
    problem = PairProblem(v, v_prime, gt_depth, crop_rows(h, config.crop_deg), config.weights)

    rng = np.random.default_rng(config.seed)
    init = init or {}

    def latent(key):
        d0 = np.asarray(init.get(key, np.full((h, w), config.start_depth)), dtype=float).reshape(h, w)
        return Tensor(np.log(d0) if config.log_depth else d0.copy(), requires_grad=True)

    def motion(key, sign):
        if key in init:
            m0 = CameraMotion.from_array(init[key]).as_array() if not isinstance(init[key], CameraMotion) \
                else init[key].as_array()
        else:
            m0 = sign * config.init_motion_scale * rng.standard_normal(4)
        return Tensor(m0, requires_grad=True)

    u, u_prime = latent("depth"), latent("depth_prime")
    m_fwd, m_bwd = motion("motion_fwd", 1.0), motion("motion_bwd", -1.0)
    opt = Adam([u, u_prime, m_fwd, m_bwd], lr=config.lr, betas=config.betas)
    trace = []
    for it in range(config.iterations):
        if config.flow == "joint-random":
            flow = "self" if rng.random() < config.p_self else "supervised"
        else:
            flow = "self" if config.flow == "self-only" else "supervised"
        opt.zero_grad()
        try:
            with Tape() as tape:
                d = _realize(u, config.log_depth)
                if flow == "self":
                    d_prime = _realize(u_prime, config.log_depth)
                    parts = problem.self_losses(d, d_prime, m_fwd, m_bwd)
                else:
                    parts = problem.supervised_losses(d)
                loss = total_loss(weights=config.weights, **parts)
        except (NonFiniteError, InvalidInputError) as exc:
            raise DivergenceError(f"iteration {it}: {exc}", trace) from exc
        record = {"iteration": it, "flow": flow, "total": loss.item()}
        record.update({k: val.item() for k, val in parts.items()})
        trace.append(record)
        if not np.isfinite(record["total"]):
            raise DivergenceError(f"iteration {it}: non-finite loss", trace)
        tape.backward(loss)
        opt.step()
        if callback is not None:
            callback(it, record)

    d = _realize(u, config.log_depth).data
    dp = _realize(u_prime, config.log_depth).data
    return OptimResult(d.copy(), dp.copy(), CameraMotion.from_array(m_fwd.data),
                       CameraMotion.from_array(m_bwd.data), trace)


def cropped_abs_rel(depth, gt, degrees=45.0):
    """AbsRel after scale/shift alignment on the cropped band."""
    depth = np.asarray(depth, dtype=float)
    gt = np.asarray(gt, dtype=float).reshape(depth.shape)
    r = crop_rows(depth.shape[0], degrees)
    p, g = depth[r], gt[r]
    valid = np.isfinite(g) & (g > 0)
    aligned = align_scale_shift(p, np.where(valid, g, 0.0), valid).depth.data
    return float(np.mean(np.abs(aligned[valid] - g[valid]) / g[valid]))
