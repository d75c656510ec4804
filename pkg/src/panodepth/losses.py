"""Self-supervised consistency losses and supervised depth losses.

Every loss accepts numpy arrays or :class:`~panodepth.autodiff.Tensor` and
returns a scalar Tensor, so the same code serves evaluation and training.
Absolute values use the smoothed ``autodiff.abs``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateCoverageError, InvalidInputError
from .warp import motion_tensor

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    lambda_I: float = 0.3
    lambda_D: float = 0.15
    # L1 share of the photometric term; the rest goes to SSIM
    alpha: float = 0.15

    def __post_init__(self):
        if not (self.lambda_I >= 0 and self.lambda_D >= 0):
            raise InvalidInputError("loss weights must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class AlignedDepth:
    s: float
    t: float
    depth: Tensor
    degenerate: bool = False


def _mask2d(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(ad.as_tensor(mask).data if isinstance(mask, Tensor) else mask).astype(bool)
    m = m.reshape(m.shape[-2:])
    if m.shape != tuple(shape):
        raise InvalidInputError(f"mask {m.shape} does not match map {tuple(shape)}")
    return m


def _as_chw(x):
    x = ad.as_tensor(x)
    if x.ndim == 2:
        return x.reshape((1,) + x.shape)
    if x.ndim != 3:
        raise InvalidInputError(f"expected H x W or C x H x W, got {x.shape}")
    return x


def masked_mean(x, mask, allow_empty=False):
    """Mean of C x H x W ``x`` over channels and the pixels where ``mask``."""
    x = _as_chw(x)
    m = _mask2d(mask, x.shape[1:])
    count = int(m.sum()) * x.shape[0]
    if count == 0:
        if allow_empty:
            return Tensor(0.0)
        raise DegenerateCoverageError("no valid pixels to average over")
    return (x * m).sum() / count


def _same_shape(name, *xs):
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise InvalidInputError(f"{name}: shape mismatch {sorted(shapes)}")


def box3(x):
    """3x3 mean filter; columns wrap (panorama seam), rows repeat the edge."""
    x = _as_chw(x)
    _, h, w = x.shape
    rows = np.clip(np.arange(-1, h + 1), 0, h - 1)
    cols = np.arange(-1, w + 1) % w
    p = ad.take(ad.take(x, rows, 1), cols, 2)
    v = p[:, 0:h] + p[:, 1:h + 1] + p[:, 2:h + 2]
    return (v[:, :, 0:w] + v[:, :, 1:w + 1] + v[:, :, 2:w + 2]) / 9.0


def ssim(a, b):
    """Per-pixel SSIM (C x H x W) from 3x3 mean-filter statistics."""
    a, b = _as_chw(a), _as_chw(b)
    _same_shape("ssim", a, b)
    c = a.shape[0]
    stats = box3(ad.stack([a, b, a * a, b * b, a * b]).reshape((5 * c,) + a.shape[1:]))
    mu_a, mu_b = stats[0:c], stats[c:2 * c]
    var_a = stats[2 * c:3 * c] - ad.square(mu_a)
    var_b = stats[3 * c:4 * c] - ad.square(mu_b)
    cov = stats[4 * c:5 * c] - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (ad.square(mu_a) + ad.square(mu_b) + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def image_consistency(v, v_syn, v_prime, v_prime_syn, mask=None, mask_prime=None, alpha=0.15):
    """Photometric L1 + SSIM consistency in both directions.

    ``mask`` selects the pixels where ``v_syn`` is defined, ``mask_prime``
    those of ``v_prime_syn`` (defaults to ``mask``).
    """
    v, v_syn, v_prime, v_prime_syn = (_as_chw(x) for x in (v, v_syn, v_prime, v_prime_syn))
    _same_shape("image_consistency", v, v_syn, v_prime, v_prime_syn)
    shape = v.shape[1:]
    m = _mask2d(mask, shape)
    mp = _mask2d(mask_prime, shape) if mask_prime is not None else m
    l1 = masked_mean(ad.abs(v_prime - v_prime_syn), mp) + masked_mean(ad.abs(v - v_syn), m)
    structural = (masked_mean(ad.abs(1.0 - ssim(v, v_syn)), m)
                  + masked_mean(ad.abs(1.0 - ssim(v_prime, v_prime_syn)), mp))
    return alpha * l1 + (1.0 - alpha) * structural


def depth_consistency(d, d_syn, d_prime, d_prime_syn, mask=None, mask_prime=None):
    d, d_syn, d_prime, d_prime_syn = (_as_chw(x) for x in (d, d_syn, d_prime, d_prime_syn))
    _same_shape("depth_consistency", d, d_syn, d_prime, d_prime_syn)
    m = _mask2d(mask, d.shape[1:])
    mp = _mask2d(mask_prime, d.shape[1:]) if mask_prime is not None else m
    return masked_mean(ad.abs(d_prime - d_prime_syn), mp) + masked_mean(ad.abs(d - d_syn), m)


def pose_consistency(p_fwd, p_bwd):
    """Mean over the four motion components of |p_fwd + p_bwd|.

    Forward and backward estimates should cancel, so their sum is penalized.
    """
    return ad.abs(motion_tensor(p_fwd) + motion_tensor(p_bwd)).mean()


def align_scale_shift(pred, gt, valid_mask=None) -> AlignedDepth:
    """Least-squares scale and shift mapping ``pred`` onto ``gt``.

    ``s`` and ``t`` are plain floats (no gradient flows through the fit);
    the returned ``depth`` stays differentiable w.r.t. ``pred``.
    """
    pred_t = ad.as_tensor(pred)
    p = pred_t.data
    g = np.asarray(ad.as_tensor(gt).data, dtype=float)
    if p.shape != g.shape:
        raise InvalidInputError(f"prediction {p.shape} and ground truth {g.shape} differ")
    m = _mask2d(valid_mask, p.shape[-2:])
    m = np.broadcast_to(m, p.shape)
    pv, gv = p[m], g[m]
    if pv.size == 0:
        raise DegenerateCoverageError("alignment needs at least one valid pixel")
    # normal equations in centered form: same solution, no cancellation when
    # pred carries a large offset
    n = pv.size
    pc = pv - pv.mean()
    spp = float((pc * pc).sum())
    degenerate = n < 2 or spp <= 1e-12 * n * max(float(pv.mean()) ** 2, 1e-300)
    if degenerate:
        s, t = 1.0, float(np.mean(gv - pv))
    else:
        s = float((pc * (gv - gv.mean())).sum() / spp)
        t = float(gv.mean() - s * pv.mean())
    return AlignedDepth(s, t, pred_t * s + t, degenerate)


def pixel_loss(aligned, gt, mask=None):
    d = aligned.depth if isinstance(aligned, AlignedDepth) else ad.as_tensor(aligned)
    d, g = _as_chw(d), _as_chw(gt)
    _same_shape("pixel_loss", d, g)
    return masked_mean(ad.abs(d - g), mask)


def _pool_mask(m):
    h, w = m.shape
    return m.reshape(h // 2, 2, w // 2, 2).all(axis=(1, 3))


def gradient_loss(aligned, gt, mask=None, scales=4):
    """Multi-scale gradient matching loss.

    At each of ``scales`` resolutions (2x average pooling between them) the
    forward differences of the residual are penalized along x and y; pixel
    pairs touching an invalid pixel are skipped. Scale terms are summed.
    """
    d = aligned.depth if isinstance(aligned, AlignedDepth) else ad.as_tensor(aligned)
    d, g = _as_chw(d), _as_chw(gt)
    _same_shape("gradient_loss", d, g)
    h, w = d.shape[1:]
    div = 2 ** (scales - 1)
    if h % div or w % div:
        raise InvalidInputError(f"gradient_loss needs H, W divisible by {div}, got {h}x{w}")
    m = _mask2d(mask, (h, w))
    r = d - g
    total = Tensor(0.0)
    for k in range(scales):
        if k:
            r = ad.avg_pool2(r)
            m = _pool_mask(m)
        mx = m[:, 1:] & m[:, :-1]
        my = m[1:, :] & m[:-1, :]
        gx = ad.abs(r[:, :, 1:] - r[:, :, :-1])
        gy = ad.abs(r[:, 1:, :] - r[:, :-1, :])
        total = total + masked_mean(gx, mx, allow_empty=True) + masked_mean(gy, my, allow_empty=True)
    return total


def total_loss(L_I=None, L_D=None, L_P=None, L_pix=None, L_grad=None, weights=None):
    """lambda_I L_I + lambda_D L_D + L_P + L_pix + L_grad; missing terms count as 0."""
    weights = weights or LossWeights()
    total = Tensor(0.0)
    for value, scale in ((L_I, weights.lambda_I), (L_D, weights.lambda_D),
                         (L_P, 1.0), (L_pix, 1.0), (L_grad, 1.0)):
        if value is not None:
            total = total + ad.as_tensor(value) * scale
    return total
