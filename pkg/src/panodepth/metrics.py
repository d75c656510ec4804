"""Depth error statistics and the evaluation protocol."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateCoverageError, InvalidInputError
from .losses import align_scale_shift


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rms: float
    rms_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self):
        return asdict(self)

    def lines(self):
        return [f"{k}={v:.10g}" for k, v in self.as_dict().items()]


def valid_mask(gt):
    gt = np.asarray(gt, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.isfinite(gt) & (gt > 0)


def compute_metrics(pred, gt, mask=None) -> MetricsReport:
    """Standard depth metrics over ``mask`` (default: finite, positive gt).

    Pixels where ``pred <= 0`` are left out of rms_log and count as delta
    failures.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    m = valid_mask(gt) if mask is None else (np.asarray(mask, dtype=bool) & valid_mask(gt))
    if not m.any():
        raise DegenerateCoverageError("no valid ground-truth pixels")
    p, g = pred[m], gt[m]
    diff = p - g
    abs_rel = np.mean(np.abs(diff) / g)
    sq_rel = np.mean(diff * diff / g)
    rms = np.sqrt(np.mean(diff * diff))
    pos = p > 0
    rms_log = np.sqrt(np.mean((np.log(p[pos]) - np.log(g[pos])) ** 2)) if pos.any() else np.inf
    ratio = np.full(p.shape, np.inf)
    ratio[pos] = np.maximum(p[pos] / g[pos], g[pos] / p[pos])
    deltas = [float(np.mean(ratio < 1.25 ** k)) for k in (1, 2, 3)]
    return MetricsReport(float(abs_rel), float(sq_rel), float(rms), float(rms_log), *deltas)


def middle_rows(height):
    """Row slice keeping the middle half (rows H/4 .. 3H/4 - 1)."""
    q = height // 4
    return slice(q, height - q)


def eval_protocol(pred, gt) -> MetricsReport:
    """Align ``pred`` to ``gt`` by scale and shift, keep the middle half of
    the rows, then compute metrics on finite positive ground truth."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim == 3 and pred.shape[0] == 1:
        pred, gt = pred[0], gt[0]
    if pred.ndim != 2:
        raise InvalidInputError(f"expected H x W depth maps, got {pred.shape}")
    m = valid_mask(gt)
    if not m.any():
        raise DegenerateCoverageError("no valid ground-truth pixels")
    safe_gt = np.where(m, gt, 0.0)
    aligned = align_scale_shift(pred, safe_gt, m).depth.data
    rows = middle_rows(pred.shape[0])
    return compute_metrics(aligned[rows], gt[rows], m[rows])
