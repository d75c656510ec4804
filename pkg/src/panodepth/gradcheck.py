"""Finite-difference check cases for every differentiable op and composite.

Each case builds ``(f, inputs)`` from a random generator; ``f`` is scalar,
contracting the op's output with a fixed random tensor so that arbitrary
upstream gradients are exercised.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import PixelGrid
from .losses import LossWeights, total_loss
from .nonlocal_block import NonLocalWeights, non_local_forward
from .optimize import PairProblem, crop_rows
from .scenes import SceneSpec, forward_trajectory, generate_pair
from .warp import forward_splat, reproject


def _away(rng, shape, points, gap=1e-2, lo=-2.0, hi=2.0):
    """Uniform samples kept at least ``gap`` from every value in ``points``."""
    x = rng.uniform(lo, hi, shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] += 2 * gap * np.sign(x[close] - p + 1e-300)
    return x


def _unary(op, domain=None):
    def build(rng):
        x = domain(rng) if domain else rng.normal(size=(3, 4))
        r = rng.normal(size=x.shape)
        return (lambda a: (op(a) * r).sum()), [x]
    return build


def _binary(op, second=None):
    def build(rng):
        a = rng.normal(size=(3, 4))
        b = second(rng) if second else rng.normal(size=(3, 4))
        r = rng.normal(size=(3, 4))
        return (lambda x, y: (op(x, y) * r).sum()), [a, b]
    return build


def _sampler(op):
    def build(rng):
        values = rng.normal(size=(2, 4, 8))
        tx = rng.uniform(-3.0, 11.0, size=(4, 8))
        ty = rng.uniform(-0.7, 3.7, size=(4, 8))
        r = rng.normal(size=(2, 4, 8))
        return (lambda v, x, y: (op(v, x, y) * r).sum()), [values, tx, ty]
    return build


def _matmul(rng):
    a, b, r = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(3, 5))
    return (lambda x, y: (ad.matmul(x, y) * r).sum()), [a, b]


def _conv(rng):
    w, x, r = rng.normal(size=(3, 4)), rng.normal(size=(4, 2, 3)), rng.normal(size=(3, 2, 3))
    return (lambda a, b: (ad.conv1x1(a, b) * r).sum()), [w, x]


def _pool(rng):
    x, r = rng.normal(size=(2, 4, 6)), rng.normal(size=(2, 2, 3))
    return (lambda a: (ad.avg_pool2(a) * r).sum()), [x]


def _softmax(rng):
    x, r = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    return (lambda a: (ad.softmax_rows(a) * r).sum()), [x]


def _sum(rng):
    x, r = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    return (lambda a: (ad.tsum(a, axis=0) * r).sum()), [x]


def _mean(rng):
    x, r = rng.normal(size=(3, 4)), rng.normal(size=(3,))
    return (lambda a: (ad.mean(a, axis=1) * r).sum()), [x]


def _forward_splat(rng):
    """Normalized splat through a reprojection: source, depth and motion."""
    grid = PixelGrid(4)
    src = rng.uniform(0, 1, size=(3, 4, 8))
    depth = rng.uniform(1.0, 2.0, size=(4, 8))
    motion = np.concatenate([rng.normal(scale=0.2, size=3), rng.normal(scale=0.2, size=1)])
    r = rng.normal(size=(3, 4, 8))

    def f(s, d, m):
        out, weight = forward_splat(s, reproject(d, m, grid))
        return (out * r).sum() + weight.sum() * 0.1

    return f, [src, depth, motion]


@dataclass
class _PairFixture:
    problem: PairProblem
    depth: np.ndarray
    depth_prime: np.ndarray
    motion: np.ndarray


_PAIR_CACHE = {}


def _pair(height=8):
    if height not in _PAIR_CACHE:
        scene = SceneSpec(seed=11, period=1.2)
        v, vp, d, dp, m = generate_pair(scene, forward_trajectory(scene, 2, 0.2), PixelGrid(height))
        problem = PairProblem(v, vp, d[0], crop_rows(height, 0.0), LossWeights())
        _PAIR_CACHE[height] = _PairFixture(problem, d[0], dp[0], m.as_array())
    return _PAIR_CACHE[height]


def _clear_of_cell_edges(depth, motion, margin):
    """True when no splat coordinate lies within ``margin`` pixels of an
    integer, where bilinear weights have a slope discontinuity."""
    tx, ty = reproject(depth, motion).target_xy()
    frac = np.concatenate([tx.data.ravel(), ty.data.ravel()]) % 1.0
    return bool(np.min(np.minimum(frac, 1.0 - frac)) > margin)


def _total(rng, margin=1e-3):
    """Full objective: self-supervised terms plus aligned supervised terms."""
    pair = _pair()
    while True:
        # depths scaled into (0, 1) so the robust-adjust clamp passes gradient
        d = 0.4 * pair.depth * rng.uniform(0.9, 1.1, pair.depth.shape)
        dp = 0.4 * pair.depth_prime * rng.uniform(0.9, 1.1, pair.depth.shape)
        mf = 0.4 * pair.motion + rng.normal(scale=0.02, size=4)
        mb = -0.4 * pair.motion + rng.normal(scale=0.02, size=4)
        if _clear_of_cell_edges(d, mf, margin) and _clear_of_cell_edges(dp, mb, margin):
            break

    frozen = pair.problem.fit_alignment(d)

    def f(d, dp, mf, mb):
        parts = pair.problem.self_losses(d, dp, mf, mb)
        parts.update(pair.problem.supervised_losses(d, alignment=frozen))
        return total_loss(weights=pair.problem.weights, **parts)

    return f, [d, dp, mf, mb]


def _non_local(rng):
    feats = rng.normal(size=(4, 3, 3))
    w = NonLocalWeights.init(4, rng, scale=0.5, zero_out=False)
    r = rng.normal(size=(4, 3, 3))

    def f(x, wt, wp, wg, wz):
        return (non_local_forward(x, NonLocalWeights(wt, wp, wg, wz)) * r).sum()

    return f, [feats] + [t.data for t in w.tensors()]


OP_CASES = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _binary(ad.div, lambda rng: _away(rng, (3, 4), [0.0], gap=0.5)),
    "neg": _unary(ad.neg),
    "square": _unary(ad.square),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, lambda rng: rng.uniform(0.2, 3.0, (3, 4))),
    "sqrt": _unary(ad.sqrt, lambda rng: rng.uniform(0.2, 3.0, (3, 4))),
    "sin": _unary(ad.sin),
    "cos": _unary(ad.cos),
    "atan2": _binary(ad.atan2, lambda rng: _away(rng, (3, 4), [0.0], gap=0.3)),
    "clamp": _unary(lambda a: ad.clamp(a, -0.5, 0.7), lambda rng: _away(rng, (3, 4), [-0.5, 0.7])),
    "abs": _unary(ad.abs, lambda rng: _away(rng, (3, 4), [0.0])),
    "sum": _sum,
    "mean": _mean,
    "matmul": _matmul,
    "conv1x1": _conv,
    "bilinear_splat": _sampler(ad.bilinear_splat),
    "bilinear_gather": _sampler(ad.bilinear_gather),
    "avg_pool2": _pool,
    "softmax_rows": _softmax,
    "forward_splat": _forward_splat,
}

COMPOSITE_CASES = {
    "total_loss": _total,
    "non_local": _non_local,
}

ALL_CASES = {**OP_CASES, **COMPOSITE_CASES}

# Smoothed |x| has curvature ~1/eps at x = 0, and the composite evaluates
# thousands of residuals, some of which land within 1e-4 of zero.
DEFAULT_STEP = 1e-5
CASE_STEPS = {"total_loss": 1e-7}


def run_case(name, instances=20, seed=0, h=None, tol=1e-4):
    """Grad-check ``instances`` random draws of case ``name``.

    ``h`` defaults to the per-case step in ``CASE_STEPS``. Returns the list of
    :class:`~panodepth.autodiff.GradCheckReport`.
    """
    if name not in ALL_CASES:
        raise KeyError(f"unknown grad-check case {name!r}; choose from {sorted(ALL_CASES)}")
    build = ALL_CASES[name]
    h = CASE_STEPS.get(name, DEFAULT_STEP) if h is None else h
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    reports = []
    for _ in range(instances):
        f, inputs = build(rng)
        reports.append(ad.grad_check(f, inputs, h=h, tol=tol))
    return reports


@contextmanager
def injected_fault(op_name):
    """Temporarily corrupt the backward pass of autodiff op ``op_name``
    (gradients come out scaled by 1.5). For negative-control runs."""
    original = ad._make

    def faulty(name, data, inputs, vjp):
        if name == op_name:
            inner = vjp
            vjp = lambda g: tuple(None if gi is None else 1.5 * gi for gi in inner(g))  # noqa: E731
        return original(name, data, inputs, vjp)

    ad._make = faulty
    try:
        yield
    finally:
        ad._make = original
