"""One test per top-level acceptance criterion, each printing a PASS/FAIL line."""
import time

import numpy as np

from panodepth.geometry import PixelGrid, SphericalPoint, sph_to_cart
from panodepth.gradcheck import ALL_CASES, run_case
from panodepth.losses import LossWeights, align_scale_shift
from panodepth.metrics import compute_metrics, eval_protocol
from panodepth.nonlocal_block import NonLocalWeights, attention_row_stochastic, non_local_forward
from panodepth.optimize import OptimConfig, cropped_abs_rel, optimize_pair
from panodepth.scenes import SceneSpec, forward_trajectory, generate_pair
from panodepth.warp import CameraMotion, coverage, synthesize_depth, synthesize_image, transform_points

from test_metrics import as_list, metrics_loop
from test_nonlocal import brute_force

HEADLINE_SCENE = dict(seed=1, period=0.8)
ITERATIONS = 2000


def _pair(texture="smooth", h=32):
    scene = SceneSpec(texture=texture, **HEADLINE_SCENE)
    return generate_pair(scene, forward_trajectory(scene, 2, 0.2), PixelGrid(h))


_RUNS = {}


def _self_only(texture="smooth", lambda_D=0.15):
    """Cached self-only recovery: (AbsRel, seconds)."""
    key = (texture, lambda_D)
    if key not in _RUNS:
        v, vp, d, _, _ = _pair(texture)
        cfg = OptimConfig(iterations=ITERATIONS, weights=LossWeights(lambda_D=lambda_D))
        start = time.perf_counter()
        res = optimize_pair(v, vp, cfg)
        _RUNS[key] = (cropped_abs_rel(res.depth, d[0]), time.perf_counter() - start)
    return _RUNS[key]


def test_forward_substitution(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    n = 100_000
    theta, phi, rho = rng.uniform(0, 2 * np.pi, n), rng.uniform(0.01, np.pi - 0.01, n), rng.uniform(0.1, 10, n)
    motion = np.vstack([rng.normal(scale=0.5, size=(3, n)), rng.uniform(-np.pi, np.pi, n)])
    t, p, r, valid = transform_points(theta, phi, rho, motion)
    src = sph_to_cart(SphericalPoint(theta, phi, rho))
    dst = sph_to_cart(SphericalPoint(t.data, p.data, r.data))
    c, s = np.cos(motion[3]), np.sin(motion[3])
    expected = np.stack([c * src.x + s * src.y, -s * src.x + c * src.y, src.z]) - motion[:3]
    residual = np.abs(np.stack([dst.x, dst.y, dst.z]) - expected)[:, valid].max()
    elapsed = time.perf_counter() - start
    ok = criterion("geometry forward-substitution", residual < 1e-9 and valid.all() and elapsed < 5,
                   f"max residual {residual:.2e} (< 1e-9), {elapsed:.2f}s (< 5s)")
    assert ok


def test_identity_warps(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    v, d = rng.uniform(size=(3, 64, 128)), rng.uniform(0.5, 5, (64, 128))
    err_img = np.abs(synthesize_image(v, d, CameraMotion())[0].data - v).max()
    err_depth = np.abs(synthesize_depth(d, CameraMotion())[0].data[0] - d).max()
    elapsed = time.perf_counter() - start
    ok = criterion("identity warps", max(err_img, err_depth) < 1e-6 and elapsed < 1,
                   f"image {err_img:.1e}, depth {err_depth:.1e} (< 1e-6), {elapsed:.2f}s (< 1s)")
    assert ok


def test_oracle_warp(criterion):
    start = time.perf_counter()
    scene = SceneSpec(seed=3)
    v, vp, d, dp, m = generate_pair(scene, forward_trajectory(scene, 2, 0.2), PixelGrid(256))
    img, weight = synthesize_image(v, d, m)
    depth, dweight = synthesize_depth(d, m)
    covered, dcovered = coverage(weight), coverage(dweight)
    rmse = np.sqrt(np.mean((img.data - vp)[:, covered] ** 2))
    abs_rel = np.mean(np.abs(depth.data[0] - dp[0])[dcovered] / dp[0][dcovered])
    elapsed = time.perf_counter() - start
    ok = criterion("oracle warp 256x512", rmse < 0.02 and abs_rel < 0.01 and elapsed < 30,
                   f"RMSE {rmse:.5f} (< 0.02), depth AbsRel {abs_rel:.5f} (< 0.01), "
                   f"coverage {covered.mean():.3f}, {elapsed:.1f}s (< 30s)")
    assert ok


def test_gradient_suite(criterion):
    start = time.perf_counter()
    worst, failed = {}, []
    for name in ALL_CASES:
        reports = run_case(name, instances=20)
        worst[name] = max(r.max_error for r in reports)
        if not all(r.passed for r in reports):
            failed.append(name)
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = criterion("gradient suite", not failed and elapsed < 60,
                   f"{len(ALL_CASES)} cases x 20 instances, worst {top} {worst[top]:.1e} (< 1e-4), "
                   f"failed {failed or 'none'}, {elapsed:.1f}s (< 60s)")
    assert ok


def test_non_local_equivalence(criterion):
    rng = np.random.default_rng(2)
    err = rows = 0.0
    for c, h, w in [(4, 3, 3), (6, 4, 8), (4, 8, 8), (2, 1, 7)]:
        feats = rng.normal(size=(c, h, w))
        wts = NonLocalWeights.init(c, rng, scale=0.5, zero_out=False)
        err = max(err, np.abs(non_local_forward(feats, wts).data - brute_force(feats, wts)).max())
        rows = max(rows, np.abs(attention_row_stochastic(feats, wts).data.sum(axis=1) - 1).max())
    feats = rng.normal(size=(4, 8, 8))
    identity = np.array_equal(non_local_forward(feats, NonLocalWeights.init(4, rng)).data, feats)
    ok = criterion("non-local block equivalence", err < 1e-10 and identity and rows < 1e-12,
                   f"vs double loop {err:.1e} (< 1e-10), W_z=0 identity {identity}, row sums {rows:.1e} (< 1e-12)")
    assert ok


def test_alignment(criterion):
    rng = np.random.default_rng(3)
    pred = rng.uniform(0.5, 3, (32, 64))
    al = align_scale_shift(pred, 2 * pred + 3)
    resid = max(abs(al.s - 2), abs(al.t - 3), np.abs(al.depth.data - (2 * pred + 3)).max())
    gt = rng.uniform(1, 3, (32, 64))
    gt[rng.random(gt.shape) < 0.2] = 0
    base = np.array(as_list(eval_protocol(pred, gt)))
    drift = max(np.abs(np.array(as_list(eval_protocol(a * pred + b, gt))) - base).max()
                for a, b in [(0.01, 5.0), (3.0, -1.0), (47.0, 20.0), (0.5, 0.0)])
    ok = criterion("alignment", resid < 1e-9 and drift < 1e-9,
                   f"(s, t) residual {resid:.1e} (< 1e-9), protocol affine drift {drift:.1e} (< 1e-9)")
    assert ok


def test_headline_recovery(criterion):
    abs_rel, elapsed = _self_only()
    ok = criterion("self-supervised recovery (headline)", abs_rel < 0.10 and elapsed < 600,
                   f"32x64, self-only, {ITERATIONS} iterations: AbsRel {abs_rel:.4f} (< 0.10), {elapsed:.0f}s (< 600s)")
    assert ok


def test_ablation_direction(criterion):
    v, vp, d, _, _ = _pair()
    gt = d[0].copy()
    gt[np.random.default_rng(4).random(gt.shape) < 0.2] = 0.0
    scores = {}
    for flow in ("supervised-only", "joint-random"):
        res = optimize_pair(v, vp, OptimConfig(iterations=ITERATIONS, flow=flow), gt_depth=gt)
        scores[flow] = cropped_abs_rel(res.depth, d[0])
    li_only, _ = _self_only(lambda_D=0.0)
    li_ld, _ = _self_only()
    joint_wins = scores["joint-random"] < scores["supervised-only"]
    depth_helps = li_ld < li_only
    ok = criterion("joint-vs-single ablation direction", joint_wins and depth_helps,
                   f"joint {scores['joint-random']:.4f} < supervised {scores['supervised-only']:.4f}: {joint_wins}; "
                   f"L_I+L_D {li_ld:.4f} < L_I {li_only:.4f}: {depth_helps}")
    assert ok


def test_non_uniqueness(criterion):
    smooth, _ = _self_only()
    uniform, _ = _self_only("uniform")
    ok = criterion("non-uniqueness reproduction", uniform > 2 * smooth,
                   f"uniform AbsRel {uniform:.4f} > 2 x smooth {smooth:.4f} (ratio {uniform / smooth:.2f})")
    assert ok


def test_metrics_correctness(criterion):
    rng = np.random.default_rng(5)
    err, monotone = 0.0, True
    for _ in range(100):
        gt = rng.uniform(0.5, 10, (8, 16))
        gt[rng.random(gt.shape) < 0.1] = 0.0
        pred = gt * rng.uniform(0.6, 1.6, gt.shape)
        pred[rng.random(gt.shape) < 0.03] = -0.1
        got = as_list(compute_metrics(pred, gt))
        ref = metrics_loop(pred, gt)
        err = max(err, max(abs(a - b) / max(abs(b), 1.0) for a, b in zip(got, ref)))
        monotone &= got[4] <= got[5] <= got[6]
    ok = criterion("metrics correctness", err < 1e-12 and monotone,
                   f"100 instances vs scalar loop {err:.1e} (< 1e-12), delta monotone {monotone}")
    assert ok

