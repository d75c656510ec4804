"""
Mixing supervised and self-supervised steps
===========================================

Ground truth with holes only constrains the pixels it covers. Alternating
randomly between a supervised step and a self-supervised step lets the view
synthesis losses fill in the rest.
"""
import sys

import numpy as np

from panodepth.geometry import PixelGrid
from panodepth.losses import LossWeights
from panodepth.optimize import OptimConfig, cropped_abs_rel, optimize_pair
from panodepth.scenes import SceneSpec, forward_trajectory, generate_pair

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
scene = SceneSpec(seed=1, period=0.8)
v, v_next, d, _, _ = generate_pair(scene, forward_trajectory(scene, 2, 0.2), PixelGrid(32))

# Knock out a fifth of the labels
gt = d[0].copy()
gt[np.random.default_rng(4).random(gt.shape) < 0.2] = 0.0

runs = {
    "supervised-only": (OptimConfig(iterations=iterations, flow="supervised-only"), gt),
    "joint-random": (OptimConfig(iterations=iterations, flow="joint-random"), gt),
    "self-only, L_I": (OptimConfig(iterations=iterations, weights=LossWeights(lambda_D=0.0)), None),
    "self-only, L_I + L_D": (OptimConfig(iterations=iterations), None),
}
for name, (config, labels) in runs.items():
    result = optimize_pair(v, v_next, config, gt_depth=labels)
    print(f"{name:22s} AbsRel {cropped_abs_rel(result.depth, d[0]):.4f}")
