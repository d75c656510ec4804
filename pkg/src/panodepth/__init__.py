"""Depth and camera-motion recovery from 360-degree frame pairs by view synthesis."""
from .errors import (AspectRatioError, DegenerateCoverageError, DivergenceError, InvalidInputError,
                     NonFiniteError, PanoDepthError, SingularPointError, UsageError)
from .geometry import CartesianPoint, PixelGrid, SphericalPoint, cart_to_sph, sph_to_cart
from .losses import LossWeights
from .metrics import MetricsReport, compute_metrics, eval_protocol
from .optimize import OptimConfig, OptimResult, optimize_pair
from .scenes import SceneSpec, forward_trajectory, generate_pair
from .warp import CameraMotion, reproject, synthesize_depth, synthesize_image

__version__ = "0.1.0"
