"""Video stabilisation from low-frequency DCT global motion.

Stage 1 fits similarity transforms to frame-to-frame global flow and
smooths their sequence under a crop-ratio limit. Stage 2 removes the
remaining low-frequency non-rigid jitter with a temporal bilateral filter
on DCT flow coefficients.
"""
from .affine import SimilarityParams, compose, fit_similarity, invert
from .dctbasis import DctCoeffs, FlowField, GridSpec, evaluate, project
from .directflow import FramePyramid, PyramidSpec, estimate_pair, estimate_window
from .metrics import MetricsReport, evaluate_videos
from .pathsmooth import ParamSequence, smooth_with_crop_limit, solve_qp
from .pipeline import PipelineConfig, PipelineResult, stabilize
from .robustfit import RobustLossParams, project_robust
from .synth import SceneSpec, generate, jitter_suite

__version__ = "0.1.0"

__all__ = [
    "DctCoeffs", "FlowField", "FramePyramid", "GridSpec", "MetricsReport", "ParamSequence",
    "PipelineConfig", "PipelineResult", "PyramidSpec", "RobustLossParams", "SceneSpec",
    "SimilarityParams", "compose", "estimate_pair", "estimate_window", "evaluate",
    "evaluate_videos", "fit_similarity", "generate", "invert", "jitter_suite", "project",
    "project_robust", "smooth_with_crop_limit", "solve_qp", "stabilize",
]
