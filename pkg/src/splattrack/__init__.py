"""Fit a dynamic Gaussian splat trajectory to a short video and track points through it."""
from .errors import (
    BehindCameraError,
    ContractError,
    DegenerateInputError,
    NumericalError,
    SceneSpecError,
    SplatTrackError,
)
from .evaluation import EvalConfig, GroundTruthTrack, evaluate
from .fit import FitConfig, FitReport, fit_video, init_trajectory, psnr
from .geom import Camera, Gaussian, GaussianDelta, GaussianTrajectory, reverse_trajectory
from .splat import RasterConfig, rasterize, render_loss_and_gradients, render_rgb, render_video
from .synth import Blob, SceneSpec, generate_scene, standard_suite
from .track import Query, Track, Tracker, TrackerConfig, render_flow_field, track_point

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError", "Blob", "Camera", "ContractError", "DegenerateInputError",
    "EvalConfig", "FitConfig", "FitReport", "Gaussian", "GaussianDelta",
    "GaussianTrajectory", "GroundTruthTrack", "NumericalError", "Query", "RasterConfig",
    "SceneSpec", "SceneSpecError", "SplatTrackError", "Track", "Tracker", "TrackerConfig",
    "evaluate", "fit_video", "generate_scene", "init_trajectory", "psnr", "rasterize",
    "render_flow_field", "render_loss_and_gradients", "render_rgb", "render_video",
    "reverse_trajectory", "standard_suite", "track_point",
]
