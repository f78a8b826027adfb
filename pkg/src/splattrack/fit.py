"""Per-video fitting of a Gaussian trajectory by Adam on the rendering loss."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError
from .geom import Camera, GaussianTrajectory
from .splat import RasterConfig, check_video, render_loss_and_gradients, render_video

log = logging.getLogger(__name__)

_COLOR_EPS = 1e-4
_LOG_SCALE_MAX = 700.0  # exp() stays finite and nonzero
_OPACITY_LOGIT_MAX = 12.0


@dataclass(frozen=True)
class FitConfig:
    n: int = 256
    iters: int = 2000
    seed: int = 0
    lr_means: float = 2e-3
    lr_dmu: float = 2e-3
    lr_colors: float = 1e-2
    lr_dr: float = 1e-2
    lr_scales: float = 5e-3
    lr_opacities: float = 5e-2
    lr_quats: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_depth: float = 1.0
    freeze_dmu: bool = False
    freeze_dr: bool = False
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("n must be >= 1")
        if self.iters < 0:
            raise ContractError("iters must be >= 0")
        if min(self.learning_rates().values()) < 0:
            raise ContractError("learning rates must be >= 0")
        if not self.init_depth > 0:
            raise ContractError("init_depth must be positive")

    def learning_rates(self) -> dict[str, float]:
        return {
            "mu": self.lr_means, "log_s": self.lr_scales, "phi": self.lr_quats,
            "r_logit": self.lr_colors, "o_logit": self.lr_opacities,
            "dmu": self.lr_dmu, "dr": self.lr_dr,
        }


@dataclass
class FitReport:
    final_loss: float
    psnr_per_frame: list[float]
    loss_curve: list[float]
    wall_time: float

    @property
    def mean_psnr(self) -> float:
        return psnr_from_mse(float(np.mean([10 ** (-p / 10) for p in self.psnr_per_frame])))

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "psnr": self.mean_psnr,
            "psnr_per_frame": list(self.psnr_per_frame),
            "loss_curve": list(self.loss_curve),
            "wall_time": self.wall_time,
        }


def psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr(image_a, image_b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; inf when identical."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def init_trajectory(video, camera: Camera, config: FitConfig) -> GaussianTrajectory:
    """Seeded random initialization: n isotropic Gaussians at init_depth."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[0] == 0:
        raise ContractError("video must be a non-empty (k, H, W, 3) array")
    video = check_video(video, camera)
    k, n = video.shape[0], config.n
    w, h = camera.width, camera.height
    rng = np.random.default_rng(config.seed)
    px = rng.uniform(0.0, w, size=n)
    py = rng.uniform(0.0, h, size=n)
    z = config.init_depth
    cam_pts = np.stack([(px - camera.cx) * z / camera.fx,
                        (py - camera.cy) * z / camera.fy,
                        np.full(n, z)], axis=1)
    mu = (cam_pts - camera.trans) @ camera.rot
    rows = np.minimum(np.floor(py).astype(int), h - 1)
    cols = np.minimum(np.floor(px).astype(int), w - 1)
    colors = video[0, rows, cols]
    sigma = (w / math.sqrt(n)) * z / camera.fx
    zeros = np.zeros((k - 1, n, 3))
    return GaussianTrajectory(
        mu=mu,
        s=np.full((n, 3), sigma),
        phi=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        r=colors,
        o=np.full(n, 0.5),
        dmu=zeros,
        dr=zeros,
    )


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def to_params(traj: GaussianTrajectory) -> dict[str, np.ndarray]:
    """Unconstrained optimization coordinates of a trajectory."""
    return {
        "mu": traj.mu.copy(),
        "log_s": np.log(traj.s),
        "phi": traj.phi.copy(),
        "r_logit": _logit(np.clip(traj.r, _COLOR_EPS, 1 - _COLOR_EPS)),
        "o_logit": _logit(traj.o),
        "dmu": traj.dmu.copy(),
        "dr": traj.dr.copy(),
    }


def from_params(params: dict[str, np.ndarray]) -> GaussianTrajectory:
    return GaussianTrajectory(
        mu=params["mu"],
        s=np.exp(params["log_s"]),
        phi=params["phi"],
        r=_sigmoid(params["r_logit"]),
        o=_sigmoid(params["o_logit"]),
        dmu=params["dmu"],
        dr=params["dr"],
    )


class Adam:
    """Adam with one learning rate per parameter group."""

    def __init__(self, params, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lrs[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _first_bad_group(grad) -> str | None:
    for name, g in grad.items():
        if not np.all(np.isfinite(g)):
            return name
    return None


def fit_video(video, camera: Camera, config: FitConfig | None = None,
              init: GaussianTrajectory | None = None):
    """Fit a trajectory to a (k, H, W, 3) video in [0, 1].

    Returns (trajectory, FitReport).  Raises NumericalError on a non-finite
    loss or gradient.
    """
    cfg = config or FitConfig()
    video = check_video(video, camera)
    start = time.perf_counter()
    traj = init if init is not None else init_trajectory(video, camera, cfg)
    if traj.k != video.shape[0]:
        raise ContractError("initial trajectory frame count differs from video")
    curve: list[float] = []
    if cfg.iters > 0:
        params = to_params(traj)
        opt = Adam(params, cfg.learning_rates(), cfg.beta1, cfg.beta2, cfg.adam_eps)
        for it in range(cfg.iters):
            loss, grad = render_loss_and_gradients(from_params(params), camera, video,
                                                   cfg.raster)
            grads = dict(grad.items())
            bad = _first_bad_group(grads)
            if bad is not None or not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite {'gradient in group ' + bad if bad else 'loss'} "
                    f"at iteration {it}")
            if cfg.freeze_dmu:
                grads["dmu"] = np.zeros_like(grads["dmu"])
            if cfg.freeze_dr:
                grads["dr"] = np.zeros_like(grads["dr"])
            curve.append(loss)
            opt.step(params, grads)
            params["phi"] /= np.linalg.norm(params["phi"], axis=1, keepdims=True)
            # keeps logistic(o) strictly inside (0, 1) in float64
            np.clip(params["o_logit"], -_OPACITY_LOGIT_MAX, _OPACITY_LOGIT_MAX,
                    out=params["o_logit"])
            bad = _first_bad_group(params)
            if bad is None and np.abs(params["log_s"]).max() > _LOG_SCALE_MAX:
                bad = "log_s"
            if bad is not None:
                raise NumericalError(f"non-finite parameters in group {bad} at iteration {it}")
            if log.isEnabledFor(logging.DEBUG) and it % 100 == 0:
                log.debug("iter %d loss %.6g psnr %.2f", it, loss, psnr_from_mse(loss))
        traj = from_params(params)
    rendered = render_video(traj, camera, cfg.raster)
    per_frame = [psnr(rendered[t], video[t]) for t in range(video.shape[0])]
    final = float(np.mean((rendered - video) ** 2))
    report = FitReport(final, per_frame, curve, time.perf_counter() - start)
    return traj, report
