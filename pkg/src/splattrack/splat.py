"""Depth-sorted differentiable Gaussian rasterizer.

Pixel (col, row) of an image sits at the continuous coordinate (x=col,
y=row).  Gaussians are composited front to back; the composited weight of
Gaussian i at pixel u is w_i(u) = alpha_i(u) * prod_{j before i} (1 - alpha_j(u)).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import ContractError
from .geom import (
    LOWPASS,
    Z_NEAR,
    Camera,
    GaussianFrame,
    GaussianTrajectory,
    integrate_deltas,
    integrated_colors,
    quat_to_rotation,
)

ALPHA_MAX = 0.999


@dataclass(frozen=True)
class RasterConfig:
    cutoff_sigma: float = 3.0
    alpha_min: float = 1.0 / 255.0
    background: tuple = ()
    parallel: bool = False

    def __post_init__(self):
        if not self.cutoff_sigma > 0:
            raise ContractError("cutoff_sigma must be positive")
        if not 0 <= self.alpha_min < 1:
            raise ContractError("alpha_min must lie in [0, 1)")

    def background_for(self, m: int) -> np.ndarray:
        if len(self.background) == 0:
            return np.zeros(m)
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != (m,):
            raise ContractError(f"background has {bg.size} channels, attributes have {m}")
        return bg


class RasterOutput(NamedTuple):
    image: np.ndarray
    accum_weight: np.ndarray
    depth_order: np.ndarray


class _Screen(NamedTuple):
    """Screen-space state of one frame plus what the backward pass reuses."""

    order: np.ndarray
    means2d: np.ndarray
    conics: np.ndarray
    opac: np.ndarray
    bbox: np.ndarray
    cam_pts: np.ndarray
    jac: np.ndarray
    proj: np.ndarray
    sigma: np.ndarray
    rotq: np.ndarray
    quat: np.ndarray
    qnorm: np.ndarray
    cov2d: np.ndarray


def _project(frame: GaussianFrame, camera: Camera, cfg: RasterConfig) -> _Screen:
    n = frame.n
    cam_pts = frame.mu @ camera.rot.T + camera.trans
    valid = cam_pts[:, 2] > Z_NEAR
    z = np.where(valid, cam_pts[:, 2], 1.0)
    X, Y = cam_pts[:, 0], cam_pts[:, 1]
    means2d = np.stack([camera.fx * X / z + camera.cx,
                        camera.fy * Y / z + camera.cy], axis=1)
    zero = np.zeros(n)
    jac = np.stack([camera.fx / z, zero, -camera.fx * X / (z * z),
                    zero, camera.fy / z, -camera.fy * Y / (z * z)],
                   axis=1).reshape(n, 2, 3)
    qnorm = np.linalg.norm(frame.phi, axis=1)
    quat = frame.phi / qnorm[:, None]
    rotq = quat_to_rotation(quat)
    scaled = rotq * frame.s[:, None, :]
    sigma = scaled @ scaled.transpose(0, 2, 1)
    proj = jac @ camera.rot
    cov2d = proj @ sigma @ proj.transpose(0, 2, 1) + LOWPASS * np.eye(2)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    rx = cfg.cutoff_sigma * np.sqrt(a)
    ry = cfg.cutoff_sigma * np.sqrt(c)
    lim = 1 << 30
    bbox = np.stack([
        np.clip(np.floor(means2d[:, 0] - rx), -lim, lim),
        np.clip(np.ceil(means2d[:, 0] + rx), -lim, lim),
        np.clip(np.floor(means2d[:, 1] - ry), -lim, lim),
        np.clip(np.ceil(means2d[:, 1] + ry), -lim, lim),
    ], axis=1)
    bbox = np.where(np.isfinite(bbox), bbox, -lim).astype(np.int64)
    idx = np.flatnonzero(valid)
    order = idx[np.argsort(cam_pts[idx, 2], kind="stable")].astype(np.int64)
    return _Screen(order, means2d, conics, np.ascontiguousarray(frame.o, dtype=np.float64),
                   bbox, cam_pts, jac, proj, sigma, rotq, quat, qnorm, cov2d)


def _check_attrs(frame: GaussianFrame, attributes) -> np.ndarray:
    attrs = np.ascontiguousarray(attributes, dtype=np.float64)
    if attrs.ndim != 2 or attrs.shape[0] != frame.n:
        raise ContractError(
            f"attributes must be ({frame.n}, m), got {attrs.shape}")
    return attrs


def _render(scr: _Screen, camera: Camera, attrs, cfg: RasterConfig):
    m = attrs.shape[1]
    bg = cfg.background_for(m)
    image = np.zeros((camera.height, camera.width, m))
    accum = np.zeros((camera.height, camera.width))
    fwd = K.forward_parallel if cfg.parallel else K.forward_serial
    fwd(scr.order, scr.means2d, scr.conics, scr.opac, scr.bbox, attrs, bg,
        camera.height, camera.width, ALPHA_MAX, cfg.alpha_min,
        cfg.cutoff_sigma ** 2, image, accum)
    return image, accum


def rasterize(frame: GaussianFrame, camera: Camera, attributes,
              config: RasterConfig | None = None) -> RasterOutput:
    """Composite per-Gaussian attribute vectors (n, m) into an H x W x m grid.

    Gaussians at or behind the near plane are left out of depth_order.
    """
    cfg = config or RasterConfig()
    attrs = _check_attrs(frame, attributes)
    scr = _project(frame, camera, cfg)
    image, accum = _render(scr, camera, attrs, cfg)
    return RasterOutput(image, accum, scr.order.copy())


def render_rgb(frame: GaussianFrame, camera: Camera,
               config: RasterConfig | None = None) -> np.ndarray:
    return rasterize(frame, camera, frame.r, config).image


def render_video(traj: GaussianTrajectory, camera: Camera,
                 config: RasterConfig | None = None) -> np.ndarray:
    return np.stack([render_rgb(f, camera, config) for f in integrate_deltas(traj)])


def _weights_at(scr: _Screen, n: int, nodes, cfg: RasterConfig) -> np.ndarray:
    nodes = np.ascontiguousarray(nodes, dtype=np.int64).reshape(-1, 2)
    out = np.zeros((nodes.shape[0], n))
    kern = K.weights_parallel if cfg.parallel else K.weights_serial
    kern(scr.order, scr.means2d, scr.conics, scr.opac, scr.bbox, nodes,
         ALPHA_MAX, cfg.alpha_min, cfg.cutoff_sigma ** 2, out)
    return out


def weight_grids(frame: GaussianFrame, camera: Camera,
                 config: RasterConfig | None = None) -> np.ndarray:
    """Per-Gaussian composited weight grids, shape (n, H, W)."""
    cfg = config or RasterConfig()
    scr = _project(frame, camera, cfg)
    ys, xs = np.mgrid[0:camera.height, 0:camera.width]
    nodes = np.stack([xs.ravel(), ys.ravel()], axis=1)
    w = _weights_at(scr, frame.n, nodes, cfg)
    return w.T.reshape(frame.n, camera.height, camera.width)


def bilinear_stencil(p, width: int, height: int):
    """Integer nodes around p and their bilinear weights.

    Nodes outside the image get weight zero (zero padding).
    """
    x, y = float(p[0]), float(p[1])
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    nodes = np.array([[x0, y0], [x0 + 1, y0], [x0, y0 + 1], [x0 + 1, y0 + 1]],
                     dtype=np.int64)
    wts = np.array([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    inside = ((nodes[:, 0] >= 0) & (nodes[:, 0] < width)
              & (nodes[:, 1] >= 0) & (nodes[:, 1] < height))
    return nodes, np.where(inside, wts, 0.0)


def sample_bilinear(grid, p) -> np.ndarray:
    """Bilinear lookup of an (H, W, ...) grid at continuous p=(x, y), zero padded."""
    grid = np.asarray(grid)
    h, w = grid.shape[:2]
    nodes, wts = bilinear_stencil(p, w, h)
    out = np.zeros(grid.shape[2:])
    for (x, y), c in zip(nodes, wts):
        if c != 0.0:
            out = out + c * grid[y, x]
    return out


def visibility_at(frame: GaussianFrame, camera: Camera, p,
                  config: RasterConfig | None = None) -> np.ndarray:
    """Bilinear interpolation at p of every Gaussian's composited-weight grid."""
    cfg = config or RasterConfig()
    p = np.asarray(p, dtype=np.float64)
    nodes, wts = bilinear_stencil(p, camera.width, camera.height)
    keep = wts != 0.0
    if not np.any(keep):
        return np.zeros(frame.n)
    scr = _project(frame, camera, cfg)
    w = _weights_at(scr, frame.n, nodes[keep], cfg)
    out = np.zeros(frame.n)
    for c, row in zip(wts[keep], w):
        out = out + c * row
    return out


# --------------------------------------------------------------------------
# loss and gradients


@dataclass
class TrajectoryGradient:
    """Loss gradient in the unconstrained coordinates used for fitting.

    log_s, r_logit and o_logit are the gradients w.r.t. log(s), logit(r)
    and logit(o); phi is w.r.t. the raw (un-normalized) quaternion.
    """

    mu: np.ndarray
    log_s: np.ndarray
    phi: np.ndarray
    r_logit: np.ndarray
    o_logit: np.ndarray
    dmu: np.ndarray
    dr: np.ndarray

    GROUPS = ("mu", "log_s", "phi", "r_logit", "o_logit", "dmu", "dr")

    def items(self):
        return [(g, getattr(self, g)) for g in self.GROUPS]


def _quat_backward(quat, qnorm, g_rot):
    w, x, y, z = quat.T
    g = g_rot
    gw = 2 * (-g[:, 0, 1] * z + g[:, 0, 2] * y + g[:, 1, 0] * z
              - g[:, 1, 2] * x - g[:, 2, 0] * y + g[:, 2, 1] * x)
    gx = 2 * (g[:, 0, 1] * y + g[:, 0, 2] * z + g[:, 1, 0] * y - 2 * g[:, 1, 1] * x
              - g[:, 1, 2] * w + g[:, 2, 0] * z + g[:, 2, 1] * w - 2 * g[:, 2, 2] * x)
    gy = 2 * (-2 * g[:, 0, 0] * y + g[:, 0, 1] * x + g[:, 0, 2] * w + g[:, 1, 0] * x
              + g[:, 1, 2] * z - g[:, 2, 0] * w + g[:, 2, 1] * z - 2 * g[:, 2, 2] * y)
    gz = 2 * (-2 * g[:, 0, 0] * z - g[:, 0, 1] * w + g[:, 0, 2] * x + g[:, 1, 0] * w
              - 2 * g[:, 1, 1] * z + g[:, 1, 2] * y + g[:, 2, 0] * x + g[:, 2, 1] * y)
    gq = np.stack([gw, gx, gy, gz], axis=1)
    # through q = phi / |phi|
    radial = np.sum(gq * quat, axis=1, keepdims=True)
    return (gq - quat * radial) / qnorm[:, None]


def _screen_backward(scr: _Screen, camera: Camera, s, g_screen):
    """Chain (n, 6) screen-space gradients back to mean, log-scale, quaternion, opacity."""
    n = s.shape[0]
    g_mean2 = g_screen[:, K.G_MX:K.G_MY + 1]
    ga, gb, gc = g_screen[:, K.G_CA], g_screen[:, K.G_CB], g_screen[:, K.G_CC]
    g_conic = np.stack([ga, gb / 2, gb / 2, gc], axis=1).reshape(n, 2, 2)
    c0, c1, c2 = scr.conics.T
    conic = np.stack([c0, c1, c1, c2], axis=1).reshape(n, 2, 2)
    g_cov2 = -conic @ g_conic @ conic
    g_sigma = scr.proj.transpose(0, 2, 1) @ g_cov2 @ scr.proj
    g_proj = 2.0 * g_cov2 @ scr.proj @ scr.sigma
    g_jac = g_proj @ camera.rot.T

    X, Y, Z = scr.cam_pts.T
    Z = np.where(Z > Z_NEAR, Z, 1.0)
    fx, fy = camera.fx, camera.fy
    g_cam = np.zeros((n, 3))
    g_cam[:, 0] = g_mean2[:, 0] * fx / Z - g_jac[:, 0, 2] * fx / (Z * Z)
    g_cam[:, 1] = g_mean2[:, 1] * fy / Z - g_jac[:, 1, 2] * fy / (Z * Z)
    g_cam[:, 2] = (-g_mean2[:, 0] * fx * X / (Z * Z) - g_mean2[:, 1] * fy * Y / (Z * Z)
                   - g_jac[:, 0, 0] * fx / (Z * Z) - g_jac[:, 1, 1] * fy / (Z * Z)
                   + g_jac[:, 0, 2] * 2 * fx * X / Z ** 3
                   + g_jac[:, 1, 2] * 2 * fy * Y / Z ** 3)
    g_mu = g_cam @ camera.rot

    scaled = scr.rotq * s[:, None, :]
    g_scaled = 2.0 * g_sigma @ scaled
    g_s = np.sum(g_scaled * scr.rotq, axis=1)
    g_rot = g_scaled * s[:, None, :]
    g_phi = _quat_backward(scr.quat, scr.qnorm, g_rot)
    return g_mu, g_s, g_phi, g_screen[:, K.G_OP]


def check_video(video, camera: Camera, k: int | None = None) -> np.ndarray:
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[1:] != (camera.height, camera.width, 3):
        raise ContractError(
            f"video must be (k, {camera.height}, {camera.width}, 3), got {video.shape}")
    if k is not None and video.shape[0] != k:
        raise ContractError(f"video has {video.shape[0]} frames, trajectory has {k}")
    return video


def render_loss_and_gradients(traj: GaussianTrajectory, camera: Camera, target_video,
                              config: RasterConfig | None = None):
    """Mean squared RGB error over the whole video and its full gradient."""
    cfg = config or RasterConfig()
    target = check_video(target_video, camera, traj.k)
    k, n = traj.k, traj.n
    frames = integrate_deltas(traj)
    colors = integrated_colors(traj)
    bg = cfg.background_for(3)
    scale = 2.0 / target.size
    bwd = K.loss_backward_parallel if cfg.parallel else K.loss_backward_serial

    loss_sum = 0.0
    g_means = np.zeros((k, n, 3))
    g_colors = np.zeros((k, n, 3))
    g_s = np.zeros((n, 3))
    g_phi = np.zeros((n, 4))
    g_o = np.zeros(n)
    for t, frame in enumerate(frames):
        scr = _project(frame, camera, cfg)
        attrs = np.ascontiguousarray(colors[t])
        g_screen = np.zeros((camera.height, n, K.N_SCREEN))
        g_attr = np.zeros((camera.height, n, 3))
        row_loss = np.zeros(camera.height)
        bwd(scr.order, scr.means2d, scr.conics, scr.opac, scr.bbox, attrs, bg,
            np.ascontiguousarray(target[t]), scale, ALPHA_MAX, cfg.alpha_min,
            cfg.cutoff_sigma ** 2, g_screen, g_attr, row_loss)
        loss_sum += float(row_loss.sum())
        gm, gs, gp, go = _screen_backward(scr, camera, traj.s, g_screen.sum(axis=0))
        g_means[t] = gm
        g_s += gs
        g_phi += gp
        g_o += go
        g_colors[t] = g_attr.sum(axis=0)

    # mean deltas: row t-1 feeds every frame >= t
    tail = np.cumsum(g_means[::-1], axis=0)[::-1]
    g_dmu = tail[1:].copy()
    g_mu0 = tail[0]

    # color deltas through the per-step clamp
    g_dr = np.zeros_like(traj.dr)
    carry = np.zeros((n, 3))
    for t in range(k - 1, 0, -1):
        pre = colors[t - 1] + traj.dr[t - 1]
        live = (pre >= 0.0) & (pre <= 1.0)
        carry = np.where(live, g_colors[t] + carry, 0.0)
        g_dr[t - 1] = carry
    g_r0 = g_colors[0] + carry

    grad = TrajectoryGradient(
        mu=g_mu0,
        log_s=g_s * traj.s,
        phi=g_phi,
        r_logit=g_r0 * traj.r * (1.0 - traj.r),
        o_logit=g_o * traj.o * (1.0 - traj.o),
        dmu=g_dmu,
        dr=g_dr,
    )
    return loss_sum / target.size, grad
