"""Zero-shot point tracking from a fitted Gaussian trajectory.

Per-Gaussian image-plane offsets are splatted into a dense flow field for
every frame.  A tracked point is tied to a fixed set of anchor Gaussians
chosen at its query frame; their composited weight at the point gates
visibility, and their weighted positions pull the point along when it is
occluded.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .geom import (
    Z_NEAR,
    Camera,
    GaussianTrajectory,
    integrate_deltas,
    integrated_means,
    project_points,
    reverse_trajectory,
)
from .splat import (
    RasterConfig,
    _project,
    _render,
    _weights_at,
    bilinear_stencil,
    sample_bilinear,
)


@dataclass(frozen=True)
class TrackerConfig:
    top_k: int = 8
    tau_vis: float = 0.5
    beta: float = 0.3
    eps: float = 1e-8
    normalize_flow: bool = True
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if self.top_k < 1:
            raise ContractError("top_k must be >= 1")
        if not 0 <= self.tau_vis <= 1:
            raise ContractError("tau_vis must lie in [0, 1]")
        if not 0 <= self.beta <= 1:
            raise ContractError("beta must lie in [0, 1]")
        if not self.eps > 0:
            raise ContractError("eps must be positive")


@dataclass(frozen=True)
class Query:
    t: int
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64).reshape(2))

    def validate(self, k: int, width: int, height: int) -> None:
        if not 0 <= self.t < k:
            raise ContractError(f"query frame {self.t} outside [0, {k})")
        if not in_bounds(self.p, width, height):
            raise ContractError(f"query point {self.p.tolist()} outside the image")


@dataclass
class Track:
    points: np.ndarray
    visible: np.ndarray
    anchor_set: np.ndarray
    query: Query


class FlowField(NamedTuple):
    grid: np.ndarray
    t: int
    accum_weight: np.ndarray


class ProjectedTracks(NamedTuple):
    positions: np.ndarray   # (k, n, 2); zero where inactive
    offsets: np.ndarray     # (k-1, n, 2); row t is x^(t+1) - x^(t)
    active: np.ndarray      # (k, n) depth beyond the near plane


def in_bounds(p, width: int, height: int) -> bool:
    return bool(0 <= p[0] < width and 0 <= p[1] < height)


def projected_tracks(traj: GaussianTrajectory, camera: Camera) -> ProjectedTracks:
    pix, depth = project_points(camera, integrated_means(traj))
    active = depth > Z_NEAR
    pos = np.where(active[..., None], pix, 0.0)
    both = active[1:] & active[:-1]
    offsets = np.where(both[..., None], pos[1:] - pos[:-1], 0.0)
    return ProjectedTracks(pos, offsets, active)


class Tracker:
    """Tracking state shared by all queries on one trajectory.

    Flow fields and screen-space projections are built lazily per frame and
    cached; nothing else changes after construction.
    """

    def __init__(self, traj: GaussianTrajectory, camera: Camera,
                 config: TrackerConfig | None = None):
        self.traj = traj
        self.camera = camera
        self.config = config or TrackerConfig()
        self.frames = integrate_deltas(traj)
        self.proj = projected_tracks(traj, camera)
        self._screens: dict[int, object] = {}
        self._flows: dict[int, FlowField] = {}
        self._reversed: Tracker | None = None

    @property
    def k(self) -> int:
        return self.traj.k

    @property
    def n(self) -> int:
        return self.traj.n

    def _screen(self, t):
        if t not in self._screens:
            self._screens[t] = _project(self.frames[t], self.camera, self.config.raster)
        return self._screens[t]

    def visibility(self, p, t: int) -> np.ndarray:
        """Composited weight of every Gaussian at continuous pixel p in frame t."""
        nodes, wts = bilinear_stencil(p, self.camera.width, self.camera.height)
        keep = wts != 0.0
        out = np.zeros(self.n)
        if not np.any(keep):
            return out
        w = _weights_at(self._screen(t), self.n, nodes[keep], self.config.raster)
        for c, row in zip(wts[keep], w):
            out = out + c * row
        return out

    def flow(self, t: int) -> FlowField:
        if not 0 <= t < self.k - 1:
            raise ContractError(f"flow frame {t} outside [0, {self.k - 1})")
        if t not in self._flows:
            raster = replace(self.config.raster, background=())
            attrs = np.ascontiguousarray(self.proj.offsets[t])
            summed, accum = _render(self._screen(t), self.camera, attrs, raster)
            if self.config.normalize_flow:
                grid = summed / (accum[..., None] + self.config.eps)
            else:
                grid = summed
            self._flows[t] = FlowField(grid, t, accum)
        return self._flows[t]

    def select_anchors(self, query: Query) -> np.ndarray:
        """Top-k Gaussians by composited weight at the query; ties go to lower index.

        top_k larger than n is clamped to n.
        """
        w = self.visibility(query.p, query.t)
        k = min(self.config.top_k, self.n)
        return np.argsort(-w, kind="stable")[:k]

    def anchor_state(self, anchors, p, t: int):
        """(omega, mixture weights) of the anchor set at p in frame t."""
        w = self.visibility(p, t)[anchors]
        omega = float(np.sum(w))
        return omega, w / (omega + self.config.eps)

    def step(self, anchors, p, t: int, fallback=None):
        """Advance p from frame t to t+1; returns (p_next, visible at t, weights).

        fallback holds mixture weights to use when every anchor weight is
        exactly zero (a point outside all anchor footprints), typically the
        previous frame's weights; uniform weights when None.
        """
        cfg = self.config
        p = np.asarray(p, dtype=np.float64)
        a = p + sample_bilinear(self.flow(t).grid, p)
        omega, pi = self.anchor_state(anchors, p, t)
        if omega == 0.0:
            pi = fallback if fallback is not None else np.full(len(anchors), 1.0 / len(anchors))
        x_t = self.proj.positions[t, anchors]
        dx = self.proj.offsets[t, anchors]
        s_vis = pi @ (x_t + dx)
        if omega >= cfg.tau_vis:
            return (1.0 - cfg.beta) * a + cfg.beta * s_vis, True, pi
        return s_vis, False, pi

    def _run_forward(self, anchors, p0, t0):
        """Points and visibility for frames t0..k-1 starting from p0 at t0."""
        k = self.k
        pts = np.empty((k - t0, 2))
        vis = np.empty(k - t0, dtype=bool)
        p = np.asarray(p0, dtype=np.float64)
        fallback = None
        for j, t in enumerate(range(t0, k - 1)):
            pts[j] = p
            p_next, v, pi = self.step(anchors, p, t, fallback)
            vis[j] = v and in_bounds(p, self.camera.width, self.camera.height)
            if float(np.sum(pi)) > 0:
                fallback = pi
            p = p_next
        pts[-1] = p
        omega, _ = self.anchor_state(anchors, p, k - 1)
        vis[-1] = omega >= self.config.tau_vis and in_bounds(p, self.camera.width,
                                                             self.camera.height)
        return pts, vis

    def reversed(self) -> "Tracker":
        if self._reversed is None:
            self._reversed = Tracker(reverse_trajectory(self.traj), self.camera, self.config)
        return self._reversed

    def track(self, query: Query) -> Track:
        query.validate(self.k, self.camera.width, self.camera.height)
        anchors = self.select_anchors(query)
        k, t0 = self.k, query.t
        points = np.empty((k, 2))
        visible = np.empty(k, dtype=bool)
        fwd_pts, fwd_vis = self._run_forward(anchors, query.p, t0)
        points[t0:] = fwd_pts
        visible[t0:] = fwd_vis
        if t0 > 0:
            back_pts, back_vis = self.reversed()._run_forward(anchors, query.p, k - 1 - t0)
            # reversed frame j is original frame k-1-j; skip the shared query frame
            points[:t0] = back_pts[1:][::-1]
            visible[:t0] = back_vis[1:][::-1]
        points[t0] = query.p
        return Track(points, visible, anchors.copy(), query)

    def track_all(self, queries) -> list[Track]:
        return [self.track(q) for q in queries]


# functional interface -------------------------------------------------------


def render_flow_field(traj: GaussianTrajectory, camera: Camera, t: int,
                      config: TrackerConfig | None = None) -> FlowField:
    return Tracker(traj, camera, config).flow(t)


def select_anchors(traj, camera, query: Query, config: TrackerConfig | None = None):
    return Tracker(traj, camera, config).select_anchors(query)


def anchor_state(traj, camera, anchors, p, t: int, config: TrackerConfig | None = None):
    return Tracker(traj, camera, config).anchor_state(np.asarray(anchors), p, t)


def step(traj, camera, anchors, p, t: int, config: TrackerConfig | None = None):
    """One tracker update; returns (p_next, visible flag of frame t)."""
    tracker = Tracker(traj, camera, config)
    if not 0 <= t < tracker.k - 1:
        raise ContractError(f"step frame {t} outside [0, {tracker.k - 1})")
    p_next, vis, _ = tracker.step(np.asarray(anchors), p, t)
    return p_next, vis


def track_point(traj, camera, query: Query, config: TrackerConfig | None = None) -> Track:
    return Tracker(traj, camera, config).track(query)
