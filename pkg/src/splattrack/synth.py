"""Deterministic synthetic videos of moving Gaussian blobs with exact ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import SceneSpecError
from .evaluation import GroundTruthTrack
from .geom import Z_NEAR, Camera, GaussianTrajectory, integrate_deltas, project_points
from .splat import RasterConfig, render_rgb, visibility_at

GT_VIS_THRESHOLD = 0.5


@dataclass(frozen=True)
class Blob:
    position: tuple
    scale: tuple
    color: tuple
    opacity: float
    velocity: tuple  # (k-1) 3-vectors, row t-1 moves frame t-1 to t
    color_velocity: tuple = ()
    phi: tuple = (1.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        d = {
            "position": list(self.position),
            "scale": list(self.scale),
            "color": list(self.color),
            "opacity": self.opacity,
            "velocity": [list(v) for v in self.velocity],
            "phi": list(self.phi),
        }
        if self.color_velocity:
            d["color_velocity"] = [list(v) for v in self.color_velocity]
        return d

    @classmethod
    def from_dict(cls, d: dict, k: int) -> "Blob":
        try:
            vel = np.asarray(d["velocity"], dtype=np.float64)
            if vel.shape == (3,):
                vel = np.tile(vel, (k - 1, 1))
            cvel = np.asarray(d.get("color_velocity", []), dtype=np.float64)
            if cvel.shape == (3,):
                cvel = np.tile(cvel, (k - 1, 1))
            return cls(
                position=tuple(float(x) for x in d["position"]),
                scale=tuple(float(x) for x in d["scale"]),
                color=tuple(float(x) for x in d["color"]),
                opacity=float(d["opacity"]),
                velocity=tuple(tuple(float(x) for x in row) for row in vel),
                color_velocity=tuple(tuple(float(x) for x in row) for row in cvel),
                phi=tuple(float(x) for x in d.get("phi", (1.0, 0.0, 0.0, 0.0))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneSpecError(f"malformed blob record: {exc}") from exc


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    k: int
    blobs: tuple
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    name: str = ""

    def validate(self) -> None:
        if self.k < 2:
            raise SceneSpecError("k must be >= 2")
        if self.width < 1 or self.height < 1:
            raise SceneSpecError("image size must be positive")
        if not self.blobs:
            raise SceneSpecError("scene needs at least one blob")
        if len(self.background) != 3:
            raise SceneSpecError("background must have 3 channels")
        for i, b in enumerate(self.blobs):
            if len(b.velocity) != self.k - 1:
                raise SceneSpecError(f"blob {i}: velocity needs {self.k - 1} rows")
            if b.color_velocity and len(b.color_velocity) != self.k - 1:
                raise SceneSpecError(f"blob {i}: color_velocity needs {self.k - 1} rows")
            if min(b.scale) <= 0:
                raise SceneSpecError(f"blob {i}: scale must be positive")
            if not 0 < b.opacity < 1:
                raise SceneSpecError(f"blob {i}: opacity must lie in (0, 1)")
            if min(b.color) < 0 or max(b.color) > 1:
                raise SceneSpecError(f"blob {i}: color must lie in [0, 1]")

    def camera(self) -> Camera:
        return Camera.default(self.width, self.height)

    def trajectory(self) -> GaussianTrajectory:
        self.validate()
        n = len(self.blobs)
        dr = np.zeros((self.k - 1, n, 3))
        for i, b in enumerate(self.blobs):
            if b.color_velocity:
                dr[:, i] = b.color_velocity
        return GaussianTrajectory(
            mu=[b.position for b in self.blobs],
            s=[b.scale for b in self.blobs],
            phi=[b.phi for b in self.blobs],
            r=[b.color for b in self.blobs],
            o=[b.opacity for b in self.blobs],
            dmu=np.stack([np.asarray(b.velocity, dtype=np.float64) for b in self.blobs], axis=1),
            dr=dr,
        )

    def truncated(self, k: int) -> "SceneSpec":
        """Same scene restricted to its first k frames."""
        blobs = tuple(
            Blob(b.position, b.scale, b.color, b.opacity, b.velocity[:k - 1],
                 b.color_velocity[:k - 1] if b.color_velocity else (), b.phi)
            for b in self.blobs)
        return SceneSpec(self.width, self.height, k, blobs, self.background,
                         self.seed, self.name)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "k": self.k,
            "seed": self.seed,
            "background": list(self.background),
            "blobs": [b.to_dict() for b in self.blobs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            k = int(d["k"])
            spec = cls(
                width=int(d["width"]),
                height=int(d["height"]),
                k=k,
                blobs=tuple(Blob.from_dict(b, k) for b in d["blobs"]),
                background=tuple(float(x) for x in d.get("background", (0.0, 0.0, 0.0))),
                seed=int(d.get("seed", 0)),
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneSpecError(f"malformed scene spec: {exc}") from exc
        spec.validate()
        return spec


class SynthOutput(NamedTuple):
    video: np.ndarray
    gt_tracks: list
    gt_trajectory: GaussianTrajectory
    camera: Camera


def generate_scene(spec: SceneSpec) -> SynthOutput:
    """Render the blob script and derive per-blob ground-truth tracks.

    A blob center is occluded at a frame when it projects outside the image or
    when a nearer blob's composited weight there exceeds 0.5.
    """
    traj = spec.trajectory()
    camera = spec.camera()
    frames = integrate_deltas(traj)
    for t, f in enumerate(frames):
        depth = f.mu @ camera.rot.T[:, 2] + camera.trans[2]
        bad = np.flatnonzero(depth <= Z_NEAR)
        if bad.size:
            raise SceneSpecError(f"blob(s) {bad.tolist()} behind the camera at frame {t}")
    raster = RasterConfig(background=tuple(spec.background))
    video = np.stack([render_rgb(f, camera, raster) for f in frames])

    n, k = traj.n, traj.k
    points = np.empty((k, n, 2))
    visible = np.ones((k, n), dtype=bool)
    for t, f in enumerate(frames):
        pix, depth = project_points(camera, f.mu)
        points[t] = pix
        for i in range(n):
            x, y = pix[i]
            if not (0 <= x < spec.width and 0 <= y < spec.height):
                visible[t, i] = False
                continue
            w = visibility_at(f, camera, pix[i], raster)
            nearer = depth < depth[i]
            if np.any(w[nearer] > GT_VIS_THRESHOLD):
                visible[t, i] = False
    gts = [GroundTruthTrack(points[:, i].copy(), visible[:, i].copy()) for i in range(n)]
    return SynthOutput(video, gts, traj, camera)


# --------------------------------------------------------------------------
# standard suite

_SIZE = 64
_K = 16
_F = float(_SIZE)  # default focal length for 64x64


def _to_scene(px, py, depth):
    """Pixel position at a depth to a camera-frame point."""
    c = _SIZE / 2.0
    return ((px - c) * depth / _F, (py - c) * depth / _F, depth)


def _pix_velocity(vx, vy, depth, vz=0.0):
    return (vx * depth / _F, vy * depth / _F, vz)


def _color(rng):
    c = rng.uniform(0.25, 1.0, size=3)
    c[rng.integers(3)] = rng.uniform(0.0, 0.3)
    return tuple(float(x) for x in c)


def _blob(rng, px, py, depth, sigma_px, vel_rows, color=None, opacity=None,
          color_velocity=()):
    s = sigma_px * depth / _F
    return Blob(
        position=_to_scene(px, py, depth),
        scale=(s, s, s),
        color=color or _color(rng),
        opacity=float(opacity if opacity is not None else rng.uniform(0.85, 0.95)),
        velocity=tuple(tuple(float(x) for x in v) for v in vel_rows),
        color_velocity=color_velocity,
    )


def _const(v):
    return [v] * (_K - 1)


def _translation(rng, idx):
    blobs = []
    count = 2 + idx % 3
    # one horizontal band per blob keeps them apart
    band = _SIZE / count
    for j in range(count):
        depth = float(rng.uniform(0.9, 1.3))
        vx, vy = rng.uniform(-1.2, 1.2), rng.uniform(-0.4, 0.4)
        sigma = float(rng.uniform(3.0, 4.5))
        px0 = _SIZE / 2 - vx * (_K - 1) / 2 + rng.uniform(-6, 6)
        py0 = band * (j + 0.5) - vy * (_K - 1) / 2
        blobs.append(_blob(rng, px0, py0, depth, sigma, _const(_pix_velocity(vx, vy, depth))))
    return blobs


def _depth_change(rng, idx):
    blobs = []
    for j in range(2):
        depth = float(rng.uniform(1.0, 1.4))
        vz = float(rng.uniform(-0.025, 0.025))
        vx = float(rng.uniform(-0.6, 0.6))
        px0 = 18 + 28 * j
        py0 = float(rng.uniform(22, 42))
        blobs.append(_blob(rng, px0, py0, depth, float(rng.uniform(3.0, 4.0)),
                           _const(_pix_velocity(vx, 0.0, depth, vz))))
    return blobs


def _crossing(rng, idx):
    far_depth = 1.6
    near_depth = 0.8
    py = float(rng.uniform(24, 40))
    far = _blob(rng, 32.0, py, far_depth, float(rng.uniform(3.0, 4.0)), _const((0.0, 0.0, 0.0)))
    # near blob passes the far center around frames 6-9
    speed = float(rng.uniform(1.4, 1.8)) * (1 if idx % 2 == 0 else -1)
    px0 = 32.0 - speed * 7.5
    near = _blob(rng, px0, py, near_depth, float(rng.uniform(3.5, 4.5)),
                 _const(_pix_velocity(speed, 0.0, near_depth)), opacity=0.95)
    extra = _blob(rng, float(rng.uniform(10, 54)), 56.0 if py < 32 else 8.0, 1.2, 3.0,
                  _const(_pix_velocity(float(rng.uniform(-0.5, 0.5)), 0.0, 1.2)))
    return [far, near, extra]


def _exit_reentry(rng, idx):
    depth = float(rng.uniform(1.0, 1.2))
    speed = float(rng.uniform(3.3, 3.7))
    direction = 1 if idx % 2 == 0 else -1
    start = 32.0 + direction * 16.0
    rows = []
    for t in range(_K - 1):
        sgn = direction if t < 7 else -direction
        rows.append(_pix_velocity(sgn * speed, 0.0, depth))
    leaver = _blob(rng, start, float(rng.uniform(20, 44)), depth, 3.0, rows)
    stayer = _blob(rng, 32.0 - direction * 14.0, float(rng.uniform(14, 50)), 1.1, 3.5,
                   _const(_pix_velocity(0.0, float(rng.uniform(-0.8, 0.8)), 1.1)))
    return [leaver, stayer]


def _color_drift(rng, idx):
    blobs = []
    for j in range(2):
        depth = float(rng.uniform(0.9, 1.2))
        vx, vy = rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)
        color = (0.5, 0.5, 0.5)
        drift = tuple(float(x) for x in rng.uniform(-0.025, 0.025, size=3))
        blobs.append(_blob(rng, 20 + 24 * j, float(rng.uniform(20, 44)), depth,
                           float(rng.uniform(3.0, 4.0)), _const(_pix_velocity(vx, vy, depth)),
                           color=color, color_velocity=tuple([drift] * (_K - 1))))
    return blobs


SUITE_LAYOUT = (
    ("translation", 5, _translation),
    ("depth", 4, _depth_change),
    ("crossing", 4, _crossing),
    ("exit", 4, _exit_reentry),
    ("color", 3, _color_drift),
)


def translation_scene_indices() -> list[int]:
    return list(range(SUITE_LAYOUT[0][1]))


def standard_suite(seed: int = 0) -> list[SceneSpec]:
    """Twenty deterministic 64x64, 16-frame scenes; indices 0-4 are translation-only."""
    specs = []
    for kind, count, make in SUITE_LAYOUT:
        for j in range(count):
            rng = np.random.default_rng([seed, len(specs)])
            blobs = tuple(make(rng, j))
            spec = SceneSpec(_SIZE, _SIZE, _K, blobs, (0.0, 0.0, 0.0), seed,
                             f"{kind}-{j}")
            spec.validate()
            specs.append(spec)
    return specs
