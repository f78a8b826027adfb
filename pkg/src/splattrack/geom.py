"""Gaussian primitives, the pinhole camera and per-frame delta integration.

Positions live in camera-frame scene units.  Quaternions are stored
(w, x, y, z).  All functions accept a single item or a leading batch axis
where noted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BehindCameraError, ContractError, DegenerateInputError

Z_NEAR = 1e-4
LOWPASS = 0.3


@dataclass(frozen=True)
class Gaussian:
    mu: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    r: np.ndarray
    o: float


@dataclass(frozen=True)
class GaussianDelta:
    dmu: np.ndarray
    dr: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.dmu)) and np.all(np.isfinite(self.dr))):
            raise ContractError("delta contains non-finite values")


def _frozen(a, shape=None, name="array"):
    a = np.array(a, dtype=np.float64)
    if shape is not None and a.shape != shape:
        raise ContractError(f"{name} has shape {a.shape}, expected {shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with rigid extrinsics, fixed for the whole video."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", _frozen(self.rot, (3, 3), "rot"))
        object.__setattr__(self, "trans", _frozen(self.trans, (3,), "trans"))
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ContractError("image size must be positive")
        rot = self.rot
        if (not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6)
                or abs(np.linalg.det(rot) - 1.0) > 1e-6):
            raise ContractError("rot must be a proper rotation")

    @classmethod
    def default(cls, width: int, height: int) -> "Camera":
        f = float(max(width, height))
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height)

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
            and np.array_equal(self.rot, other.rot)
            and np.array_equal(self.trans, other.trans)
        )

    def to_camera_frame(self, mu):
        return np.asarray(mu, dtype=np.float64) @ self.rot.T + self.trans


def quat_to_rotation(phi) -> np.ndarray:
    """Rotation matrix for a (w, x, y, z) quaternion, batched over leading axes.

    The quaternion is re-normalized first.
    """
    q = np.asarray(phi, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise DegenerateInputError("zero-norm or non-finite quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    rot = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return rot.reshape(q.shape[:-1] + (3, 3))


def covariance3d(s, phi) -> np.ndarray:
    """Sigma = R diag(s)^2 R^T, batched over leading axes."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ContractError("scales must be strictly positive")
    m = quat_to_rotation(phi) * s[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def _require_depth(z):
    bad = np.asarray(z) <= Z_NEAR
    if np.any(bad):
        raise BehindCameraError(f"depth at or behind near plane z_near={Z_NEAR}")


def project_points(camera: Camera, mu):
    """Vectorized pinhole projection; returns (pixels (..., 2), depths (...)).

    Does not check the near plane.
    """
    xc = camera.to_camera_frame(mu)
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * xc[..., 0] / z + camera.cx
        v = camera.fy * xc[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1), z


def project_point(camera: Camera, mu):
    """Project one camera-frame point; raises BehindCameraError near z=0."""
    xc = camera.to_camera_frame(mu)
    _require_depth(xc[2])
    x, z = project_points(camera, mu)
    return x, float(z)


def projection_jacobian(camera: Camera, xc) -> np.ndarray:
    """Jacobian of the pinhole map at camera-frame points xc (..., 3) -> (..., 2, 3)."""
    xc = np.asarray(xc, dtype=np.float64)
    X, Y, Z = xc[..., 0], xc[..., 1], xc[..., 2]
    zero = np.zeros_like(Z)
    rows = np.stack([
        camera.fx / Z, zero, -camera.fx * X / (Z * Z),
        zero, camera.fy / Z, -camera.fy * Y / (Z * Z),
    ], axis=-1)
    return rows.reshape(xc.shape[:-1] + (2, 3))


def project_covariances(camera: Camera, mu, sigma, lowpass: float = LOWPASS):
    """Batched 2-D screen covariance J W Sigma W^T J^T + lowpass*I."""
    xc = camera.to_camera_frame(mu)
    jac = projection_jacobian(camera, xc)
    t = jac @ camera.rot
    cov = t @ np.asarray(sigma, dtype=np.float64) @ np.swapaxes(t, -1, -2)
    return cov + lowpass * np.eye(2)


def project_covariance(camera: Camera, mu, sigma, lowpass: float = LOWPASS):
    _require_depth(camera.to_camera_frame(mu)[2])
    return project_covariances(camera, mu, sigma, lowpass)


class GaussianFrame(NamedTuple):
    """Materialized Gaussians of one frame, stored as parallel arrays."""

    mu: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    r: np.ndarray
    o: np.ndarray

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    def gaussians(self) -> list[Gaussian]:
        return [Gaussian(self.mu[i], self.s[i], self.phi[i], self.r[i], float(self.o[i]))
                for i in range(self.n)]


@dataclass(frozen=True, eq=False)
class GaussianTrajectory:
    """First-frame Gaussians plus (k-1) rows of per-frame residuals.

    Column i is the same Gaussian in every frame; delta row t-1 produces
    frame t from frame t-1.
    """

    mu: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    r: np.ndarray
    o: np.ndarray
    dmu: np.ndarray
    dr: np.ndarray

    def __post_init__(self):
        mu = _frozen(self.mu, name="mu")
        if mu.ndim != 2 or mu.shape[1] != 3 or mu.shape[0] < 1:
            raise ContractError(f"mu must be (n, 3) with n >= 1, got {mu.shape}")
        n = mu.shape[0]
        s = _frozen(self.s, (n, 3), "s")
        phi = np.array(self.phi, dtype=np.float64)
        if phi.shape != (n, 4):
            raise ContractError(f"phi has shape {phi.shape}, expected {(n, 4)}")
        norm = np.linalg.norm(phi, axis=1, keepdims=True)
        if np.any(norm == 0):
            raise DegenerateInputError("zero-norm quaternion")
        if np.any(np.abs(norm - 1.0) > 1e-6):
            phi = phi / norm
        phi = _frozen(phi)
        r = _frozen(self.r, (n, 3), "r")
        o = _frozen(self.o, (n,), "o")
        dmu = _frozen(self.dmu, name="dmu")
        dr = _frozen(self.dr, name="dr")
        if dmu.ndim != 3 or dmu.shape[1:] != (n, 3):
            raise ContractError(f"dmu must be (k-1, {n}, 3), got {dmu.shape}")
        if dr.shape != dmu.shape:
            raise ContractError(f"dr shape {dr.shape} differs from dmu {dmu.shape}")
        if np.any(s <= 0):
            raise ContractError("scales must be strictly positive")
        if np.any((o <= 0) | (o >= 1)):
            raise ContractError("opacity must lie in (0, 1)")
        if np.any((r < 0) | (r > 1)):
            raise ContractError("colors must lie in [0, 1]")
        for name, a in (("mu", mu), ("dmu", dmu), ("dr", dr)):
            if not np.all(np.isfinite(a)):
                raise ContractError(f"{name} contains non-finite values")
        for name, a in (("mu", mu), ("s", s), ("phi", phi), ("r", r), ("o", o),
                        ("dmu", dmu), ("dr", dr)):
            object.__setattr__(self, name, a)

    @classmethod
    def static(cls, mu, s, phi, r, o, k: int = 1) -> "GaussianTrajectory":
        n = np.shape(mu)[0]
        zeros = np.zeros((k - 1, n, 3))
        return cls(mu, s, phi, r, o, zeros, zeros)

    @property
    def k(self) -> int:
        return self.dmu.shape[0] + 1

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def g0(self) -> list[Gaussian]:
        return self.frame0().gaussians()

    def frame0(self) -> GaussianFrame:
        return GaussianFrame(self.mu, self.s, self.phi, self.r, self.o)

    def delta(self, t: int, i: int) -> GaussianDelta:
        """Residual that produces frame t (1 <= t < k) for Gaussian i."""
        return GaussianDelta(self.dmu[t - 1, i], self.dr[t - 1, i])

    def replace(self, **changes) -> "GaussianTrajectory":
        fields = dict(mu=self.mu, s=self.s, phi=self.phi, r=self.r, o=self.o,
                      dmu=self.dmu, dr=self.dr)
        fields.update(changes)
        return GaussianTrajectory(**fields)

    def __eq__(self, other):
        if not isinstance(other, GaussianTrajectory):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("mu", "s", "phi", "r", "o", "dmu", "dr"))


def integrated_means(traj: GaussianTrajectory) -> np.ndarray:
    """(k, n, 3) means; frame t is frame t-1 plus delta row t-1, added in order."""
    return np.cumsum(np.concatenate([traj.mu[None], traj.dmu], axis=0), axis=0)


def integrated_colors(traj: GaussianTrajectory) -> np.ndarray:
    """(k, n, 3) colors with clamping to [0, 1] after every step."""
    out = np.empty((traj.k,) + traj.r.shape)
    out[0] = traj.r
    for t in range(1, traj.k):
        out[t] = np.clip(out[t - 1] + traj.dr[t - 1], 0.0, 1.0)
    return out


def integrate_deltas(traj: GaussianTrajectory) -> list[GaussianFrame]:
    means = integrated_means(traj)
    colors = integrated_colors(traj)
    return [GaussianFrame(means[t], traj.s, traj.phi, colors[t], traj.o)
            for t in range(traj.k)]


def reverse_trajectory(traj: GaussianTrajectory) -> GaussianTrajectory:
    """Time-reversed trajectory: frame t of the result is frame k-1-t of traj.

    Mean residuals are the original ones negated in reverse order; color
    residuals are differences of the materialized (clamped) colors so the
    reversed colors are exact.
    """
    colors = integrated_colors(traj)[::-1]
    means = integrated_means(traj)
    return GaussianTrajectory(
        mu=means[-1], s=traj.s, phi=traj.phi, r=colors[0], o=traj.o,
        dmu=-traj.dmu[::-1], dr=np.diff(colors, axis=0),
    )
