"""Scene, camera and trajectory types shared by every other module.

World frame is right-handed with +Z up. Cameras follow the OpenCV
convention (x right, y down, z forward); a pose stores the
world-from-camera rotation and the camera centre in world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from splatnav.background import AppearanceMLP, BackgroundModel


class EmptySceneError(ValueError):
    pass


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a


@dataclass(frozen=True, eq=False)
class Gaussian:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    sh_coeffs: np.ndarray  # ((degree+1)**2, 3)

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        scale = _vec3(self.scale)
        if np.any(scale <= 0):
            raise ValueError("Gaussian scale components must be strictly positive")
        object.__setattr__(self, "scale", scale)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion must be unit norm, got |q|={n}")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "opacity", float(np.clip(self.opacity, 0.0, 1.0)))
        sh = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(-1, 3)
        deg = int(round(np.sqrt(sh.shape[0]))) - 1
        if (deg + 1) ** 2 != sh.shape[0]:
            raise ValueError("sh_coeffs length must be a perfect square (degree+1)^2")
        object.__setattr__(self, "sh_coeffs", sh)

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[0]))) - 1


@dataclass
class GaussianSet:
    """Structure-of-arrays view of many Gaussians, the form the renderer consumes."""

    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4)
    opacities: np.ndarray  # (N,)
    sh_coeffs: np.ndarray  # (N, K, 3)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianSet":
        k = (sh_degree + 1) ** 2
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, k, 3)))

    @classmethod
    def from_list(cls, gaussians: list[Gaussian]) -> "GaussianSet":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.sh_coeffs for g in gaussians]),
        )

    def to_list(self) -> list[Gaussian]:
        return [
            Gaussian(self.positions[i], self.scales[i], self.rotations[i], self.opacities[i], self.sh_coeffs[i])
            for i in range(len(self))
        ]

    def subset(self, idx) -> "GaussianSet":
        return GaussianSet(
            self.positions[idx], self.scales[idx], self.rotations[idx], self.opacities[idx], self.sh_coeffs[idx]
        )

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "GaussianSet":
        """Apply a rigid transform x -> R x + t to every Gaussian."""
        R = np.asarray(rotation, dtype=np.float64)
        qR = rotmat_to_quat(R)
        rots = quat_multiply(np.broadcast_to(qR, self.rotations.shape), self.rotations)
        return GaussianSet(
            self.positions @ R.T + np.asarray(translation, dtype=np.float64),
            self.scales.copy(),
            rots,
            self.opacities.copy(),
            self.sh_coeffs.copy(),
        )

    @staticmethod
    def concatenate(sets: list["GaussianSet"]) -> "GaussianSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return GaussianSet.empty()
        return GaussianSet(*(np.concatenate([getattr(s, f) for s in sets]) for f in
                             ("positions", "scales", "rotations", "opacities", "sh_coeffs")))


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray  # world-from-camera
    translation: np.ndarray  # camera centre, world frame

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("pose rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _vec3(self.translation))

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def looking(cls, center, yaw: float, pitch: float = 0.0) -> "CameraPose":
        """Camera at ``center`` with optical axis at azimuth ``yaw`` (rad, from +X towards +Y)
        and elevation ``pitch`` (rad, positive up), zero roll."""
        cy, sy, cp, sp = np.cos(yaw), np.sin(yaw), np.cos(pitch), np.sin(pitch)
        forward = np.array([cy * cp, sy * cp, sp])
        right = np.array([sy, -cy, 0.0])
        down = np.cross(forward, right)
        return cls(np.column_stack([right, down, forward]), center)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


@dataclass(frozen=True)
class TrajectoryFrame:
    frame_id: int
    pose: CameraPose
    image_path: str | None = None


@dataclass
class SubmapModel:
    submap_id: int
    gaussians: GaussianSet
    background: BackgroundModel
    appearance: AppearanceMLP
    centroid: np.ndarray
    member_frames: list[int] = field(default_factory=list)

    @classmethod
    def from_frames(cls, submap_id, gaussians, background, appearance, frames: list[TrajectoryFrame]):
        centroid = np.mean([f.pose.translation for f in frames], axis=0) if frames else np.zeros(3)
        return cls(submap_id, gaussians, background, appearance, centroid, [f.frame_id for f in frames])


@dataclass
class SceneBundle:
    submaps: list[SubmapModel]
    trajectory: list[TrajectoryFrame]
    intrinsics: Intrinsics
    config: dict[str, Any] = field(default_factory=dict)
    # analytic room geometry for synthetic scenes (see splatnav.geometry)
    geometry: Any = None
    clustering: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        ids = [f.frame_id for f in self.trajectory]
        if len(set(ids)) != len(ids):
            raise ValueError("trajectory frame ids must be unique")
        known = set(ids)
        seen = set()
        for sm in self.submaps:
            if sm.submap_id in seen:
                raise ValueError(f"duplicate submap id {sm.submap_id}")
            seen.add(sm.submap_id)
            missing = set(sm.member_frames) - known
            if missing:
                raise ValueError(f"submap {sm.submap_id} references unknown frames {sorted(missing)[:5]}")

    def frame_positions(self) -> np.ndarray:
        return np.array([f.pose.translation for f in self.trajectory]).reshape(-1, 3)

    def submap(self, submap_id: int) -> SubmapModel:
        for sm in self.submaps:
            if sm.submap_id == submap_id:
                return sm
        raise KeyError(submap_id)


def world_to_camera(pose: CameraPose, point) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    return (p - pose.translation) @ pose.rotation


def camera_to_world(pose: CameraPose, point) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    return p @ pose.rotation.T + pose.translation


def nearest_submap(scene: SceneBundle, position) -> int:
    if not scene.submaps:
        raise EmptySceneError("scene has no submaps")
    p = _vec3(position)
    best_id, best_d = None, np.inf
    for sm in scene.submaps:
        d = float(np.sum((sm.centroid - p) ** 2))
        if d < best_d or (d == best_d and sm.submap_id < best_id):
            best_id, best_d = sm.submap_id, d
    return best_id


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions (w, x, y, z) to (..., 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    out = np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def yaw_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def y_up_to_z_up(points: np.ndarray) -> np.ndarray:
    """Map +Y-up coordinates (x, y, z) to this package's +Z-up frame as (x, -z, y)."""
    p = np.asarray(points, dtype=np.float64)
    return np.stack([p[..., 0], -p[..., 2], p[..., 1]], axis=-1)
