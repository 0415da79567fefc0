"""Rigid 6-DOF poses, homogeneous transforms, and relative-to-absolute chaining.

Conventions (fixed throughout the package):
  * translations in millimetres, rotations in radians
  * rotation matrix R = Rz(rz) @ Ry(ry) @ Rx(rx) (intrinsic z-y-x order)
  * a relative motion entry i describes frame i+1 expressed in frame i's
    local coordinate system
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose",
    "pose_to_transform",
    "transform_to_pose",
    "chain_relative",
    "chain_transforms",
    "apply_transform",
    "relative_from_absolute",
    "poses_to_csv",
    "poses_from_csv",
]

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """6-DOF rigid motion: translation (mm) then Euler rotation (rad)."""

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.rx, self.ry, self.rz], dtype=float)

    @staticmethod
    def from_array(a) -> "Pose":
        a = np.asarray(a, dtype=float).reshape(6)
        return Pose(*(float(x) for x in a))


def _check_finite(p: Pose) -> None:
    if not all(math.isfinite(v) for v in (p.tx, p.ty, p.tz, p.rx, p.ry, p.rz)):
        raise ValueError(f"pose has non-finite components: {p}")


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """R = Rz(rz) @ Ry(ry) @ Rx(rx)."""
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=float)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=float)
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=float)
    return Rz @ Ry @ Rx


def pose_to_transform(p: Pose) -> np.ndarray:
    """4x4 homogeneous transform T = Trans(t) . Rz . Ry . Rx."""
    _check_finite(p)
    T = np.eye(4)
    T[:3, :3] = rotation_matrix(p.rx, p.ry, p.rz)
    T[:3, 3] = (p.tx, p.ty, p.tz)
    return T


def _check_rigid(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise ValueError(f"expected 4x4 matrix, got shape {T.shape}")
    R = T[:3, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL or np.linalg.det(R) < 0:
        raise ValueError("rotation block is not orthonormal with det +1")
    if np.max(np.abs(T[3] - (0, 0, 0, 1))) > _ORTHO_TOL:
        raise ValueError("bottom row must be (0,0,0,1)")
    return T


def transform_to_pose(T: np.ndarray) -> Pose:
    """Invert pose_to_transform.

    Gimbal lock (|ry| = pi/2): rx is fixed to 0 and the remaining freedom
    goes into rz, making the decomposition deterministic.
    """
    T = _check_rigid(T)
    R = T[:3, :3]
    sy = -R[2, 0]
    sy = min(1.0, max(-1.0, sy))
    ry = math.asin(sy)
    if abs(abs(sy) - 1.0) < 1e-12:
        rx = 0.0
        # with rx=0: R[0,1] = -cos(rx)sin(rz) ... solve from the 2x2 block
        rz = math.atan2(-R[0, 1], R[1, 1])
    else:
        rx = math.atan2(R[2, 1], R[2, 2])
        rz = math.atan2(R[1, 0], R[0, 0])
    return Pose(float(T[0, 3]), float(T[1, 3]), float(T[2, 3]), rx, ry, rz)


def apply_transform(T: np.ndarray, pt) -> np.ndarray:
    """R @ pt + t for a single 3-vector or an (n,3) batch."""
    T = np.asarray(T, dtype=float)
    pt = np.asarray(pt, dtype=float)
    return pt @ T[:3, :3].T + T[:3, 3]


def chain_transforms(rel: list[Pose]) -> list[np.ndarray]:
    """Absolute 4x4 transforms for frames 1..N given N-1 relative motions.

    Frame 1 is the identity; T_{i+1} = T_i @ T(rel_i).
    """
    if len(rel) == 0:
        raise ValueError("relative parameter list must be non-empty")
    out = [np.eye(4)]
    for r in rel:
        out.append(out[-1] @ pose_to_transform(r))
    return out


def chain_relative(rel: list[Pose]) -> list[Pose]:
    """Absolute poses (length N) from N-1 relative motions."""
    return [transform_to_pose(T) for T in chain_transforms(rel)]


def relative_from_absolute(abs_transforms: list[np.ndarray]) -> list[Pose]:
    """Recover relative motions T_i^-1 @ T_{i+1} from absolute transforms."""
    out = []
    for a, b in zip(abs_transforms[:-1], abs_transforms[1:]):
        out.append(transform_to_pose(np.linalg.inv(a) @ b))
    return out


def poses_to_csv(poses: list[Pose]) -> str:
    """One "tx,ty,tz,rx,ry,rz" row per pose, 17 significant digits."""
    lines = []
    for p in poses:
        lines.append(",".join(f"{v:.17g}" for v in p.as_array()))
    return "\n".join(lines) + "\n"


def poses_from_csv(text: str) -> list[Pose]:
    poses = []
    for line in text.strip().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split(",")]
        if len(vals) != 6:
            raise ValueError(f"expected 6 values per row, got {len(vals)}")
        poses.append(Pose(*vals))
    return poses
