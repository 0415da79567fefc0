"""Differentiable-reconstruction forward path: distance weights and voxel gathering.

Each target voxel center is projected onto every slice plane; slice grays at
the projections are blended with softmax (or nearest-emphasis) weights of the
reciprocal perpendicular distances. Out-of-bounds projections are dropped
before the weights normalize; voxels no slice can see are mask-invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, pose_to_transform
from .imaging import Frame, FrameGeometry, GridSpec, Volume

__all__ = [
    "ReconParams",
    "Projection",
    "project_to_slice",
    "weights_softmax",
    "weights_nearest",
    "reconstruct",
]

DEFAULT_EPSILON = 1e-6


@dataclass
class ReconParams:
    grid: GridSpec
    epsilon: float = DEFAULT_EPSILON  # mm, keeps 1/d finite
    mode: str = "softmax"  # "softmax" | "nearest"
    support: str = "all-slices"  # "all-slices" | "k-nearest"
    k: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.mode not in ("softmax", "nearest"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.support not in ("all-slices", "k-nearest"):
            raise ValueError(f"unknown support {self.support!r}")
        if self.support == "k-nearest" and self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Projection:
    d: float  # perpendicular distance to the slice plane, mm
    u: float  # continuous column coordinate on the slice
    v: float  # continuous row coordinate on the slice
    in_bounds: bool


def project_to_slice(pt, p: Pose, g: FrameGeometry) -> Projection:
    """Orthogonal projection of a world point onto a posed frame plane."""
    T = pose_to_transform(p)
    q = T[:3, :3].T @ (np.asarray(pt, dtype=float) - T[:3, 3])
    u = q[0] / g.spacing + (g.width - 1) / 2.0
    v = q[1] / g.spacing + (g.height - 1) / 2.0
    inb = (0.0 <= u <= g.width - 1) and (0.0 <= v <= g.height - 1)
    return Projection(abs(float(q[2])), float(u), float(v), inb)


def weights_softmax(d, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """softmax of 1/(d+eps), computed with max-subtraction."""
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("distance list must be non-empty")
    if np.any(d < 0) or eps <= 0:
        raise ValueError("distances must be >= 0 and eps > 0")
    r = 1.0 / (d + eps)
    e = np.exp(r - np.max(r))
    return e / np.sum(e)


def weights_nearest(d, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Sharper variant: reciprocal-scaled softmax, renormalized to sum 1."""
    d = np.asarray(d, dtype=np.float64)
    r = 1.0 / (np.asarray(d, dtype=np.float64) + eps)
    u = r * weights_softmax(d, eps)
    return u / np.sum(u)


def _bilinear(frame_vals: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample at (row v, col u); callers guarantee in-bounds coords."""
    h, w = frame_vals.shape
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    c0 = np.minimum(np.floor(u).astype(np.int64), w - 2)
    r0 = np.minimum(np.floor(v).astype(np.int64), h - 2)
    fu = u - c0
    fv = v - r0
    return (
        frame_vals[r0, c0] * (1 - fv) * (1 - fu)
        + frame_vals[r0, c0 + 1] * (1 - fv) * fu
        + frame_vals[r0 + 1, c0] * fv * (1 - fu)
        + frame_vals[r0 + 1, c0 + 1] * fv * fu
    )


def _projection_arrays(centers, abs_poses, g):
    """Per-slice distance/uv/in-bounds arrays for all voxel centers.

    Returns (d, u, v, inb) each of shape (n_slices, n_voxels).
    """
    n = len(abs_poses)
    m = len(centers)
    d = np.empty((n, m))
    u = np.empty((n, m))
    v = np.empty((n, m))
    for j, p in enumerate(abs_poses):
        T = pose_to_transform(p)
        q = (centers - T[:3, 3]) @ T[:3, :3]
        u[j] = q[:, 0] / g.spacing + (g.width - 1) / 2.0
        v[j] = q[:, 1] / g.spacing + (g.height - 1) / 2.0
        d[j] = np.abs(q[:, 2])
    inb = (u >= 0) & (u <= g.width - 1) & (v >= 0) & (v <= g.height - 1)
    return d, u, v, inb


def reconstruct(frames: list[Frame], abs_poses: list[Pose], params: ReconParams) -> Volume:
    """Blend slice grays into the target grid with distance-based weights."""
    if len(frames) != len(abs_poses):
        raise ValueError("frames and poses must have equal length")
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    g = frames[0].geometry
    centers = params.grid.voxel_centers()
    d, u, v, inb = _projection_arrays(centers, abs_poses, g)

    if params.support == "k-nearest" and params.k < len(frames):
        # keep only the k smallest in-bounds distances per voxel
        dmask = np.where(inb, d, np.inf)
        order = np.argsort(dmask, axis=0, kind="stable")
        keep = np.zeros_like(inb)
        cols = np.arange(d.shape[1])
        for rank in range(params.k):
            keep[order[rank], cols] = True
        inb = inb & keep

    r = np.where(inb, 1.0 / (d + params.epsilon), -np.inf)
    rmax = np.max(r, axis=0)
    valid = np.isfinite(rmax)
    e = np.where(inb, np.exp(r - np.where(valid, rmax, 0.0)), 0.0)
    se = np.sum(e, axis=0)
    w = e / np.where(se > 0, se, 1.0)
    if params.mode == "nearest":
        w = np.where(inb, w * (1.0 / (d + params.epsilon)), 0.0)
        sw = np.sum(w, axis=0)
        w = w / np.where(sw > 0, sw, 1.0)

    grays = np.stack([_bilinear(fr.values, u[j], v[j]) for j, fr in enumerate(frames)])
    out = np.sum(w * np.where(inb, grays, 0.0), axis=0)
    out = np.where(valid, np.clip(out, 0.0, 1.0), 0.0)
    nx, ny, nz = params.grid.dims
    return Volume(
        out.reshape((nx, ny, nz), order="F"),
        params.grid,
        valid.reshape((nx, ny, nz), order="F"),
    )
