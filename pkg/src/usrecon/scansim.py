"""Scan-trajectory generators, scan simulation, and the noisy-estimator stand-in.

Trajectory kinds model probe skills: linear advance, loop (retraced path),
fast-and-slow (speed-modulated advance), sector (fanning tilt), and hybrid
concatenations of the above.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, chain_transforms, pose_to_transform, transform_to_pose
from .imaging import Frame, FrameGeometry, Sequence, Volume, extract_slice, slice_validity

__all__ = [
    "TrajectorySpec",
    "NoiseModel",
    "generate_trajectory",
    "simulate_scan",
    "perturb_estimates",
]


@dataclass
class TrajectorySpec:
    kind: str  # linear | loop | fast-slow | sector | hybrid
    n_frames: int = 2
    step: float = 0.5  # mm advance per frame
    turn_back: int = 1  # loop: entries 1..turn_back advance, the rest retreat
    amplitude: float = 0.0  # fast-slow: speed modulation in [0,1)
    period: float = 8.0  # fast-slow: modulation period in frames
    tilt: float = 0.0  # sector: per-frame rotation about the frame x-axis, rad
    segments: list["TrajectorySpec"] = field(default_factory=list)

    def __post_init__(self):
        if self.kind != "hybrid" and self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.kind != "hybrid" and self.step <= 0:
            raise ValueError("step must be > 0")
        if not 0 <= self.amplitude < 1:
            raise ValueError("amplitude must be in [0,1)")
        if self.kind == "hybrid" and not self.segments:
            raise ValueError("hybrid trajectory needs segments")
        if self.kind not in ("linear", "loop", "fast-slow", "sector", "hybrid"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")


def generate_trajectory(spec: TrajectorySpec) -> list[Pose]:
    """Relative motions (length n_frames-1) for the given scan skill."""
    if spec.kind == "linear":
        return [Pose(tz=spec.step) for _ in range(spec.n_frames - 1)]
    if spec.kind == "loop":
        out = []
        for i in range(1, spec.n_frames):
            z = spec.step if i <= spec.turn_back else -spec.step
            out.append(Pose(tz=z))
        return out
    if spec.kind == "fast-slow":
        out = []
        for i in range(1, spec.n_frames):
            z = spec.step * (1.0 + spec.amplitude * math.sin(2.0 * math.pi * i / spec.period))
            out.append(Pose(tz=z))
        return out
    if spec.kind == "sector":
        return [Pose(tz=spec.step, rx=spec.tilt) for _ in range(spec.n_frames - 1)]
    # hybrid: concatenated segment outputs
    out = []
    for seg in spec.segments:
        out.extend(generate_trajectory(seg))
    return out


@dataclass
class NoiseModel:
    bias: tuple[float, ...] = (0.0,) * 6  # per-component, mm/rad per frame
    sigma: tuple[float, ...] = (0.0,) * 6
    seed: int = 0

    def __post_init__(self):
        if len(self.bias) != 6 or len(self.sigma) != 6:
            raise ValueError("bias and sigma must be 6-vectors")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma must be >= 0")


def simulate_scan(v: Volume, rel: list[Pose], g: FrameGeometry, start: Pose = Pose()) -> Sequence:
    """Slice the volume along the chained trajectory, attaching the ground truth.

    Warns (and proceeds) when a frame keeps less than half its pixels inside
    the volume.
    """
    T_start = pose_to_transform(start)
    frames = []
    for i, T in enumerate(chain_transforms(rel)):
        world_pose = transform_to_pose(T_start @ T)
        fr = extract_slice(v, world_pose, g)
        coverage = float(slice_validity(v, world_pose, g).mean())
        if coverage < 0.5:
            warnings.warn(
                f"frame {i}: only {coverage:.0%} of pixels sample inside the volume",
                stacklevel=2,
            )
        frames.append(fr)
    return Sequence(frames, g, gt_relative=list(rel))


def perturb_estimates(gt: list[Pose], nm: NoiseModel) -> list[Pose]:
    """Add per-component bias + seeded gaussian noise to each relative motion."""
    rng = np.random.default_rng(nm.seed)
    bias = np.asarray(nm.bias, dtype=float)
    sigma = np.asarray(nm.sigma, dtype=float)
    out = []
    for p in gt:
        noisy = p.as_array() + bias + sigma * rng.standard_normal(6)
        out.append(Pose.from_array(noisy))
    return out
