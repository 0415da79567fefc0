"""Drift-based trajectory evaluation: final drift, FDR, ADR, MD, SD, HD.

Drift of frame i is the distance between its center point under the
ground-truth and estimated pose chains. "Sequence length" is the arc length
of the ground-truth center trajectory, which makes the drift rates true
percentages of distance traveled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, chain_transforms
from .imaging import FrameGeometry

__all__ = ["MetricsReport", "drift_per_frame", "evaluate", "hausdorff", "report_csv_row"]


@dataclass(frozen=True)
class MetricsReport:
    final_drift: float  # mm
    fdr: float  # %
    adr: float  # %
    md: float  # mm
    sd: float  # mm
    hd: float  # mm


def _centers(rel: list[Pose]) -> np.ndarray:
    return np.stack([T[:3, 3] for T in chain_transforms(rel)])


def drift_per_frame(gt: list[Pose], est: list[Pose], g: FrameGeometry | None = None) -> np.ndarray:
    """Per-frame center-point distance between gt- and est-chained poses."""
    if len(gt) != len(est):
        raise ValueError("gt and est must have equal length")
    cg = _centers(gt)
    ce = _centers(est)
    return np.array([float(np.linalg.norm(a - b)) for a, b in zip(cg, ce)])


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Bidirectional Hausdorff distance between two point sets, O(n^2)."""
    fwd = max(float(np.linalg.norm(b - p, axis=1).min()) for p in a)
    bwd = max(float(np.linalg.norm(a - p, axis=1).min()) for p in b)
    return max(fwd, bwd)


def evaluate(gt: list[Pose], est: list[Pose], g: FrameGeometry | None = None) -> MetricsReport:
    """Full drift-metric report for an estimated trajectory."""
    if len(gt) != len(est):
        raise ValueError("gt and est must have equal length")
    cg = _centers(gt)
    ce = _centers(est)
    drift = np.array([float(np.linalg.norm(a - b)) for a, b in zip(cg, ce)])
    seg = np.linalg.norm(np.diff(cg, axis=0), axis=1)
    arc_total = float(seg.sum())
    if arc_total <= 0:
        raise ValueError("ground-truth trajectory has zero arc length")
    arc_to = np.concatenate([[0.0], np.cumsum(seg)])
    # ADR skips frame 1 (zero arc-length denominator)
    adr = 100.0 * float(np.mean(drift[1:] / arc_to[1:]))
    return MetricsReport(
        final_drift=float(drift[-1]),
        fdr=100.0 * float(drift[-1]) / arc_total,
        adr=adr,
        md=float(drift.max()),
        sd=float(drift.sum()),
        hd=hausdorff(cg, ce),
    )


def report_csv_row(r: MetricsReport) -> str:
    """Table column order: fdr,adr,md,sd,hd with final_drift appended last."""
    return ",".join(
        f"{v:.17g}" for v in (r.fdr, r.adr, r.md, r.sd, r.hd, r.final_drift)
    )
