"""Probe-motion skills and how pose noise turns into trajectory drift.

Walkthrough: generate the different trajectory kinds, then corrupt the
relative poses of a hybrid sweep with a small per-step bias + jitter (the
kind of error a pose estimator makes) and report the standard drift
metrics. Per-step errors compound along the chain, which is why a 0.05 mm
bias per frame ends up as millimeters of final drift.

Run: python3 demos/02_trajectories_and_drift.py
"""

import numpy as np

from usrecon.geometry import chain_transforms
from usrecon.metrics import drift_per_frame, evaluate
from usrecon.scansim import NoiseModel, TrajectorySpec, generate_trajectory, perturb_estimates

# --- the trajectory family ------------------------------------------------
kinds = {
    "linear": TrajectorySpec(kind="linear", n_frames=8, step=0.5),
    "loop": TrajectorySpec(kind="loop", n_frames=8, step=0.5, turn_back=4),
    "fast-slow": TrajectorySpec(kind="fast-slow", n_frames=8, step=0.5, amplitude=0.5, period=6.0),
    "sector": TrajectorySpec(kind="sector", n_frames=8, step=0.5, tilt=0.03),
}
for name, spec in kinds.items():
    rel = generate_trajectory(spec)
    steps = ", ".join(f"{p.tz:+.2f}" for p in rel)
    print(f"{name:>9}: tz steps [{steps}] mm")

# --- a hybrid sweep mixing all three skills -------------------------------
hybrid = TrajectorySpec(
    kind="hybrid",
    segments=[
        TrajectorySpec(kind="fast-slow", n_frames=10, step=0.5, amplitude=0.5, period=6.0),
        TrajectorySpec(kind="loop", n_frames=8, step=0.5, turn_back=4),
        TrajectorySpec(kind="sector", n_frames=8, step=0.5, tilt=0.03),
    ],
)
gt = generate_trajectory(hybrid)
n = len(gt) + 1
arc = sum(np.linalg.norm(np.diff([T[:3, 3] for T in chain_transforms(gt)], axis=0), axis=1))
print(f"\nhybrid sweep: {n} frames, {arc:.1f} mm arc length")

# --- perturb like a drifting estimator and evaluate -----------------------
noise = NoiseModel(bias=(0.0, 0.0, 0.05, 0.0, 0.0, 0.0),
                   sigma=(0.02,) * 6, seed=0)
est = perturb_estimates(gt, noise)
drift = drift_per_frame(gt, est)
print("per-frame drift (mm):",
      " ".join(f"{d:.2f}" for d in drift[:: max(1, n // 8)]), "...")

rep = evaluate(gt, est)
print(f"final drift {rep.final_drift:.2f} mm  |  FDR {rep.fdr:.1f}%  "
      f"ADR {rep.adr:.1f}%  MD {rep.md:.2f} mm  SD {rep.sd:.1f} mm  "
      f"HD {rep.hd:.2f} mm")
