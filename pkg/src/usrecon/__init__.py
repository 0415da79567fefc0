"""Freehand 3D ultrasound reconstruction with online test-time pose refinement.

Core pieces:
  geometry  -- 6-DOF poses, transforms, relative-to-absolute chaining
  imaging   -- volumes, frames, trilinear sampling, slices, phantoms, file IO
  recon     -- distance-weighted differentiable reconstruction (forward path)
  diffable  -- reverse-mode gradients of scalar objectives w.r.t. poses
  scansim   -- scan-skill trajectory generators and the noisy estimator stand-in
  losses    -- training loss, shape-prior discriminator, adversarial losses
  refine    -- the online SSL + adversarial refinement loop
  metrics   -- drift metric suite (FDR/ADR/MD/SD/HD)
  harness   -- end-to-end experiments; cli -- command-line entry point
"""

from .geometry import Pose, chain_relative, pose_to_transform, transform_to_pose
from .imaging import Frame, FrameGeometry, GridSpec, PhantomSpec, Sequence, Volume, extract_slice, generate_phantom, trilinear_sample
from .losses import DiscriminatorParams, disc_pretrain, loss_discriminator, loss_generator, loss_train
from .metrics import MetricsReport, evaluate
from .recon import ReconParams, reconstruct, weights_nearest, weights_softmax
from .refine import RefineConfig, online_refine, split_sequence
from .scansim import NoiseModel, TrajectorySpec, generate_trajectory, perturb_estimates, simulate_scan

__version__ = "0.1.0"
