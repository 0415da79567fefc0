"""End-to-end experiment orchestration shared by the CLI and the demo scripts."""

from __future__ import annotations

import statistics
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .diffable import ObjectiveSpec, objective_forward, objective_gradient
from .geometry import Pose, chain_relative, poses_to_csv
from .imaging import (
    Ellipsoid,
    FrameGeometry,
    GridSpec,
    PhantomSpec,
    Tube,
    Volume,
    generate_phantom,
    write_sequence,
    write_volume,
)
from .losses import DiscriminatorParams, disc_pretrain, disc_to_csv
from .metrics import MetricsReport, evaluate, report_csv_row
from .recon import ReconParams, reconstruct
from .refine import RefineConfig, online_refine
from .scansim import NoiseModel, TrajectorySpec, generate_trajectory, perturb_estimates, simulate_scan

__all__ = [
    "default_config",
    "training_trajectories",
    "build_pools",
    "run_experiment",
    "run_bench",
    "run_gradcheck",
]


def default_config(seed: int = 0, out: str = "out") -> ExperimentConfig:
    """The seeded desk-scale benchmark: sphere+tube phantom, hybrid trajectory."""
    phantom = PhantomSpec(
        grid=GridSpec((48, 48, 48), (0.5, 0.5, 0.5), (-12.0, -12.0, -8.0)),
        ellipsoids=[
            Ellipsoid((2.0, -1.0, 4.0), (6.0, 5.0, 7.0), 0.85),
            Ellipsoid((-5.0, 4.0, 1.0), (2.5, 3.0, 2.0), 0.6),
            Ellipsoid((6.0, 5.0, 8.0), (2.0, 2.5, 3.0), 0.35),
            Ellipsoid((-2.0, -6.0, 9.0), (1.5, 1.5, 2.5), 0.7),
        ],
        tubes=[
            Tube((-8.0, -6.0, -2.0), (6.0, 8.0, 12.0), 2.5, 0.45),
            Tube((8.0, -8.0, 0.0), (-6.0, 6.0, 10.0), 1.2, 0.95),
        ],
        background=0.12,
        sigma=1.0,
    )
    trajectory = TrajectorySpec(
        kind="hybrid",
        segments=[
            TrajectorySpec(kind="fast-slow", n_frames=10, step=0.5, amplitude=0.5, period=6.0),
            TrajectorySpec(kind="loop", n_frames=8, step=0.5, turn_back=4),
            TrajectorySpec(kind="sector", n_frames=8, step=0.5, tilt=0.03),
        ],
    )
    geometry = FrameGeometry(40, 40, 0.5)
    noise = NoiseModel(
        bias=(0.0, 0.0, 0.05, 0.0, 0.0, 0.0),
        sigma=(0.02, 0.02, 0.02, 0.02, 0.02, 0.02),
        seed=seed,
    )
    recon = ReconParams(grid=GridSpec((32, 32, 40), (0.5, 0.5, 0.5), (-7.75, -7.75, -4.0)))
    refine = RefineConfig(recon=recon, seed=seed)
    return ExperimentConfig(
        phantom=phantom,
        trajectory=trajectory,
        geometry=geometry,
        start=Pose(),
        noise=noise,
        recon=recon,
        refine=refine,
        seed=seed,
        out=out,
    )


def training_trajectories(cfg: ExperimentConfig) -> list[TrajectorySpec]:
    """Deterministic trajectory variants used to build the real-volume pool."""
    n = sum(s.n_frames - 1 for s in cfg.trajectory.segments) + 1 if cfg.trajectory.kind == "hybrid" else cfg.trajectory.n_frames
    variants = [
        TrajectorySpec(kind="linear", n_frames=n, step=0.5),
        TrajectorySpec(kind="fast-slow", n_frames=n, step=0.5, amplitude=0.4, period=8.0),
        TrajectorySpec(kind="sector", n_frames=n, step=0.45, tilt=0.02),
        TrajectorySpec(kind="loop", n_frames=n, step=0.5, turn_back=max(1, (n - 1) * 2 // 3)),
    ]
    reps = (cfg.train_sequences + len(variants) - 1) // len(variants)
    return (variants * reps)[: cfg.train_sequences]


def build_pools(cfg: ExperimentConfig, phantom: Volume):
    """Real/fake volume pools plus a pretrained discriminator.

    Real volumes come from training trajectories reconstructed at ground-truth
    poses; fakes use the same sequences at noise-perturbed poses.
    """
    real, fake = [], []
    for i, traj in enumerate(training_trajectories(cfg)):
        rel = generate_trajectory(traj)
        seq = simulate_scan(phantom, rel, cfg.geometry, cfg.start)
        real.append(reconstruct(seq.frames, chain_relative(rel), cfg.recon))
        nm = NoiseModel(cfg.noise.bias, cfg.noise.sigma, seed=cfg.seed * 1000 + 101 + i)
        noisy = perturb_estimates(rel, nm)
        fake.append(reconstruct(seq.frames, chain_relative(noisy), cfg.recon))
    disc = disc_pretrain(real, fake, seed=cfg.seed)
    return real, fake, disc


def run_experiment(cfg: ExperimentConfig, write_files: bool = True) -> dict:
    """Simulate, perturb, refine, evaluate; optionally write every artifact."""
    phantom = generate_phantom(cfg.phantom, cfg.seed)
    gt = generate_trajectory(cfg.trajectory)
    seq = simulate_scan(phantom, gt, cfg.geometry, cfg.start)
    init = perturb_estimates(gt, cfg.noise)
    real_pool, _fake_pool, disc = build_pools(cfg, phantom)

    before = evaluate(gt, init, cfg.geometry)
    refined, disc_after, hist = online_refine(seq, init, disc, cfg.refine, real_pool)
    after = evaluate(gt, refined, cfg.geometry)

    result = {
        "phantom": phantom,
        "sequence": seq,
        "initial": init,
        "refined": refined,
        "before": before,
        "after": after,
        "history": hist,
        "discriminator": disc_after,
    }
    if write_files:
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        write_volume(phantom, outdir / "phantom.vol")
        write_sequence(seq, outdir / "sequence")
        (outdir / "initial_relative.csv").write_text(poses_to_csv(init))
        (outdir / "refined_relative.csv").write_text(poses_to_csv(refined))
        header = "fdr,adr,md,sd,hd,final_drift\n"
        (outdir / "metrics_before.csv").write_text(header + report_csv_row(before) + "\n")
        (outdir / "metrics_after.csv").write_text(header + report_csv_row(after) + "\n")
        (outdir / "history.csv").write_text(hist.to_csv())
        (outdir / "discriminator.csv").write_text(disc_to_csv(disc_after))
        write_volume(reconstruct(seq.frames, chain_relative(init), cfg.recon), outdir / "recon_before.vol")
        write_volume(reconstruct(seq.frames, chain_relative(refined), cfg.recon), outdir / "recon_after.vol")
    return result


def run_bench(cfg: ExperimentConfig, write_files: bool = True) -> str:
    """Multi-seed benchmark; returns the summary CSV text (with a median row)."""
    rows = []
    for i in range(cfg.bench_seeds):
        seed = cfg.seed + i
        sub = replace(
            cfg,
            seed=seed,
            noise=NoiseModel(cfg.noise.bias, cfg.noise.sigma, seed=seed),
            refine=replace(cfg.refine, seed=seed),
            out=str(Path(cfg.out) / f"seed_{seed}"),
        )
        res = run_experiment(sub, write_files=False)
        b, a = res["before"], res["after"]
        rows.append((seed, b.fdr, b.hd, a.fdr, a.hd))
    lines = ["seed,fdr_before,hd_before,fdr_after,hd_after"]
    for r in rows:
        lines.append(f"{r[0]}," + ",".join(f"{v:.17g}" for v in r[1:]))
    med = [statistics.median(col) for col in zip(*[r[1:] for r in rows])]
    lines.append("median," + ",".join(f"{v:.17g}" for v in med))
    text = "\n".join(lines) + "\n"
    if write_files:
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "summary.csv").write_text(text)
    return text


def _min_cell_margin(frames, poses: list[Pose], params: ReconParams) -> float:
    """Smallest distance (px) from any voxel projection to a bilinear cell line.

    Only projections at or near the slice footprint matter; anything further
    than one pixel outside can neither contribute nor start contributing within
    a finite-difference step.
    """
    from .recon import _projection_arrays

    g = frames[0].geometry
    centers = params.grid.voxel_centers()
    _, u, v, _ = _projection_arrays(centers, chain_relative(poses), g)
    near = (u > -1) & (u < g.width) & (v > -1) & (v < g.height)
    if not np.any(near):
        return 0.0
    fu = np.abs(u[near] - np.round(u[near]))
    fv = np.abs(v[near] - np.round(v[near]))
    return float(min(fu.min(), fv.min()))


def gradcheck_instance(seed: int, n_frames: int = 6, grid_n: int = 16):
    """Small seeded scene whose non-smooth points sit far from any FD step.

    The objectives are piecewise smooth: bilinear interpolation has slope
    kinks on pixel-cell lines, and a finite-difference step that straddles one
    reports the wrong slope no matter how exact the analytic gradient is. The
    pose noise is therefore translation-only (parallel slice planes keep every
    voxel projection on a rigid lattice), and the noise draw is redrawn until
    no projection sits within 5e-3 px of a cell line -- far beyond the reach
    of the 1e-4 mm / 1e-5 rad probe steps.
    """
    rng = np.random.default_rng(seed)
    half = grid_n * 0.25  # grid extent stays well inside the frame footprint
    phantom = PhantomSpec(
        grid=GridSpec((28, 28, 28), (0.5, 0.5, 0.5), (-7.0, -7.0, -5.0)),
        ellipsoids=[
            Ellipsoid(tuple(rng.uniform(-2, 2, 3)), tuple(rng.uniform(2.5, 5.0, 3)), 0.9),
            Ellipsoid(tuple(rng.uniform(-3, 3, 3)), tuple(rng.uniform(1.0, 2.0, 3)), 0.35),
        ],
        background=0.15,
        sigma=2.0,
    )
    vol = generate_phantom(phantom, seed)
    geom = FrameGeometry(24, 24, 0.5)
    step = 2.0 * half / max(n_frames - 1, 1) * 0.45
    gt = [Pose(tz=step) for _ in range(n_frames - 1)]
    seq = simulate_scan(vol, gt, geom, Pose(tz=-step * (n_frames - 1) / 2))
    grid = GridSpec((grid_n, grid_n, grid_n), (0.4, 0.4, 0.4), tuple(-0.4 * (grid_n - 1) / 2 for _ in range(3)))
    params = ReconParams(grid=grid)
    for attempt in range(64):
        nm = NoiseModel(sigma=(0.05, 0.05, 0.05, 0.0, 0.0, 0.0), seed=seed + 7 + 1009 * attempt)
        noisy = perturb_estimates(gt, nm)
        if _min_cell_margin(seq.frames, noisy, params) > 5e-3:
            return seq, noisy, params
    raise RuntimeError(f"no boundary-clear noise draw found for seed {seed}")


def finite_difference_gradient(frames, rel, params, spec, ht=1e-4, hr=1e-5):
    """Central differences on the objective forward path (the oracle side)."""
    rel = np.asarray(rel, dtype=float)
    fd = np.zeros_like(rel)
    for i in range(rel.shape[0]):
        for j in range(6):
            h = ht if j < 3 else hr
            plus = rel.copy()
            plus[i, j] += h
            minus = rel.copy()
            minus[i, j] -= h
            fd[i, j] = (
                objective_forward(frames, plus, params, spec)
                - objective_forward(frames, minus, params, spec)
            ) / (2 * h)
    return fd


def gradcheck_max_rel_error(frames, rel, params, spec, tiny=1e-8):
    _, grad = objective_gradient(frames, rel, params, spec)
    fd = finite_difference_gradient(frames, rel, params, spec)
    mask = np.abs(grad) > tiny
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(grad[mask] - fd[mask]) / np.abs(grad[mask])))


def ssl_gradcheck_masks(frames, rel, params, reco_idx, minus_idx, margin: float = 1e-3):
    """Fixed pixel masks keeping the SSL check away from |.| kinks and grid edges.

    Pixels whose slice residual could change sign within a finite-difference
    step, or whose sample point sits within a hair of the grid-validity
    boundary, are pinned out of the objective on both the analytic and the
    finite-difference side.
    """
    from .diffable import ssl_slice_diagnostics

    diags = ssl_slice_diagnostics(frames, rel, params, reco_idx, minus_idx)
    dims = np.asarray(params.grid.dims, dtype=float)
    cell_margin = 5e-3  # voxels; well above the FD step's reach
    masks = []
    for diff, ok, coords in diags:
        inside = np.all((coords > cell_margin) & (coords < dims - 1 - cell_margin), axis=2)
        frac = coords - np.floor(coords)
        off_planes = np.all((frac > cell_margin) & (frac < 1 - cell_margin), axis=2)
        masks.append(ok & inside & off_planes & (diff > margin))
    return masks


def run_gradcheck(seeds=range(3), tol: float = 1e-3, verbose: bool = True) -> tuple[bool, list[str]]:
    """FD-vs-analytic check on the SSL and adversarial objectives."""
    from .refine import split_sequence

    lines = []
    ok = True
    for seed in seeds:
        seq, noisy, params = gradcheck_instance(seed)
        rel = np.stack([p.as_array() for p in noisy])
        reco, minus = split_sequence(len(seq), 0.5)
        real, fake, disc = _tiny_disc(seq, params, seed)
        masks = ssl_gradcheck_masks(seq.frames, rel, params, reco, minus)
        specs = {
            "ssl": ObjectiveSpec(kind="ssl", reco_indices=reco, minus_indices=minus, pixel_masks=masks),
            "adversarial": ObjectiveSpec(kind="adversarial", disc=disc),
        }
        for name, spec in specs.items():
            err = gradcheck_max_rel_error(seq.frames, rel, params, spec)
            status = "PASS" if err <= tol else "FAIL"
            ok &= err <= tol
            lines.append(f"seed {seed} objective {name}: max rel err {err:.3e} {status}")
    return ok, lines


def _tiny_disc(seq, params, seed):
    from .geometry import chain_relative as _chain

    gt = seq.gt_relative
    real = [reconstruct(seq.frames, _chain(gt), params)]
    noisy = perturb_estimates(gt, NoiseModel(sigma=(0.1,) * 3 + (0.02,) * 3, seed=seed + 13))
    fake = [reconstruct(seq.frames, _chain(noisy), params)]
    disc = disc_pretrain(real, fake, seed=seed)
    return real, fake, disc
