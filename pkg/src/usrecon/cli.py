"""Command-line harness.

Subcommands: phantom, scan, estimate, reconstruct, refine, eval, gradcheck,
bench. Exit codes: 0 success, 1 usage error, 2 numerical-check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig
from .geometry import chain_relative, poses_from_csv, poses_to_csv
from .harness import default_config, run_bench, run_experiment, run_gradcheck
from .imaging import generate_phantom, read_sequence, write_sequence, write_volume
from .metrics import evaluate, report_csv_row
from .recon import reconstruct
from .scansim import generate_trajectory, perturb_estimates, simulate_scan


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_text(Path(args.config).read_text())
    else:
        cfg = default_config()
    if args.seed is not None:
        from dataclasses import replace

        from .scansim import NoiseModel

        cfg = replace(
            cfg,
            seed=args.seed,
            noise=NoiseModel(cfg.noise.bias, cfg.noise.sigma, seed=args.seed),
            refine=replace(cfg.refine, seed=args.seed),
        )
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _cmd_phantom(cfg, args):
    vol = generate_phantom(cfg.phantom, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(vol, out / "phantom.vol")
    print(f"wrote {out / 'phantom.vol'}")
    return 0


def _cmd_scan(cfg, args):
    vol = generate_phantom(cfg.phantom, cfg.seed)
    rel = generate_trajectory(cfg.trajectory)
    seq = simulate_scan(vol, rel, cfg.geometry, cfg.start)
    out = Path(cfg.out)
    write_sequence(seq, out / "sequence")
    print(f"wrote {len(seq)} frames to {out / 'sequence'}")
    return 0


def _cmd_estimate(cfg, args):
    rel = generate_trajectory(cfg.trajectory)
    noisy = perturb_estimates(rel, cfg.noise)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "initial_relative.csv").write_text(poses_to_csv(noisy))
    print(f"wrote {out / 'initial_relative.csv'}")
    return 0


def _cmd_reconstruct(cfg, args):
    seq_dir = Path(args.sequence) if args.sequence else Path(cfg.out) / "sequence"
    seq = read_sequence(seq_dir)
    if args.poses:
        rel = poses_from_csv(Path(args.poses).read_text())
    elif seq.gt_relative is not None:
        rel = seq.gt_relative
    else:
        print("error: no pose source (pass --poses or store gt_relative.csv)", file=sys.stderr)
        return 1
    vol = reconstruct(seq.frames, chain_relative(rel), cfg.recon)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(vol, out / "reconstruction.vol")
    print(f"wrote {out / 'reconstruction.vol'}")
    return 0


def _cmd_refine(cfg, args):
    res = run_experiment(cfg, write_files=True)
    b, a = res["before"], res["after"]
    print(f"before: fdr={b.fdr:.3f}% hd={b.hd:.3f}mm")
    print(f"after:  fdr={a.fdr:.3f}% hd={a.hd:.3f}mm")
    print(f"artifacts in {cfg.out}")
    return 0


def _cmd_eval(cfg, args):
    gt = poses_from_csv(Path(args.gt).read_text())
    est = poses_from_csv(Path(args.est).read_text())
    rep = evaluate(gt, est, cfg.geometry)
    print("fdr,adr,md,sd,hd,final_drift")
    print(report_csv_row(rep))
    return 0


def _cmd_gradcheck(cfg, args):
    n = sum(s.n_frames - 1 for s in cfg.trajectory.segments) + 1 if cfg.trajectory.kind == "hybrid" else cfg.trajectory.n_frames
    if n > 8 or max(cfg.recon.grid.dims) > 24:
        print("error: gradcheck wants <= 8 frames and <= 24^3 grids", file=sys.stderr)
        return 1
    ok, lines = run_gradcheck(seeds=range(args.instances))
    for ln in lines:
        print(ln)
    return 0 if ok else 2


def _cmd_bench(cfg, args):
    text = run_bench(cfg, write_files=True)
    sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="usrecon", description=__doc__)
    parser.add_argument("--config", help="experiment config file (section.key = value lines)")
    parser.add_argument("--seed", type=int, help="override the experiment seed")
    parser.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("phantom", help="generate the phantom volume")
    sub.add_parser("scan", help="simulate the scan sequence")
    sub.add_parser("estimate", help="emit noisy initial pose estimates")
    p_rec = sub.add_parser("reconstruct", help="reconstruct a volume from a sequence")
    p_rec.add_argument("--sequence", help="sequence directory (default <out>/sequence)")
    p_rec.add_argument("--poses", help="relative-pose CSV (default the stored ground truth)")
    sub.add_parser("refine", help="run the full online refinement experiment")
    p_eval = sub.add_parser("eval", help="drift metrics for an estimated trajectory")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--est", required=True)
    p_gc = sub.add_parser("gradcheck", help="analytic-vs-finite-difference gradient check")
    p_gc.add_argument("--instances", type=int, default=3)
    sub.add_parser("bench", help="multi-seed refinement benchmark")

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0

    try:
        cfg = _load_config(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    handlers = {
        "phantom": _cmd_phantom,
        "scan": _cmd_scan,
        "estimate": _cmd_estimate,
        "reconstruct": _cmd_reconstruct,
        "refine": _cmd_refine,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](cfg, args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
