"""Line-based experiment configuration: ``section.key = value`` with # comments.

Lists are comma-separated. Structured entries (phantom structures, hybrid
trajectory segments) use numbered sub-keys, e.g. ``phantom.ellipsoid.0``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .geometry import Pose
from .imaging import Ellipsoid, FrameGeometry, GridSpec, PhantomSpec, Tube
from .recon import ReconParams
from .refine import RefineConfig
from .scansim import NoiseModel, TrajectorySpec

__all__ = ["ExperimentConfig", "parse_config_text", "serialize_config"]


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value mapping; keys keep their full dotted path."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",")]


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


@dataclass
class ExperimentConfig:
    phantom: PhantomSpec
    trajectory: TrajectorySpec
    geometry: FrameGeometry
    start: Pose
    noise: NoiseModel
    recon: ReconParams
    refine: RefineConfig
    seed: int = 0
    out: str = "out"
    bench_seeds: int = 10
    train_sequences: int = 4

    @staticmethod
    def from_text(text: str) -> "ExperimentConfig":
        kv = parse_config_text(text)
        return ExperimentConfig.from_mapping(kv)

    @staticmethod
    def from_mapping(kv: dict[str, str]) -> "ExperimentConfig":
        def get(key, default=None):
            if key in kv:
                return kv[key]
            if default is None:
                raise ValueError(f"missing config key {key!r}")
            return default

        grid = GridSpec(
            _ints(get("phantom.dims")),
            tuple(_floats(get("phantom.spacing"))),
            tuple(_floats(get("phantom.origin", "0,0,0"))),
        )
        ellipsoids = []
        i = 0
        while f"phantom.ellipsoid.{i}" in kv:
            v = _floats(kv[f"phantom.ellipsoid.{i}"])
            ellipsoids.append(Ellipsoid(tuple(v[0:3]), tuple(v[3:6]), v[6]))
            i += 1
        tubes = []
        i = 0
        while f"phantom.tube.{i}" in kv:
            v = _floats(kv[f"phantom.tube.{i}"])
            tubes.append(Tube(tuple(v[0:3]), tuple(v[3:6]), v[6], v[7]))
            i += 1
        phantom = PhantomSpec(
            grid=grid,
            ellipsoids=ellipsoids,
            tubes=tubes,
            background=float(get("phantom.background", "0")),
            sigma=float(get("phantom.sigma", "0")),
            noise=float(get("phantom.noise", "0")),
        )

        trajectory = _trajectory_from(kv, "trajectory")
        geometry = FrameGeometry(
            int(get("geometry.height")), int(get("geometry.width")), float(get("geometry.spacing"))
        )
        start = Pose(*_floats(get("scan.start", "0,0,0,0,0,0")))
        noise = NoiseModel(
            tuple(_floats(get("noise.bias", "0,0,0,0,0,0"))),
            tuple(_floats(get("noise.sigma", "0,0,0,0,0,0"))),
            int(get("noise.seed", "0")),
        )
        recon_grid = GridSpec(
            _ints(get("recon.dims")),
            tuple(_floats(get("recon.spacing"))),
            tuple(_floats(get("recon.origin", "0,0,0"))),
        )
        recon = ReconParams(
            grid=recon_grid,
            epsilon=float(get("recon.epsilon", "1e-6")),
            mode=get("recon.mode", "softmax"),
            support=get("recon.support", "all-slices"),
            k=int(get("recon.k", "1")),
        )
        refine = RefineConfig(
            recon=recon,
            proportion=float(get("refine.proportion", "0.5")),
            iterations=int(get("refine.iterations", "30")),
            lr_translation=float(get("refine.lr_translation", "2e-2")),
            lr_rotation=float(get("refine.lr_rotation", "2e-3")),
            lr_discriminator=float(get("refine.lr_discriminator", "0.05")),
            critic_steps=int(get("refine.critic_steps", "3")),
            adv_weight=float(get("refine.adv_weight", "0.05")),
            ssl_weight=float(get("refine.ssl_weight", "1")),
            seed=int(get("experiment.seed", "0")),
        )
        return ExperimentConfig(
            phantom=phantom,
            trajectory=trajectory,
            geometry=geometry,
            start=start,
            noise=noise,
            recon=recon,
            refine=refine,
            seed=int(get("experiment.seed", "0")),
            out=get("experiment.out", "out"),
            bench_seeds=int(get("bench.seeds", "10")),
            train_sequences=int(get("bench.train_sequences", "4")),
        )

    def to_text(self) -> str:
        buf = io.StringIO()

        def put(key, *vals):
            buf.write(f"{key} = {','.join(_fmt(v) for v in vals)}\n")

        def _fmt(v):
            return f"{v:.17g}" if isinstance(v, float) else str(v)

        put("experiment.seed", self.seed)
        put("experiment.out", self.out)
        p = self.phantom
        put("phantom.dims", *p.grid.dims)
        put("phantom.spacing", *(float(x) for x in p.grid.spacing))
        put("phantom.origin", *(float(x) for x in p.grid.origin))
        put("phantom.background", float(p.background))
        put("phantom.sigma", float(p.sigma))
        put("phantom.noise", float(p.noise))
        for i, e in enumerate(p.ellipsoids):
            put(f"phantom.ellipsoid.{i}", *(float(x) for x in (*e.center, *e.radii, e.gray)))
        for i, t in enumerate(p.tubes):
            put(f"phantom.tube.{i}", *(float(x) for x in (*t.p0, *t.p1, t.radius, t.gray)))
        _trajectory_to(buf, "trajectory", self.trajectory)
        g = self.geometry
        put("geometry.height", g.height)
        put("geometry.width", g.width)
        put("geometry.spacing", float(g.spacing))
        put("scan.start", *(float(x) for x in self.start.as_array()))
        put("noise.bias", *(float(x) for x in self.noise.bias))
        put("noise.sigma", *(float(x) for x in self.noise.sigma))
        put("noise.seed", self.noise.seed)
        r = self.recon
        put("recon.dims", *r.grid.dims)
        put("recon.spacing", *(float(x) for x in r.grid.spacing))
        put("recon.origin", *(float(x) for x in r.grid.origin))
        put("recon.epsilon", float(r.epsilon))
        put("recon.mode", r.mode)
        put("recon.support", r.support)
        put("recon.k", r.k)
        rf = self.refine
        put("refine.proportion", float(rf.proportion))
        put("refine.iterations", rf.iterations)
        put("refine.lr_translation", float(rf.lr_translation))
        put("refine.lr_rotation", float(rf.lr_rotation))
        put("refine.lr_discriminator", float(rf.lr_discriminator))
        put("refine.critic_steps", rf.critic_steps)
        put("refine.adv_weight", float(rf.adv_weight))
        put("refine.ssl_weight", float(rf.ssl_weight))
        put("bench.seeds", self.bench_seeds)
        put("bench.train_sequences", self.train_sequences)
        return buf.getvalue()


def serialize_config(cfg: ExperimentConfig) -> str:
    return cfg.to_text()


def _trajectory_from(kv: dict[str, str], prefix: str) -> TrajectorySpec:
    kind = kv.get(f"{prefix}.kind", "linear")
    if kind == "hybrid":
        segments = []
        i = 0
        while f"{prefix}.segment.{i}.kind" in kv:
            segments.append(_trajectory_from(kv, f"{prefix}.segment.{i}"))
            i += 1
        return TrajectorySpec(kind="hybrid", segments=segments)
    return TrajectorySpec(
        kind=kind,
        n_frames=int(kv.get(f"{prefix}.n_frames", "2")),
        step=float(kv.get(f"{prefix}.step", "0.5")),
        turn_back=int(kv.get(f"{prefix}.turn_back", "1")),
        amplitude=float(kv.get(f"{prefix}.amplitude", "0")),
        period=float(kv.get(f"{prefix}.period", "8")),
        tilt=float(kv.get(f"{prefix}.tilt", "0")),
    )


def _trajectory_to(buf, prefix: str, t: TrajectorySpec) -> None:
    buf.write(f"{prefix}.kind = {t.kind}\n")
    if t.kind == "hybrid":
        for i, seg in enumerate(t.segments):
            _trajectory_to(buf, f"{prefix}.segment.{i}", seg)
        return
    buf.write(f"{prefix}.n_frames = {t.n_frames}\n")
    buf.write(f"{prefix}.step = {t.step:.17g}\n")
    buf.write(f"{prefix}.turn_back = {t.turn_back}\n")
    buf.write(f"{prefix}.amplitude = {t.amplitude:.17g}\n")
    buf.write(f"{prefix}.period = {t.period:.17g}\n")
    buf.write(f"{prefix}.tilt = {t.tilt:.17g}\n")
