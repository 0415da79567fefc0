"""Volumes, frames, trilinear sampling, slice extraction, phantoms, and file IO.

Frame pixel (r, c) sits at local point
    x = (c - (width-1)/2) * spacing,  y = (r - (height-1)/2) * spacing,  z = 0
so the image center is the frame origin and the plane normal is local +z.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import Pose, apply_transform, pose_to_transform, poses_from_csv, poses_to_csv

__all__ = [
    "GridSpec",
    "Volume",
    "Frame",
    "FrameGeometry",
    "Sequence",
    "Ellipsoid",
    "Tube",
    "PhantomSpec",
    "trilinear_sample",
    "trilinear_sample_many",
    "extract_slice",
    "generate_phantom",
    "write_volume",
    "read_volume",
    "write_frame_pgm",
    "read_frame_pgm",
    "write_sequence",
    "read_sequence",
]


@dataclass(frozen=True)
class GridSpec:
    """Regular 3D grid: voxel counts, spacing (mm/voxel), origin (mm, center of voxel 0,0,0)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(int(d) < 1 for d in self.dims):
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be > 0, got {self.spacing}")

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape (nx*ny*nz, 3), x fastest."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([ix.ravel(order="F"), iy.ravel(order="F"), iz.ravel(order="F")], axis=1)
        return idx * np.asarray(self.spacing) + np.asarray(self.origin)


class Volume:
    """Regular scalar grid with validity mask; grays in [0,1], invalid voxels hold 0."""

    def __init__(self, values: np.ndarray, grid: GridSpec, mask: np.ndarray | None = None):
        values = np.asarray(values, dtype=np.float64)
        if tuple(values.shape) != tuple(grid.dims):
            raise ValueError(f"values shape {values.shape} != grid dims {grid.dims}")
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError("mask shape mismatch")
        if np.any((values < 0) | (values > 1)):
            raise ValueError("volume grays must lie in [0,1]")
        values = np.where(mask, values, 0.0)
        self.values = values
        self.mask = mask
        self.grid = grid

    @property
    def dims(self):
        return self.grid.dims

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def origin(self):
        return self.grid.origin


@dataclass(frozen=True)
class FrameGeometry:
    height: int
    width: int
    spacing: float  # mm per pixel, isotropic in-plane

    def __post_init__(self):
        if self.height < 2 or self.width < 2 or self.spacing <= 0:
            raise ValueError(f"invalid frame geometry {self}")

    def pixel_local_points(self) -> np.ndarray:
        """Local (x,y,0) coordinates of every pixel, shape (h*w, 3), row-major."""
        r, c = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        x = (c.ravel() - (self.width - 1) / 2.0) * self.spacing
        y = (r.ravel() - (self.height - 1) / 2.0) * self.spacing
        return np.stack([x, y, np.zeros_like(x)], axis=1)


class Frame:
    """Single 2D grayscale image with square pixels."""

    def __init__(self, values: np.ndarray, spacing: float):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
            raise ValueError(f"frame must be 2D with dims >= 2, got {values.shape}")
        if np.any((values < 0) | (values > 1)):
            raise ValueError("frame grays must lie in [0,1]")
        if spacing <= 0:
            raise ValueError("pixel spacing must be > 0")
        self.values = values
        self.spacing = float(spacing)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def geometry(self) -> FrameGeometry:
        return FrameGeometry(self.height, self.width, self.spacing)


@dataclass
class Sequence:
    """Ordered scan: frames sharing one geometry, optional ground-truth motion."""

    frames: list[Frame]
    geometry: FrameGeometry
    gt_relative: list[Pose] | None = None

    def __post_init__(self):
        for f in self.frames:
            if f.geometry != self.geometry:
                raise ValueError("all frames must share the sequence geometry")
        if self.gt_relative is not None and len(self.gt_relative) != len(self.frames) - 1:
            raise ValueError("ground truth must have length N-1")

    def __len__(self):
        return len(self.frames)


# ---------------------------------------------------------------------------
# sampling


def trilinear_sample_many(v: Volume, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear interpolation at (n,3) world points.

    Returns (grays, valid). A sample is invalid (gray 0) when any of its 8
    neighbouring voxels is outside the grid or mask-invalid.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    g = (pts - np.asarray(v.origin)) / np.asarray(v.spacing)
    i0 = np.floor(g).astype(np.int64)
    frac = g - i0
    dims = np.asarray(v.dims)
    inb = np.all((i0 >= 0) & (i0 + 1 <= dims - 1), axis=1)
    i0c = np.clip(i0, 0, np.maximum(dims - 2, 0))

    grays = np.zeros(len(pts))
    valid = inb.copy()
    vals = v.values
    mask = v.mask
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    x0, y0, z0 = i0c[:, 0], i0c[:, 1], i0c[:, 2]
    acc = np.zeros(len(pts))
    ok = np.ones(len(pts), dtype=bool)
    for dx in (0, 1):
        wx = fx if dx else 1.0 - fx
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dz in (0, 1):
                wz = fz if dz else 1.0 - fz
                corner = vals[x0 + dx, y0 + dy, z0 + dz]
                ok &= mask[x0 + dx, y0 + dy, z0 + dz]
                acc = acc + wx * wy * wz * corner
    valid &= ok
    grays = np.where(valid, acc, 0.0)
    return grays, valid


def trilinear_sample(v: Volume, pt) -> tuple[float, bool]:
    grays, valid = trilinear_sample_many(v, np.asarray(pt, dtype=float).reshape(1, 3))
    return float(grays[0]), bool(valid[0])


def extract_slice(v: Volume, p: Pose, g: FrameGeometry) -> Frame:
    """Resample the volume on the oriented plane of pose p; invalid samples give 0."""
    T = pose_to_transform(p)
    world = apply_transform(T, g.pixel_local_points())
    grays, _ = trilinear_sample_many(v, world)
    return Frame(grays.reshape(g.height, g.width), g.spacing)


def slice_validity(v: Volume, p: Pose, g: FrameGeometry) -> np.ndarray:
    """Per-pixel validity of extract_slice, shape (h, w)."""
    T = pose_to_transform(p)
    world = apply_transform(T, g.pixel_local_points())
    _, valid = trilinear_sample_many(v, world)
    return valid.reshape(g.height, g.width)


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]  # mm
    radii: tuple[float, float, float]  # mm
    gray: float


@dataclass(frozen=True)
class Tube:
    """Cylinder of given radius around the segment p0->p1."""

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float
    gray: float


@dataclass
class PhantomSpec:
    grid: GridSpec
    ellipsoids: list[Ellipsoid] = field(default_factory=list)
    tubes: list[Tube] = field(default_factory=list)
    background: float = 0.0
    sigma: float = 0.0  # gaussian smoothing, in voxels
    noise: float = 0.0  # seeded additive gaussian texture amplitude


def generate_phantom(spec: PhantomSpec, seed: int) -> Volume:
    """Rasterize ellipsoid/tube composition onto the grid, smooth, clip to [0,1].

    Deterministic for fixed (spec, seed); later structures overwrite earlier
    ones.
    """
    if not spec.ellipsoids and not spec.tubes:
        raise ValueError("phantom spec must contain at least one structure")
    nx, ny, nz = spec.grid.dims
    centers = spec.grid.voxel_centers()
    vals = np.full(nx * ny * nz, float(spec.background))

    for e in spec.ellipsoids:
        d = (centers - np.asarray(e.center)) / np.asarray(e.radii)
        inside = np.sum(d * d, axis=1) <= 1.0
        vals[inside] = e.gray
    for t in spec.tubes:
        p0 = np.asarray(t.p0, dtype=float)
        axis = np.asarray(t.p1, dtype=float) - p0
        L2 = float(axis @ axis)
        rel = centers - p0
        s = np.clip((rel @ axis) / L2, 0.0, 1.0) if L2 > 0 else np.zeros(len(rel))
        closest = p0 + s[:, None] * axis
        inside = np.sum((centers - closest) ** 2, axis=1) <= t.radius**2
        vals[inside] = t.gray

    grid3 = vals.reshape((nx, ny, nz), order="F")
    if spec.sigma > 0:
        grid3 = gaussian_filter(grid3, sigma=spec.sigma, mode="nearest")
    if spec.noise > 0:
        rng = np.random.default_rng(seed)
        grid3 = grid3 + spec.noise * rng.standard_normal(grid3.shape)
    grid3 = np.clip(grid3, 0.0, 1.0)
    return Volume(grid3, spec.grid)


# ---------------------------------------------------------------------------
# file formats


def write_volume(v: Volume, path: str | Path) -> None:
    """Text header + raw little-endian f32 payload (x fastest), then mask bytes."""
    path = Path(path)
    header = (
        f"dims: {v.dims[0]} {v.dims[1]} {v.dims[2]}\n"
        f"spacing: {v.spacing[0]:.17g} {v.spacing[1]:.17g} {v.spacing[2]:.17g}\n"
        f"origin: {v.origin[0]:.17g} {v.origin[1]:.17g} {v.origin[2]:.17g}\n"
        "dtype: f32le\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(v.values.astype("<f4").ravel(order="F").tobytes())
        f.write(v.mask.astype(np.uint8).ravel(order="F").tobytes())


def read_volume(path: str | Path) -> Volume:
    with open(path, "rb") as f:
        data = f.read()
    lines = []
    pos = 0
    for _ in range(4):
        nl = data.index(b"\n", pos)
        lines.append(data[pos:nl].decode("ascii"))
        pos = nl + 1
    fields = {}
    for ln in lines:
        key, _, rest = ln.partition(":")
        fields[key.strip()] = rest.split()
    dims = tuple(int(x) for x in fields["dims"])
    spacing = tuple(float(x) for x in fields["spacing"])
    origin = tuple(float(x) for x in fields["origin"])
    if fields["dtype"] != ["f32le"]:
        raise ValueError(f"unsupported dtype {fields['dtype']}")
    n = dims[0] * dims[1] * dims[2]
    vals = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float64)
    mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos + 4 * n).astype(bool)
    grid = GridSpec(dims, spacing, origin)
    return Volume(vals.reshape(dims, order="F"), grid, mask.reshape(dims, order="F"))


def write_frame_pgm(fr: Frame, path: str | Path) -> None:
    """Binary PGM, maxval 255; grays quantized by round(g*255)."""
    q = np.round(fr.values * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{fr.width} {fr.height}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_frame_pgm(path: str | Path, spacing: float) -> Frame:
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise ValueError("only maxval 255 PGMs are supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=m.end())
    return Frame(pix.reshape(h, w).astype(np.float64) / 255.0, spacing)


def write_sequence(seq: Sequence, directory: str | Path) -> None:
    """Numbered PGMs + geometry.txt + optional gt_relative.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        write_frame_pgm(fr, directory / f"frame_{i:04d}.pgm")
    g = seq.geometry
    (directory / "geometry.txt").write_text(
        f"height: {g.height}\nwidth: {g.width}\nspacing: {g.spacing:.17g}\n"
    )
    if seq.gt_relative is not None:
        (directory / "gt_relative.csv").write_text(poses_to_csv(seq.gt_relative))


def read_sequence(directory: str | Path) -> Sequence:
    directory = Path(directory)
    fields = {}
    for ln in (directory / "geometry.txt").read_text().splitlines():
        key, _, rest = ln.partition(":")
        fields[key.strip()] = rest.strip()
    geom = FrameGeometry(int(fields["height"]), int(fields["width"]), float(fields["spacing"]))
    frames = []
    for p in sorted(directory.glob("frame_*.pgm")):
        frames.append(read_frame_pgm(p, geom.spacing))
    gt = None
    gt_path = directory / "gt_relative.csv"
    if gt_path.exists():
        gt = poses_from_csv(gt_path.read_text())
    return Sequence(frames, geom, gt)
