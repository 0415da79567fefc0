"""Reverse-mode gradients of scalar objectives w.r.t. relative pose parameters.

The forward pipeline (chain poses -> blend slices into a volume -> slice /
score the volume -> scalar) is re-expressed here in torch so that a single
backward pass yields the exact derivative of the composite. The numpy modules
remain the reference forward implementations; tests pin the two paths
together and check the gradients against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .imaging import Frame, FrameGeometry, GridSpec
from .recon import ReconParams

__all__ = ["ObjectiveSpec", "objective_value", "objective_gradient"]

# small fixed-size tensors; a single thread keeps reductions bit-reproducible
torch.set_num_threads(1)

_DT = torch.float64


def _pose_matrix(p6: torch.Tensor) -> torch.Tensor:
    """4x4 transform from (tx,ty,tz,rx,ry,rz), matching geometry.pose_to_transform."""
    tx, ty, tz, rx, ry, rz = p6.unbind()
    cx, sx = torch.cos(rx), torch.sin(rx)
    cy, sy = torch.cos(ry), torch.sin(ry)
    cz, sz = torch.cos(rz), torch.sin(rz)
    one = torch.ones((), dtype=_DT)
    zero = torch.zeros((), dtype=_DT)
    Rx = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    Ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    Rz = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    R = Rz @ Ry @ Rx
    top = torch.cat([R, torch.stack([tx, ty, tz]).unsqueeze(1)], dim=1)
    bottom = torch.tensor([[0.0, 0.0, 0.0, 1.0]], dtype=_DT)
    return torch.cat([top, bottom], dim=0)


def chain_transforms_t(rel: torch.Tensor) -> torch.Tensor:
    """Cumulative composition: (M,6) relative params -> (M+1,4,4) absolute transforms."""
    mats = [torch.eye(4, dtype=_DT)]
    for i in range(rel.shape[0]):
        mats.append(mats[-1] @ _pose_matrix(rel[i]))
    return torch.stack(mats)


def _bilinear_t(vals: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    h, w = vals.shape
    u = u.clamp(0.0, w - 1.0)
    v = v.clamp(0.0, h - 1.0)
    c0 = u.floor().long().clamp(max=w - 2)
    r0 = v.floor().long().clamp(max=h - 2)
    fu = u - c0
    fv = v - r0
    flat = vals.reshape(-1)
    i00 = r0 * w + c0
    return (
        flat[i00] * (1 - fv) * (1 - fu)
        + flat[i00 + 1] * (1 - fv) * fu
        + flat[i00 + w] * fv * (1 - fu)
        + flat[i00 + w + 1] * fv * fu
    )


def recon_grays_t(
    frames_t: torch.Tensor,
    T_abs: torch.Tensor,
    grid: GridSpec,
    geom: FrameGeometry,
    params: ReconParams,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable counterpart of recon.reconstruct.

    frames_t: (N,H,W) constant grays; T_abs: (N,4,4) with grad history.
    Returns flat voxel grays (x fastest) and a detached validity mask.
    """
    centers = torch.from_numpy(grid.voxel_centers()).to(_DT)
    R = T_abs[:, :3, :3]
    t = T_abs[:, :3, 3]
    diff = centers.unsqueeze(0) - t.unsqueeze(1)  # (N,V,3)
    q = torch.einsum("nij,nvi->nvj", R, diff)
    u = q[..., 0] / geom.spacing + (geom.width - 1) / 2.0
    v = q[..., 1] / geom.spacing + (geom.height - 1) / 2.0
    d = q[..., 2].abs()
    inb = (u >= 0) & (u <= geom.width - 1) & (v >= 0) & (v <= geom.height - 1)

    if params.support == "k-nearest" and params.k < frames_t.shape[0]:
        dmask = torch.where(inb, d, torch.inf).detach()
        order = torch.argsort(dmask, dim=0, stable=True)
        keep = torch.zeros_like(inb)
        cols = torch.arange(d.shape[1])
        for rank in range(params.k):
            keep[order[rank], cols] = True
        inb = inb & keep

    r = 1.0 / (d + params.epsilon)
    r = torch.where(inb, r, torch.full_like(r, -torch.inf))
    rmax = r.max(dim=0).values
    valid = torch.isfinite(rmax)
    e = torch.where(inb, torch.exp(r - torch.where(valid, rmax, torch.zeros_like(rmax))), torch.zeros_like(r))
    se = e.sum(dim=0)
    w = e / torch.where(se > 0, se, torch.ones_like(se))
    if params.mode == "nearest":
        w = torch.where(inb, w * (1.0 / (d + params.epsilon)), torch.zeros_like(w))
        sw = w.sum(dim=0)
        w = w / torch.where(sw > 0, sw, torch.ones_like(sw))

    grays = torch.stack([_bilinear_t(frames_t[j], u[j], v[j]) for j in range(frames_t.shape[0])])
    out = (w * torch.where(inb, grays, torch.zeros_like(grays))).sum(dim=0)
    out = torch.where(valid, out, torch.zeros_like(out))
    return out, valid.detach()


def slice_grays_t(
    vol_flat: torch.Tensor,
    vol_valid: torch.Tensor,
    grid: GridSpec,
    T: torch.Tensor,
    geom: FrameGeometry,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Trilinear resample of a (flat, x-fastest) voxel grid on a posed plane."""
    local = torch.from_numpy(geom.pixel_local_points()).to(_DT)
    world = local @ T[:3, :3].T + T[:3, 3]
    g = (world - torch.tensor(grid.origin, dtype=_DT)) / torch.tensor(grid.spacing, dtype=_DT)
    nx, ny, nz = grid.dims
    i0 = g.floor().long()
    dims = torch.tensor(grid.dims)
    inb = ((i0 >= 0) & (i0 + 1 <= dims - 1)).all(dim=1)
    i0c = torch.minimum(torch.clamp(i0, min=0), torch.clamp(dims - 2, min=0))
    frac = g - i0c.to(_DT)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    x0, y0, z0 = i0c[:, 0], i0c[:, 1], i0c[:, 2]
    acc = torch.zeros(world.shape[0], dtype=_DT)
    ok = inb.clone()
    for dx in (0, 1):
        wx = fx if dx else 1 - fx
        for dy in (0, 1):
            wy = fy if dy else 1 - fy
            for dz in (0, 1):
                wz = fz if dz else 1 - fz
                idx = (x0 + dx) + nx * ((y0 + dy) + ny * (z0 + dz))
                acc = acc + wx * wy * wz * vol_flat[idx]
                ok = ok & vol_valid[idx]
    grays = torch.where(ok, acc, torch.zeros_like(acc))
    return grays, ok.detach()


def _cell_ids(dims: tuple[int, int, int], pool: tuple[int, int, int]) -> np.ndarray:
    """Flat (x-fastest) voxel -> pooling-cell id, matching losses.disc_features."""
    ids_axis = []
    for n, c in zip(dims, pool):
        bounds = np.array_split(np.arange(n), c)
        a = np.empty(n, dtype=np.int64)
        for ci, chunk in enumerate(bounds):
            a[chunk] = ci
        ids_axis.append(a)
    nx, ny, nz = dims
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    cid = (
        ids_axis[0][ix] * (pool[1] * pool[2])
        + ids_axis[1][iy] * pool[2]
        + ids_axis[2][iz]
    )
    return cid.ravel(order="F")


def features_t(vol_flat: torch.Tensor, vol_valid: torch.Tensor, grid: GridSpec, disc) -> torch.Tensor:
    """Pooled-grid + soft-histogram feature vector (torch mirror of disc_features)."""
    pool = disc.pooled_grid
    bins = disc.hist_bins
    cid = torch.from_numpy(_cell_ids(grid.dims, pool))
    ncell = pool[0] * pool[1] * pool[2]
    vmask = vol_valid.to(_DT)
    sums = torch.zeros(ncell, dtype=_DT).index_add(0, cid, vol_flat * vmask)
    counts = torch.zeros(ncell, dtype=_DT).index_add(0, cid, vmask)
    pooled = sums / torch.where(counts > 0, counts, torch.ones_like(counts))

    g = vol_flat[vol_valid]
    if g.numel() == 0:
        return torch.cat([pooled, torch.zeros(bins, dtype=_DT)])
    b = g * (bins - 1)
    k0 = b.detach().floor().long().clamp(0, bins - 2)
    f = b - k0.to(_DT)
    s = f * f * (3.0 - 2.0 * f)  # smoothstep split keeps the histogram C1
    hist = torch.zeros(bins, dtype=_DT)
    hist = hist.index_add(0, k0, 1.0 - s)
    hist = hist.index_add(0, k0 + 1, s)
    hist = hist / g.numel()
    return torch.cat([pooled, hist])


@dataclass
class ObjectiveSpec:
    """Registered scalar pipelines differentiated w.r.t. relative pose params.

    kinds:
      voxel_sum   -- sum of reconstructed voxel grays (or one voxel's gray)
      ssl         -- context-consistency slice loss over the held-out frames
      adversarial -- negated discriminator score of the full reconstruction
      combined    -- adv_weight * adversarial + ssl_weight * ssl
    """

    kind: str
    reco_indices: list[int] | None = None
    minus_indices: list[int] | None = None
    disc: object | None = None  # losses.DiscriminatorParams
    adv_weight: float = 1.0
    ssl_weight: float = 1.0
    voxel_index: int | None = None
    # optional fixed per-held-out-frame pixel masks (H,W bools); gradient checks
    # use them to pin the SSL sum to pixels away from |.| kinks
    pixel_masks: list | None = None


def _frames_tensor(frames: list[Frame]) -> torch.Tensor:
    return torch.from_numpy(np.stack([f.values for f in frames])).to(_DT)


def _ssl_term(frames, frames_t, T_abs, params, geom, reco_idx, minus_idx, pixel_masks=None):
    sub_frames = frames_t[torch.tensor(reco_idx)]
    sub_T = torch.stack([T_abs[i] for i in reco_idx])
    vol, vol_valid = recon_grays_t(sub_frames, sub_T, params.grid, geom, params)
    num = torch.zeros((), dtype=_DT)
    cnt = 0
    for k, i in enumerate(minus_idx):
        pred, ok = slice_grays_t(vol, vol_valid, params.grid, T_abs[i], geom)
        if pixel_masks is not None:
            ok = ok & torch.from_numpy(np.asarray(pixel_masks[k], dtype=bool).reshape(-1))
        target = frames_t[i].reshape(-1)
        num = num + (torch.where(ok, (pred - target).abs(), torch.zeros_like(pred))).sum()
        cnt += int(ok.sum())
    if cnt == 0:
        return num  # zero, no valid pixels anywhere
    return num / cnt


def _adv_term(frames_t, T_abs, params, geom, disc):
    vol, vol_valid = recon_grays_t(frames_t, T_abs, params.grid, geom, params)
    f = features_t(vol, vol_valid, params.grid, disc)
    w = torch.from_numpy(np.asarray(disc.weights, dtype=np.float64))
    score = (w * f).sum() + disc.bias
    return -score


def objective_value(
    frames: list[Frame], rel: torch.Tensor, params: ReconParams, spec: ObjectiveSpec
) -> torch.Tensor:
    geom = frames[0].geometry
    frames_t = _frames_tensor(frames)
    T_abs = chain_transforms_t(rel)
    if spec.kind == "voxel_sum":
        vol, _ = recon_grays_t(frames_t, T_abs, params.grid, geom, params)
        return vol[spec.voxel_index] if spec.voxel_index is not None else vol.sum()
    if spec.kind == "ssl":
        return _ssl_term(
            frames, frames_t, T_abs, params, geom, spec.reco_indices, spec.minus_indices, spec.pixel_masks
        )
    if spec.kind == "adversarial":
        return _adv_term(frames_t, T_abs, params, geom, spec.disc)
    if spec.kind == "combined":
        adv = _adv_term(frames_t, T_abs, params, geom, spec.disc)
        ssl = _ssl_term(
            frames, frames_t, T_abs, params, geom, spec.reco_indices, spec.minus_indices, spec.pixel_masks
        )
        return spec.adv_weight * adv + spec.ssl_weight * ssl
    raise ValueError(f"unknown objective kind {spec.kind!r}")


def ssl_slice_diagnostics(frames, rel_params, params, reco_idx, minus_idx):
    """Per held-out frame: |pred - target| image, validity, and voxel-space coords.

    Forward-only helper for building kink-avoiding gradcheck pixel masks.
    """
    geom = frames[0].geometry
    out = []
    with torch.no_grad():
        rel = torch.from_numpy(np.asarray(rel_params, dtype=np.float64))
        frames_t = _frames_tensor(frames)
        T_abs = chain_transforms_t(rel)
        sub_frames = frames_t[torch.tensor(reco_idx)]
        sub_T = torch.stack([T_abs[i] for i in reco_idx])
        vol, vol_valid = recon_grays_t(sub_frames, sub_T, params.grid, geom, params)
        local = torch.from_numpy(geom.pixel_local_points()).to(_DT)
        for i in minus_idx:
            pred, ok = slice_grays_t(vol, vol_valid, params.grid, T_abs[i], geom)
            world = local @ T_abs[i][:3, :3].T + T_abs[i][:3, 3]
            coords = (world - torch.tensor(params.grid.origin, dtype=_DT)) / torch.tensor(
                params.grid.spacing, dtype=_DT
            )
            diff = (pred - frames_t[i].reshape(-1)).abs()
            out.append(
                (
                    diff.numpy().reshape(geom.height, geom.width),
                    ok.numpy().reshape(geom.height, geom.width),
                    coords.numpy().reshape(geom.height, geom.width, 3),
                )
            )
    return out


def objective_forward(frames, rel_params, params, spec) -> float:
    """Forward-only evaluation; rel_params is an (M,6) array of pose components."""
    rel = torch.from_numpy(np.asarray(rel_params, dtype=np.float64))
    with torch.no_grad():
        return float(objective_value(frames, rel, params, spec))


def objective_gradient(
    frames: list[Frame], rel_params, params: ReconParams, spec: ObjectiveSpec
) -> tuple[float, np.ndarray]:
    """Scalar objective and its exact reverse-mode gradient, shape (N-1, 6)."""
    rel = torch.from_numpy(np.asarray(rel_params, dtype=np.float64)).clone()
    rel.requires_grad_(True)
    loss = objective_value(frames, rel, params, spec)
    if rel.grad is not None:
        rel.grad = None
    loss.backward()
    grad = rel.grad.detach().numpy().copy() if rel.grad is not None else np.zeros_like(rel.detach().numpy())
    return float(loss.detach()), grad
