"""Training loss, shape-prior discriminator, and the adversarial loss pair.

The discriminator is deliberately lightweight: an affine score over a pooled
gray grid plus a soft gray histogram. The soft histogram keeps the score
differentiable in the voxel grays, which the pose-gradient checks rely on; a
hard-binned histogram would make the adversarial objective piecewise constant
in ways finite differences cannot track.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .imaging import Frame, Volume

__all__ = [
    "DiscriminatorParams",
    "RefineLossReport",
    "loss_train",
    "disc_features",
    "disc_score",
    "disc_pretrain",
    "loss_discriminator",
    "loss_generator",
    "disc_to_csv",
    "disc_from_csv",
]


@dataclass
class DiscriminatorParams:
    weights: np.ndarray  # length pooled + bins
    bias: float
    pooled_grid: tuple[int, int, int] = (8, 8, 8)
    hist_bins: int = 16

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = self.feature_length
        if self.weights.shape != (expected,):
            raise ValueError(f"weights must have length {expected}, got {self.weights.shape}")

    @property
    def feature_length(self) -> int:
        px, py, pz = self.pooled_grid
        return px * py * pz + self.hist_bins


@dataclass(frozen=True)
class RefineLossReport:
    L_d: float
    L_g: float
    ssl_term: float
    adv_term: float


def _flatten(params: list[Pose]) -> np.ndarray:
    return np.concatenate([p.as_array() for p in params])


def loss_train(est: list[Pose], gt: list[Pose]) -> float:
    """Mean absolute error plus (1 - Pearson correlation) over flattened params.

    A zero-variance side fixes the correlation term at the maximal penalty 1.
    """
    if len(est) != len(gt):
        raise ValueError("est and gt must have equal length")
    if len(est) < 2:
        raise ValueError("need at least 2 relative entries")
    a = _flatten(est)
    b = _flatten(gt)
    mae = float(np.mean(np.abs(a - b)))
    sa, sb = np.std(a), np.std(b)
    if sa < 1e-300 or sb < 1e-300:
        corr = 0.0
    else:
        corr = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return mae + (1.0 - corr)


def _soft_histogram(grays: np.ndarray, bins: int) -> np.ndarray:
    """Soft histogram with bin centers k/(bins-1), L1-normalized.

    Each gray splits its unit mass between the two nearest bin centers with a
    smoothstep weight, so the histogram is C1 in the grays (a hard or
    piecewise-linear split would put kinks in every gradient path through the
    discriminator score).
    """
    if grays.size == 0:
        return np.zeros(bins)
    b = grays * (bins - 1)
    k0 = np.clip(np.floor(b).astype(np.int64), 0, bins - 2)
    f = b - k0
    s = f * f * (3.0 - 2.0 * f)
    hist = np.zeros(bins)
    np.add.at(hist, k0, 1.0 - s)
    np.add.at(hist, k0 + 1, s)
    return hist / grays.size


def disc_features(
    v: Volume, pooled_grid: tuple[int, int, int] = (8, 8, 8), hist_bins: int = 16
) -> np.ndarray:
    """Average-pooled gray grid over valid voxels (empty cells 0) + soft histogram."""
    px, py, pz = pooled_grid
    chunks = [np.array_split(np.arange(n), c) for n, c in zip(v.dims, (px, py, pz))]
    pooled = np.zeros((px, py, pz))
    for ix, cx in enumerate(chunks[0]):
        for iy, cy in enumerate(chunks[1]):
            for iz, cz in enumerate(chunks[2]):
                block = v.values[np.ix_(cx, cy, cz)]
                bmask = v.mask[np.ix_(cx, cy, cz)]
                n = int(bmask.sum())
                pooled[ix, iy, iz] = float(block[bmask].sum() / n) if n else 0.0
    hist = _soft_histogram(v.values[v.mask], hist_bins)
    return np.concatenate([pooled.ravel(), hist])


def disc_score(v: Volume, c: DiscriminatorParams) -> float:
    """Raw affine score; no squashing (the adversarial loss uses raw scores)."""
    f = disc_features(v, c.pooled_grid, c.hist_bins)
    if f.shape != c.weights.shape:
        raise ValueError("feature length mismatch")
    return float(c.weights @ f + c.bias)


def disc_pretrain(
    real: list[Volume], fake: list[Volume], seed: int, steps: int = 200, lr: float = 0.1
) -> DiscriminatorParams:
    """Logistic regression (real=1, fake=0) by full-batch gradient descent."""
    if not real or not fake:
        raise ValueError("both pools must be non-empty")
    X = np.stack([disc_features(v) for v in real] + [disc_features(v) for v in fake])
    y = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    rng = np.random.default_rng(seed)
    w = 0.01 * rng.standard_normal(X.shape[1])
    b = 0.0
    for _ in range(steps):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        gz = (p - y) / len(y)
        w -= lr * (X.T @ gz)
        b -= lr * float(gz.sum())
    return DiscriminatorParams(w, b)


def _mutual_l1(V_f: Volume, V_r: Volume) -> float:
    if V_f.dims != V_r.dims:
        raise ValueError("volumes must share dims")
    both = V_f.mask & V_r.mask
    return float(np.sum(np.abs(V_f.values[both] - V_r.values[both])))


def loss_discriminator(V_f: Volume, V_r: Volume, c: DiscriminatorParams) -> float:
    """Adversarial critic loss with the quadratic-potential stabilizer.

    L_d = C(V_f) - C(V_r) + (C(V_f) - C(V_r))^2 / (2 * ||V_f - V_r||_1),
    the L1 taken over mutually valid voxels; a degenerate denominator (< 1e-12)
    zeroes the third term.
    """
    sf = disc_score(V_f, c)
    sr = disc_score(V_r, c)
    denom = _mutual_l1(V_f, V_r)
    quad = 0.0 if denom < 1e-12 else (sf - sr) ** 2 / (2.0 * denom)
    return sf - sr + quad


def loss_discriminator_grad(
    V_f: Volume, V_r: Volume, c: DiscriminatorParams
) -> tuple[float, np.ndarray, float]:
    """L_d and its closed-form gradient w.r.t. (weights, bias)."""
    ff = disc_features(V_f, c.pooled_grid, c.hist_bins)
    fr = disc_features(V_r, c.pooled_grid, c.hist_bins)
    sf = float(c.weights @ ff + c.bias)
    sr = float(c.weights @ fr + c.bias)
    denom = _mutual_l1(V_f, V_r)
    diff = sf - sr
    if denom < 1e-12:
        quad, dquad = 0.0, 0.0
    else:
        quad = diff**2 / (2.0 * denom)
        dquad = diff / denom
    # d(sf - sr)/dw = ff - fr; bias cancels in the difference
    gw = (ff - fr) * (1.0 + dquad)
    return diff + quad, gw, 0.0


def loss_generator(
    V_f: Volume,
    c: DiscriminatorParams,
    gen_slices: list[Frame],
    ref_slices: list[Frame],
    gen_valid: list[np.ndarray] | None = None,
) -> RefineLossReport:
    """L_g = -C(V_f) + mean |generated - reference| over valid generated pixels."""
    if len(gen_slices) != len(ref_slices):
        raise ValueError("slice lists must have equal length")
    num = 0.0
    cnt = 0
    for i, (a, b) in enumerate(zip(gen_slices, ref_slices)):
        if a.values.shape != b.values.shape:
            raise ValueError("slice geometry mismatch")
        diff = np.abs(a.values - b.values)
        if gen_valid is not None:
            m = gen_valid[i]
            num += float(diff[m].sum())
            cnt += int(m.sum())
        else:
            num += float(diff.sum())
            cnt += diff.size
    ssl = num / cnt if cnt else 0.0
    adv = -disc_score(V_f, c)
    return RefineLossReport(L_d=float("nan"), L_g=adv + ssl, ssl_term=ssl, adv_term=adv)


def disc_to_csv(c: DiscriminatorParams) -> str:
    buf = io.StringIO()
    buf.write(f"# pooled={c.pooled_grid[0]}x{c.pooled_grid[1]}x{c.pooled_grid[2]} bins={c.hist_bins}\n")
    for wv in c.weights:
        buf.write(f"{wv:.17g}\n")
    buf.write(f"{c.bias:.17g}\n")
    return buf.getvalue()


def disc_from_csv(text: str) -> DiscriminatorParams:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0]
    if not header.startswith("#"):
        raise ValueError("missing feature-spec header")
    spec = dict(tok.split("=") for tok in header[1:].split())
    pooled = tuple(int(x) for x in spec["pooled"].split("x"))
    bins = int(spec["bins"])
    vals = [float(x) for x in lines[1:]]
    return DiscriminatorParams(np.array(vals[:-1]), vals[-1], pooled, bins)
