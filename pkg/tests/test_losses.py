import numpy as np
import pytest

from usrecon.geometry import Pose
from usrecon.imaging import Frame, GridSpec, Volume
from usrecon.losses import (
    DiscriminatorParams,
    disc_features,
    disc_from_csv,
    disc_pretrain,
    disc_score,
    disc_to_csv,
    loss_discriminator,
    loss_discriminator_grad,
    loss_generator,
    loss_train,
)


def _const_volume(gray, dims=(8, 8, 8), mask=None):
    grid = GridSpec(dims, (1.0,) * 3)
    return Volume(np.full(dims, gray), grid, mask)


# ---------------------------------------------------------------------------
# training loss


def _random_rel(seed, n=5):
    rng = np.random.default_rng(seed)
    return [Pose(*rng.standard_normal(6)) for _ in range(n)]


def test_loss_train_zero_at_truth():
    gt = _random_rel(0)
    assert loss_train(gt, gt) == pytest.approx(0.0, abs=1e-12)


def test_loss_train_constant_shift():
    gt = _random_rel(1)
    est = [Pose.from_array(p.as_array() + 0.3) for p in gt]
    assert loss_train(est, gt) == pytest.approx(0.3, abs=1e-12)


def test_loss_train_anticorrelated():
    rng = np.random.default_rng(2)
    flat = rng.standard_normal(5 * 6)
    flat -= flat.mean()
    gt = [Pose.from_array(flat[6 * i : 6 * i + 6]) for i in range(5)]
    est = [Pose.from_array(-p.as_array()) for p in gt]
    expect = np.mean(np.abs(2 * flat)) + 2.0
    assert loss_train(est, gt) == pytest.approx(expect, abs=1e-12)


def test_loss_train_zero_variance_penalty():
    # all 6 components equal -> the flattened vectors have zero variance
    gt = [Pose(0.5, 0.5, 0.5, 0.5, 0.5, 0.5)] * 3
    est = [Pose(0.5, 0.5, 0.5, 0.5, 0.5, 0.5)] * 3
    # mae 0, correlation term pinned at the maximal penalty 1
    assert loss_train(est, gt) == pytest.approx(1.0, abs=1e-12)


def test_loss_train_validates():
    with pytest.raises(ValueError):
        loss_train(_random_rel(0, 3), _random_rel(0, 4))
    with pytest.raises(ValueError):
        loss_train([Pose()], [Pose()])


def test_loss_train_nonnegative():
    for s in range(5):
        assert loss_train(_random_rel(s), _random_rel(s + 100)) >= 0.0


# ---------------------------------------------------------------------------
# features / score


def test_features_constant_volume():
    f = disc_features(_const_volume(0.4))
    assert f.shape == (528,)
    assert np.allclose(f[:512], 0.4)
    hist = f[512:]
    # 0.4*15 = 6.0 exactly on a bin center
    assert hist[6] == pytest.approx(1.0)
    assert hist.sum() == pytest.approx(1.0)


def test_features_all_invalid_volume():
    v = _const_volume(0.0, mask=np.zeros((8, 8, 8), dtype=bool))
    assert np.all(disc_features(v) == 0.0)


def test_features_half_half_histogram():
    vals = np.zeros((8, 8, 8))
    vals[4:] = 1.0
    v = Volume(vals, GridSpec((8, 8, 8), (1.0,) * 3))
    hist = disc_features(v)[512:]
    assert hist[0] == pytest.approx(0.5) and hist[-1] == pytest.approx(0.5)


def test_score_constant_and_linear():
    c = DiscriminatorParams(np.zeros(528), 0.7)
    v = _const_volume(0.3)
    assert disc_score(v, c) == pytest.approx(0.7)
    rng = np.random.default_rng(0)
    c1 = DiscriminatorParams(rng.standard_normal(528), 0.2)
    c2 = DiscriminatorParams(2 * c1.weights, 2 * c1.bias)
    assert disc_score(v, c2) == pytest.approx(2 * disc_score(v, c1))


def test_score_matches_dot_product():
    rng = np.random.default_rng(1)
    w = rng.standard_normal(528)
    v = _const_volume(0.25)
    c = DiscriminatorParams(w, -0.1)
    assert disc_score(v, c) == pytest.approx(float(w @ disc_features(v)) - 0.1, abs=1e-12)


def test_discriminator_params_length_checked():
    with pytest.raises(ValueError):
        DiscriminatorParams(np.zeros(100), 0.0)


# ---------------------------------------------------------------------------
# pretraining


def _pools(seed, sep=0.5):
    rng = np.random.default_rng(seed)
    grid = GridSpec((8, 8, 8), (1.0,) * 3)
    real = [Volume(np.clip(rng.uniform(0.5, 0.5 + sep, (8, 8, 8)), 0, 1), grid) for _ in range(6)]
    fake = [Volume(rng.uniform(0.0, 0.4, (8, 8, 8)), grid) for _ in range(6)]
    return real, fake


def test_pretrain_separable_pools():
    real, fake = _pools(0)
    c = disc_pretrain(real, fake, seed=0)
    scores_r = [disc_score(v, c) for v in real]
    scores_f = [disc_score(v, c) for v in fake]
    correct = sum(s > 0 for s in scores_r) + sum(s < 0 for s in scores_f)
    assert correct / 12 >= 0.95


def test_pretrain_identical_pools_near_chance():
    real, _ = _pools(1)
    c = disc_pretrain(real, real, seed=0)
    scores = [disc_score(v, c) for v in real]
    acc = (sum(s > 0 for s in scores) + sum(s < 0 for s in scores)) / (2 * len(scores))
    assert abs(acc - 0.5) <= 0.1


def test_pretrain_deterministic():
    real, fake = _pools(2)
    a = disc_pretrain(real, fake, seed=3)
    b = disc_pretrain(real, fake, seed=3)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_pretrain_requires_non_empty_pools():
    real, fake = _pools(3)
    with pytest.raises(ValueError):
        disc_pretrain(real, [], seed=0)


# ---------------------------------------------------------------------------
# adversarial losses


def test_loss_discriminator_zero_when_scores_equal():
    v = _const_volume(0.3)
    c = DiscriminatorParams(np.zeros(528), 0.5)
    assert loss_discriminator(v, _const_volume(0.6), c) == pytest.approx(0.0)


def test_loss_discriminator_derived_value():
    # scores 0 vs 1 with L1 distance 10 -> -1 + 1/20 = -0.95
    grid = GridSpec((10, 10, 10), (1.0,) * 3)
    vf = Volume(np.zeros((10, 10, 10)), grid)
    vals = np.zeros((10, 10, 10))
    vals.ravel()[:100] = 0.1  # L1 = 10
    vr = Volume(vals, grid)
    w = np.zeros(528)
    feats_r = disc_features(vr)
    feats_f = disc_features(vf)
    # one weight engineered so C(V_f)=0 and C(V_r)=1
    j = int(np.argmax(np.abs(feats_r - feats_f)))
    w[j] = 1.0 / (feats_r[j] - feats_f[j])
    c = DiscriminatorParams(w, -float(w[j] * feats_f[j]))
    assert disc_score(vf, c) == pytest.approx(0.0, abs=1e-12)
    assert disc_score(vr, c) == pytest.approx(1.0, abs=1e-12)
    assert loss_discriminator(vf, vr, c) == pytest.approx(-0.95, abs=1e-9)


def test_loss_discriminator_swap_symmetry():
    rng = np.random.default_rng(4)
    grid = GridSpec((8, 8, 8), (1.0,) * 3)
    vf = Volume(rng.uniform(0, 1, (8, 8, 8)), grid)
    vr = Volume(rng.uniform(0, 1, (8, 8, 8)), grid)
    c = DiscriminatorParams(rng.standard_normal(528) * 0.01, 0.1)
    sf, sr = disc_score(vf, c), disc_score(vr, c)
    l1 = float(np.abs(vf.values - vr.values).sum())
    quad = (sf - sr) ** 2 / (2 * l1)
    assert loss_discriminator(vf, vr, c) == pytest.approx((sf - sr) + quad, abs=1e-12)
    assert loss_discriminator(vr, vf, c) == pytest.approx((sr - sf) + quad, abs=1e-12)


def test_loss_discriminator_score_shift_invariance():
    rng = np.random.default_rng(5)
    grid = GridSpec((8, 8, 8), (1.0,) * 3)
    vf = Volume(rng.uniform(0, 1, (8, 8, 8)), grid)
    vr = Volume(rng.uniform(0, 1, (8, 8, 8)), grid)
    w = rng.standard_normal(528) * 0.01
    a = loss_discriminator(vf, vr, DiscriminatorParams(w, 0.0))
    b = loss_discriminator(vf, vr, DiscriminatorParams(w, 123.0))
    assert a == pytest.approx(b, abs=1e-9)


def test_loss_discriminator_grad_matches_fd():
    rng = np.random.default_rng(6)
    grid = GridSpec((8, 8, 8), (1.0,) * 3)
    vf = Volume(rng.uniform(0, 1, (8, 8, 8)), grid)
    vr = Volume(rng.uniform(0, 1, (8, 8, 8)), grid)
    w = rng.standard_normal(528) * 0.01
    c = DiscriminatorParams(w.copy(), 0.0)
    _, gw, gb = loss_discriminator_grad(vf, vr, c)
    h = 1e-6
    for j in rng.choice(528, 8, replace=False):
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        fd = (
            loss_discriminator(vf, vr, DiscriminatorParams(wp, 0.0))
            - loss_discriminator(vf, vr, DiscriminatorParams(wm, 0.0))
        ) / (2 * h)
        assert gw[j] == pytest.approx(fd, rel=1e-6, abs=1e-10)
    assert gb == 0.0  # the bias cancels in the score difference


def test_loss_generator_identities():
    v = _const_volume(0.2)
    g = 0.5
    c = DiscriminatorParams(np.zeros(528), g)
    frames = [Frame(np.full((4, 4), 0.3), 1.0)]
    rep = loss_generator(v, c, frames, frames)
    assert rep.L_g == pytest.approx(-0.5)
    assert rep.ssl_term == pytest.approx(0.0)
    assert rep.adv_term == pytest.approx(-0.5)


def test_loss_generator_constant_offset():
    v = _const_volume(0.2)
    c = DiscriminatorParams(np.zeros(528), -0.25)
    a = [Frame(np.full((4, 4), 0.4), 1.0)]
    b = [Frame(np.full((4, 4), 0.3), 1.0)]
    rep = loss_generator(v, c, a, b)
    assert rep.L_g == pytest.approx(0.1 + 0.25, abs=1e-12)
    assert rep.L_g == pytest.approx(rep.adv_term + rep.ssl_term, abs=1e-12)


def test_loss_generator_respects_validity_masks():
    v = _const_volume(0.2)
    c = DiscriminatorParams(np.zeros(528), 0.0)
    a = [Frame(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)]
    b = [Frame(np.zeros((2, 2)), 1.0)]
    m = np.array([[True, False], [True, True]])
    rep = loss_generator(v, c, a, b, gen_valid=[m])
    assert rep.ssl_term == pytest.approx(0.0)


def test_disc_csv_round_trip():
    rng = np.random.default_rng(7)
    c = DiscriminatorParams(rng.standard_normal(528), 0.123)
    d = disc_from_csv(disc_to_csv(c))
    assert np.array_equal(c.weights, d.weights)
    assert c.bias == d.bias and c.pooled_grid == d.pooled_grid and c.hist_bins == d.hist_bins
