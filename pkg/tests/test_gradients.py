import numpy as np
import pytest

from usrecon.diffable import ObjectiveSpec, objective_forward, objective_gradient
from usrecon.geometry import Pose, chain_relative
from usrecon.harness import (
    finite_difference_gradient,
    gradcheck_instance,
    gradcheck_max_rel_error,
    ssl_gradcheck_masks,
    _tiny_disc,
)
from usrecon.imaging import Frame, FrameGeometry, GridSpec
from usrecon.recon import ReconParams, reconstruct
from usrecon.refine import split_sequence


def _parallel_instance(seed=0, n_frames=4):
    rng = np.random.default_rng(seed)
    frames = [Frame(rng.uniform(0.1, 0.9, (10, 10)), 0.5) for _ in range(n_frames)]
    rel = np.array([[0.0, 0.0, 0.6, 0.0, 0.0, 0.0]] * (n_frames - 1))
    grid = GridSpec((6, 6, 6), (0.3, 0.3, 0.3), (-0.75, -0.75, 0.15))
    return frames, rel, ReconParams(grid=grid)


def test_forward_matches_numpy_reconstruction():
    frames, rel, params = _parallel_instance()
    spec = ObjectiveSpec(kind="voxel_sum")
    total = objective_forward(frames, rel, params, spec)
    vol = reconstruct(frames, chain_relative([Pose.from_array(r) for r in rel]), params)
    assert abs(total - vol.values.sum()) < 1e-10


def test_constant_frames_rotation_gradient_vanishes():
    frames, rel, params = _parallel_instance()
    frames = [Frame(np.full((10, 10), 0.5), 0.5) for _ in frames]
    _, grad = objective_gradient(frames, rel, params, ObjectiveSpec(kind="voxel_sum"))
    # rotating a plane inside a constant gray field changes nothing
    assert np.max(np.abs(grad[:, 3:])) < 1e-9


def test_single_voxel_probe_matches_fd_sign_and_value():
    frames, rel, params = _parallel_instance(seed=3)
    spec = ObjectiveSpec(kind="voxel_sum", voxel_index=57)
    _, grad = objective_gradient(frames, rel, params, spec)
    fd = finite_difference_gradient(frames, rel, params, spec)
    j = 2  # tz of the first relative entry
    assert np.sign(grad[0, j]) == np.sign(fd[0, j]) != 0
    assert abs(grad[0, j] - fd[0, j]) <= 1e-3 * abs(grad[0, j])


def test_ssl_objective_five_frame_gradcheck():
    seq, noisy, params = gradcheck_instance(seed=123, n_frames=5)
    rel = np.stack([p.as_array() for p in noisy])
    reco, minus = split_sequence(len(seq), 0.5)
    masks = ssl_gradcheck_masks(seq.frames, rel, params, reco, minus)
    spec = ObjectiveSpec(kind="ssl", reco_indices=reco, minus_indices=minus, pixel_masks=masks)
    err = gradcheck_max_rel_error(seq.frames, rel, params, spec)
    assert err <= 1e-3
    assert rel.size == 24  # 4 relative entries x 6 components


def test_adversarial_objective_gradcheck():
    seq, noisy, params = gradcheck_instance(seed=321)
    rel = np.stack([p.as_array() for p in noisy])
    _, _, disc = _tiny_disc(seq, params, seed=321)
    err = gradcheck_max_rel_error(seq.frames, rel, params, ObjectiveSpec(kind="adversarial", disc=disc))
    assert err <= 1e-3


def test_combined_objective_is_weighted_sum():
    seq, noisy, params = gradcheck_instance(seed=5)
    rel = np.stack([p.as_array() for p in noisy])
    reco, minus = split_sequence(len(seq), 0.5)
    _, _, disc = _tiny_disc(seq, params, seed=5)
    ssl = objective_forward(seq.frames, rel, params, ObjectiveSpec(kind="ssl", reco_indices=reco, minus_indices=minus))
    adv = objective_forward(seq.frames, rel, params, ObjectiveSpec(kind="adversarial", disc=disc))
    comb = objective_forward(
        seq.frames,
        rel,
        params,
        ObjectiveSpec(kind="combined", reco_indices=reco, minus_indices=minus, disc=disc, adv_weight=0.3, ssl_weight=2.0),
    )
    assert abs(comb - (0.3 * adv + 2.0 * ssl)) < 1e-12


def test_gradient_is_deterministic():
    frames, rel, params = _parallel_instance(seed=9)
    spec = ObjectiveSpec(kind="voxel_sum")
    l1, g1 = objective_gradient(frames, rel, params, spec)
    l2, g2 = objective_gradient(frames, rel, params, spec)
    assert l1 == l2 and np.array_equal(g1, g2)


def test_unknown_objective_rejected():
    frames, rel, params = _parallel_instance()
    with pytest.raises(ValueError):
        objective_gradient(frames, rel, params, ObjectiveSpec(kind="nope"))


def test_corrupted_gradient_fails_the_check():
    # negative control: a deliberately biased adjoint must not pass
    seq, noisy, params = gradcheck_instance(seed=2)
    rel = np.stack([p.as_array() for p in noisy])
    spec = ObjectiveSpec(kind="voxel_sum")
    _, grad = objective_gradient(seq.frames, rel, params, spec)
    fd = finite_difference_gradient(seq.frames, rel, params, spec)
    bad = grad * 1.01  # 1% multiplicative corruption
    mask = np.abs(bad) > 1e-8
    err = np.max(np.abs(bad[mask] - fd[mask]) / np.abs(bad[mask]))
    assert err > 1e-3
