import numpy as np
import pytest

from usrecon.geometry import Pose, chain_transforms
from usrecon.imaging import Ellipsoid, FrameGeometry, GridSpec, PhantomSpec, Volume, generate_phantom
from usrecon.scansim import (
    NoiseModel,
    TrajectorySpec,
    generate_trajectory,
    perturb_estimates,
    simulate_scan,
)


def test_linear_trajectory():
    rel = generate_trajectory(TrajectorySpec(kind="linear", n_frames=4, step=0.5))
    assert len(rel) == 3
    for p in rel:
        assert p == Pose(tz=0.5)


def test_loop_trajectory_reverses_after_turn_back():
    rel = generate_trajectory(TrajectorySpec(kind="loop", n_frames=5, step=0.5, turn_back=2))
    assert [p.tz for p in rel] == [0.5, 0.5, -0.5, -0.5]


def test_loop_returns_to_start():
    rel = generate_trajectory(TrajectorySpec(kind="loop", n_frames=9, step=0.4, turn_back=4))
    final = chain_transforms(rel)[-1][:3, 3]
    assert np.linalg.norm(final) < 1e-9


def test_fast_slow_follows_sine_schedule():
    rel = generate_trajectory(
        TrajectorySpec(kind="fast-slow", n_frames=3, step=0.5, amplitude=0.5, period=4.0)
    )
    # i=1: 0.5*(1+0.5*sin(pi/2)) = 0.75; i=2: 0.5*(1+0.5*sin(pi)) = 0.5
    assert np.allclose([p.tz for p in rel], [0.75, 0.5])


def test_sector_trajectory_tilts_each_step():
    rel = generate_trajectory(TrajectorySpec(kind="sector", n_frames=4, step=0.3, tilt=0.02))
    for p in rel:
        assert p.tz == 0.3 and p.rx == 0.02 and p.ry == 0.0


def test_hybrid_concatenates_segments():
    spec = TrajectorySpec(
        kind="hybrid",
        segments=[
            TrajectorySpec(kind="linear", n_frames=4, step=0.5),
            TrajectorySpec(kind="sector", n_frames=3, step=0.4, tilt=0.01),
        ],
    )
    rel = generate_trajectory(spec)
    assert len(rel) == (4 - 1) + (3 - 1)
    assert rel[3].rx == 0.01


def test_trajectory_determinism():
    spec = TrajectorySpec(kind="fast-slow", n_frames=8, step=0.5, amplitude=0.3, period=5.0)
    a = generate_trajectory(spec)
    b = generate_trajectory(spec)
    assert all(p == q for p, q in zip(a, b))


def test_trajectory_spec_validation():
    with pytest.raises(ValueError):
        TrajectorySpec(kind="linear", n_frames=1)
    with pytest.raises(ValueError):
        TrajectorySpec(kind="linear", step=0.0)
    with pytest.raises(ValueError):
        TrajectorySpec(kind="fast-slow", amplitude=1.0)
    with pytest.raises(ValueError):
        TrajectorySpec(kind="hybrid")
    with pytest.raises(ValueError):
        TrajectorySpec(kind="spiral")


def _sphere_volume():
    spec = PhantomSpec(
        grid=GridSpec((24, 24, 24), (0.5,) * 3, (-5.75, -5.75, -5.75)),
        ellipsoids=[Ellipsoid((0, 0, 0), (3.0, 3.0, 3.0), 0.9)],
        background=0.1,
        sigma=0.8,
    )
    return generate_phantom(spec, 0)


def test_simulate_constant_volume_gives_constant_frames():
    v = Volume(np.full((12, 12, 12), 0.3), GridSpec((12, 12, 12), (1.0,) * 3, (-5.5, -5.5, -5.5)))
    rel = generate_trajectory(TrajectorySpec(kind="linear", n_frames=4, step=1.0))
    seq = simulate_scan(v, rel, FrameGeometry(6, 6, 0.5), Pose(tz=-2.0))
    for fr in seq.frames:
        assert np.allclose(fr.values, 0.3)


def test_simulate_attaches_ground_truth_and_is_deterministic():
    v = _sphere_volume()
    rel = generate_trajectory(TrajectorySpec(kind="linear", n_frames=6, step=0.8))
    g = FrameGeometry(10, 10, 0.5)
    a = simulate_scan(v, rel, g, Pose(tz=-2.0))
    b = simulate_scan(v, rel, g, Pose(tz=-2.0))
    assert a.gt_relative is not None and len(a.gt_relative) == 5
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.values, fb.values)


def test_simulate_sphere_mean_gray_rises_then_falls():
    v = _sphere_volume()
    rel = generate_trajectory(TrajectorySpec(kind="linear", n_frames=9, step=1.0))
    seq = simulate_scan(v, rel, FrameGeometry(12, 12, 0.5), Pose(tz=-4.0))
    means = np.array([f.values.mean() for f in seq.frames])
    peak = int(np.argmax(means))
    assert 0 < peak < len(means) - 1
    assert np.all(np.diff(means[: peak + 1]) >= -1e-9)
    assert np.all(np.diff(means[peak:]) <= 1e-9)


def test_simulate_warns_on_low_coverage():
    v = _sphere_volume()
    rel = generate_trajectory(TrajectorySpec(kind="linear", n_frames=3, step=10.0))
    with pytest.warns(UserWarning):
        simulate_scan(v, rel, FrameGeometry(10, 10, 0.5), Pose())


def test_perturb_zero_noise_is_identity():
    gt = generate_trajectory(TrajectorySpec(kind="linear", n_frames=5, step=0.5))
    out = perturb_estimates(gt, NoiseModel())
    for p, q in zip(gt, out):
        assert p.as_array().tolist() == q.as_array().tolist()


def test_perturb_is_seeded():
    gt = generate_trajectory(TrajectorySpec(kind="linear", n_frames=5, step=0.5))
    nm = NoiseModel(sigma=(0.1,) * 6, seed=42)
    a = perturb_estimates(gt, nm)
    b = perturb_estimates(gt, nm)
    c = perturb_estimates(gt, NoiseModel(sigma=(0.1,) * 6, seed=43))
    assert all(p == q for p, q in zip(a, b))
    assert any(p != q for p, q in zip(a, c))


def test_perturb_bias_drifts_final_center():
    gt = generate_trajectory(TrajectorySpec(kind="linear", n_frames=11, step=0.5))
    nm = NoiseModel(bias=(0, 0, 0.1, 0, 0, 0))
    noisy = perturb_estimates(gt, nm)
    gt_final = chain_transforms(gt)[-1][:3, 3]
    est_final = chain_transforms(noisy)[-1][:3, 3]
    assert np.isclose(np.linalg.norm(est_final - gt_final), 1.0)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(bias=(0.0,) * 5)
    with pytest.raises(ValueError):
        NoiseModel(sigma=(-0.1,) + (0.0,) * 5)
