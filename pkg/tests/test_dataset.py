"""Synthetic dataset generation, label-noise injection, and disk round-trip."""

import numpy as np
import pytest

from uvvolumes.dataset import (
    inject_label_noise,
    load_dataset,
    make_dataset,
    save_dataset,
)


def test_make_dataset_deterministic():
    a = make_dataset(n_views=3, n_poses=2, width=24, height=24, seed=7)
    b = make_dataset(n_views=3, n_poses=2, width=24, height=24, seed=7)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.rgb, fb.rgb)
        assert np.array_equal(fa.uv_image, fb.uv_image)
        assert np.array_equal(fa.mask, fb.mask)


def test_seed_changes_poses():
    a = make_dataset(n_views=2, n_poses=3, width=16, height=16, seed=1)
    b = make_dataset(n_views=2, n_poses=3, width=16, height=16, seed=2)
    assert not all(
        np.array_equal(pa.pose, pb.pose) for pa, pb in zip(a.poses, b.poses)
    )


def test_ring_azimuths_for_four_views():
    ds = make_dataset(n_views=4, n_poses=1, width=16, height=16, seed=0)
    center = np.mean([c.center for c in ds.cameras], axis=0)
    rel = [c.center - center for c in ds.cameras]
    az = sorted((np.arctan2(r[0], r[2]) + 1e-9) % (2 * np.pi) - 1e-9 for r in rel)
    expected = [0, np.pi / 2, np.pi, 3 * np.pi / 2]
    assert np.allclose(az, expected, atol=1e-9)


def test_holdout_split_disjoint_and_covering():
    ds = make_dataset(n_views=8, n_poses=10, width=16, height=16, seed=0)
    train = set(ds.train_indices())
    hv = set(ds.heldout_view_indices())
    hp = set(ds.heldout_pose_indices())
    assert train and hv and hp
    assert not (train & hv) and not (train & hp) and not (hv & hp)
    for p, v in train:
        assert p not in ds.heldout_poses and v not in ds.heldout_views


def test_label_noise_identity():
    ds = make_dataset(n_views=1, n_poses=1, width=32, height=32, seed=3)
    fr = ds.frames[0]
    out = inject_label_noise(fr, sigma_uv=0.0, flip_p=0.0, seed=5)
    assert np.array_equal(out.uv_image, fr.uv_image)
    assert np.array_equal(out.rgb, fr.rgb)
    assert out.uv_image is not fr.uv_image


def test_flip_p_one_changes_every_foreground_label():
    ds = make_dataset(n_views=1, n_poses=1, width=32, height=32, seed=3)
    fr = ds.frames[0]
    out = inject_label_noise(fr, sigma_uv=0.0, flip_p=1.0, seed=5)
    fg = fr.uv_image[..., 0] > 0
    assert np.all(out.uv_image[fg, 0] != fr.uv_image[fg, 0])
    # Flips stay within the valid label range and leave the background alone.
    assert np.all((out.uv_image[fg, 0] >= 1) & (out.uv_image[fg, 0] <= 24))
    assert np.array_equal(out.uv_image[~fg], fr.uv_image[~fg])
    assert np.array_equal(out.rgb, fr.rgb)
    assert np.array_equal(out.mask, fr.mask)


def test_uv_noise_magnitude():
    # |N(0, sigma)| has mean sigma * sqrt(2/pi); check the empirical mean of
    # the injected displacement against that, well inside the clamp region.
    ds = make_dataset(n_views=1, n_poses=1, width=96, height=96, seed=3)
    fr = ds.frames[0]
    sigma = 0.05
    out = inject_label_noise(fr, sigma_uv=sigma, flip_p=0.0, seed=5)
    fg = fr.uv_image[..., 0] > 0
    interior = fg & np.all(
        (fr.uv_image[..., 1:] > 0.2) & (fr.uv_image[..., 1:] < 0.8), axis=-1
    )
    d = np.abs(out.uv_image[interior, 1:] - fr.uv_image[interior, 1:])
    expected = sigma * np.sqrt(2 / np.pi)
    assert d.size > 500
    assert abs(d.mean() - expected) < 0.15 * expected
    assert np.all((out.uv_image[fg, 1:] >= 0) & (out.uv_image[fg, 1:] <= 1))


def test_label_noise_validation():
    ds = make_dataset(n_views=1, n_poses=1, width=8, height=8, seed=0)
    with pytest.raises(ValueError, match="sigma_uv"):
        inject_label_noise(ds.frames[0], sigma_uv=-0.1, flip_p=0.0, seed=0)
    with pytest.raises(ValueError, match="flip_p"):
        inject_label_noise(ds.frames[0], sigma_uv=0.0, flip_p=1.5, seed=0)


def test_save_load_round_trip(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.n_views == tiny_dataset.n_views
    assert back.n_poses == tiny_dataset.n_poses
    assert back.heldout_views == tiny_dataset.heldout_views
    assert back.heldout_poses == tiny_dataset.heldout_poses
    for fa, fb in zip(tiny_dataset.frames, back.frames):
        # RGB goes through 8-bit PNG; UV through float32; labels are exact.
        assert np.max(np.abs(fa.rgb - fb.rgb)) <= 1.0 / 255.0 + 1e-12
        assert np.array_equal(fa.uv_image[..., 0], fb.uv_image[..., 0])
        assert np.max(np.abs(fa.uv_image[..., 1:] - fb.uv_image[..., 1:])) < 1e-6
        assert np.array_equal(fa.mask, fb.mask)
    for ca, cb in zip(tiny_dataset.cameras, back.cameras):
        assert np.allclose(ca.center, cb.center)
        assert np.allclose(ca.rotation, cb.rotation)
    for pa, pb in zip(tiny_dataset.poses, back.poses):
        assert np.array_equal(pa.pose, pb.pose)
        assert np.array_equal(pa.shape, pb.shape)


def test_load_missing_dir_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")
