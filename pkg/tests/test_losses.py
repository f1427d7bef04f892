"""Loss arithmetic, schedules, and ray-direction perturbation."""

import numpy as np
import pytest

from uvvolumes import autodiff as ad
from uvvolumes.autodiff import Tensor
from uvvolumes.losses import (
    LAMBDA_SIL,
    anneal_weights,
    circular_u_delta,
    half_pixel_angle,
    loss_rgb,
    loss_silhouette,
    loss_total,
    loss_warmstart,
    lr_schedule,
    perturb_ray_directions,
)
from uvvolumes.scene import BodyConfig, pose_body, ring_cameras


def test_loss_rgb_uniform_offset():
    # Every channel off by 0.1 -> MSE = 0.01 exactly.
    pred = Tensor(np.full((7, 3), 0.6))
    target = np.full((7, 3), 0.5)
    assert abs(loss_rgb(pred, target).data - 0.01) < 1e-15


def test_loss_rgb_zero_and_shape_error():
    pred = Tensor(np.random.default_rng(0).uniform(size=(4, 3)))
    assert loss_rgb(pred, pred.data.copy()).data == 0.0
    with pytest.raises(ad.ShapeError):
        loss_rgb(pred, np.zeros((5, 3)))


def test_cross_entropy_uniform_prediction():
    # Uniform prediction over 24 parts against any one-hot target: ln 24.
    n = 6
    probs = Tensor(np.full((n, 24), 1.0 / 24.0))
    uv = Tensor(np.full((n, 2), 0.5))
    onehot = np.eye(24)[np.arange(n) % 24]
    l_p, _ = loss_warmstart(probs, uv, onehot, np.zeros(n), np.zeros(n))
    assert abs(l_p.data - np.log(24.0)) < 1e-9


def test_circular_u_wraps_across_seam():
    # U = 0.95 vs 0.05 is a distance of 0.10 on the circle, not 0.90.
    d = circular_u_delta(Tensor(np.array([0.95])), np.array([0.05]))
    assert abs(abs(d.data[0]) - 0.10) < 1e-12
    d2 = circular_u_delta(Tensor(np.array([0.05])), np.array([0.95]))
    assert abs(abs(d2.data[0]) - 0.10) < 1e-12
    d3 = circular_u_delta(Tensor(np.array([0.3])), np.array([0.2]))
    assert abs(d3.data[0] - 0.1) < 1e-12


def test_uv_loss_uses_circular_distance():
    n = 1
    probs = Tensor(np.eye(24)[:n])
    uv = Tensor(np.array([[0.95, 0.5]]))
    _, l_uv = loss_warmstart(probs, uv, np.eye(24)[:n], np.array([0.05]), np.array([0.5]))
    assert abs(l_uv.data - 0.10**2) < 1e-12


def test_warmstart_rejects_non_distributions():
    probs = Tensor(np.full((2, 24), 1.0 / 24.0))
    uv = Tensor(np.full((2, 2), 0.5))
    bad = np.zeros((2, 24))
    bad[:, 0] = 1.5
    with pytest.raises(ValueError, match="distributions"):
        loss_warmstart(probs, uv, bad, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError, match="shape"):
        loss_warmstart(probs, uv, np.ones((2, 23)) / 23, np.zeros(2), np.zeros(2))


def test_silhouette_corner_cases_exact():
    # Opaque foreground pixel (T = 0, S = 0) -> 0; transparent background
    # (T = 1, S = 1) -> 0; the two mismatches -> 1.
    cases = [
        (0.0, 0.0, 0.0),
        (1.0, 1.0, 0.0),
        (1.0, 0.0, 1.0),
        (0.0, 1.0, 1.0),
    ]
    for t, s, expect in cases:
        val = loss_silhouette(Tensor(np.array([t])), np.array([s])).data
        assert val == expect
    mixed = loss_silhouette(
        Tensor(np.array([0.0, 1.0, 1.0, 0.0])), np.array([0.0, 1.0, 0.0, 1.0])
    )
    assert abs(mixed.data - 0.5) < 1e-15


def test_silhouette_shape_error():
    with pytest.raises(ad.ShapeError):
        loss_silhouette(Tensor(np.zeros(3)), np.zeros(4))


def test_loss_total_bookkeeping():
    l_rgb = Tensor(np.array(0.25))
    l_p = Tensor(np.array(2.0))
    l_uv = Tensor(np.array(0.5))
    l_s = Tensor(np.array(0.125))
    lam_p, lam_uv = 0.07, 0.9
    total = loss_total(l_rgb, l_p, l_uv, l_s, lam_p, lam_uv)
    expect = 0.25 + lam_p * 2.0 + lam_uv * 0.5 + LAMBDA_SIL * 0.125
    assert abs(total.data - expect) < 1e-12


def test_loss_total_perceptual_hook_contributes():
    zero = Tensor(np.array(0.0))
    base = loss_total(zero, zero, zero, zero, 0.1, 1.0)
    hooked = loss_total(zero, zero, zero, zero, 0.1, 1.0,
                        perceptual_hook=lambda: Tensor(np.array(2.0)))
    assert base.data == 0.0
    assert abs(hooked.data - 2.0 * 5e-2) < 1e-15


def test_loss_total_flags_non_finite():
    nan = Tensor(np.array(np.nan))
    zero = Tensor(np.array(0.0))
    with pytest.raises(FloatingPointError, match="'p'"):
        loss_total(zero, nan, zero, zero, 0.1, 1.0)


def test_anneal_schedule_values():
    lam_p0, lam_uv0 = anneal_weights(0)
    assert lam_p0 == 0.1 and lam_uv0 == 1.0
    lam_p, lam_uv = anneal_weights(10)
    assert abs(lam_p - 0.1 * np.exp(-0.4)) < 1e-15
    assert abs(lam_uv - np.exp(-0.4)) < 1e-15
    # Floors engage for large epochs.
    lam_p_inf, lam_uv_inf = anneal_weights(100_000)
    assert lam_p_inf == 1e-3 and lam_uv_inf == 5e-2
    with pytest.raises(ValueError):
        anneal_weights(-1)


def test_lr_schedule_decade_points():
    for epoch, uv, nts in [
        (0, 1e-3, 5e-4),
        (100, 1e-3 * 0.1 ** (100 / 250), 5e-4 * 0.1 ** (100 / 1000)),
        (250, 1e-4, 5e-4 * 0.1**0.25),
        (1000, 1e-3 * 0.1**4, 5e-5),
    ]:
        got_uv, got_nts = lr_schedule(epoch)
        assert abs(got_uv - uv) < 1e-9 * uv
        assert abs(got_nts - nts) < 1e-9 * nts


def test_perturb_zero_scale_is_identity():
    d = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    out = perturb_ray_directions(d, 0.0, np.random.default_rng(0))
    assert np.array_equal(out, d)


def test_perturb_cone_bound_and_unit_norm():
    rng = np.random.default_rng(1)
    d = rng.normal(size=(10_000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    scale = 0.01
    out = perturb_ray_directions(d, scale, np.random.default_rng(2))
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
    ang = np.arccos(np.clip(np.einsum("ij,ij->i", d, out), -1, 1))
    # |psi| <= scale perpendicular to a unit vector: angle <= arctan(scale).
    assert np.max(ang) <= np.arctan(scale) + 1e-12
    assert np.max(ang) > 0.5 * np.arctan(scale)  # noise actually applied
    with pytest.raises(ValueError, match="psi_scale"):
        perturb_ray_directions(d, -0.1, rng)


def test_half_pixel_angle():
    cam = ring_cameras(pose_body(BodyConfig()), 1, 64, 64)[0]
    assert abs(half_pixel_angle(cam) - 0.5 / cam.fx) < 1e-18
    assert half_pixel_angle(cam) > 0
