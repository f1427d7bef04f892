"""Gradient correctness of every primitive against central finite
differences, plus tape semantics (leaf deposits, detach bridges, no_grad)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import uvvolumes.autodiff as ad
from uvvolumes.autodiff import ParamStore, Tensor

from conftest import finite_difference, rel_error

RNG = np.random.default_rng(1234)
TOL = 2e-5


def C(*shape, seed=0):
    """Deterministic constant tensor: same values on every call."""
    rng = np.random.default_rng([seed, *shape, 99])
    return Tensor(rng.normal(size=shape))


def check_op(build, x, tol=TOL, eps=1e-6):
    """Backprop grad of sum(build(Tensor(x))) vs central differences."""
    t = Tensor(x.copy(), requires_grad=True)
    out = build(t)
    loss = out.sum() if out.size > 1 else out
    loss.backward()
    fd = finite_difference(lambda a: float(np.sum(build(Tensor(a)).data)), x.copy(), eps)
    assert t.grad is not None, "no gradient deposited"
    assert rel_error(t.grad, fd) < tol, f"rel err {rel_error(t.grad, fd):.2e}"


# -- elementwise and linear ops ----------------------------------------------

@pytest.mark.parametrize("build", [
    lambda t: t + C(4, 3),
    lambda t: t * C(4, 3),
    lambda t: t * t,
    lambda t: t * C(1, 3),   # broadcast
    lambda t: ad.exp(t * 0.3),
    lambda t: ad.sin(t),
    lambda t: ad.cos(t),
    lambda t: ad.sigmoid(t),
    lambda t: ad.softplus(t),
    lambda t: ad.softmax(t, axis=-1) * C(4, 3),
    lambda t: t.sum(axis=0),
    lambda t: t.sum(axis=1, keepdims=True) * C(4, 1),
    lambda t: ad.reshape(t, (3, 4)) * C(3, 4),
    lambda t: ad.transpose(t, (1, 0)) * C(3, 4),
    lambda t: ad.cumsum(t, axis=1) * C(4, 3),
    lambda t: ad.cumsum(t, axis=1, exclusive=True) * C(4, 3),
    lambda t: ad.concat([t, t * 2.0], axis=1) * C(4, 6),
    lambda t: ad.gather_rows(t, np.array([2, 0, 2])) * C(3, 3),
    lambda t: ad.gather_cols(t, slice(1, 3)) * C(4, 2),
    lambda t: ad.gather_elements(t, np.array([[0], [2], [1], [0]])) * C(4, 1),
])
def test_elementwise_and_shape_op_gradients(build):
    check_op(build, RNG.normal(size=(4, 3)))


def test_relu_gradient_away_from_kink():
    x = RNG.normal(size=(5, 4))
    x[np.abs(x) < 0.05] = 0.2  # keep FD off the kink
    w = C(5, 4)
    check_op(lambda t: ad.relu(t) * w, x)


def test_log_gradient():
    check_op(lambda t: ad.log(t), RNG.uniform(0.5, 2.0, size=(4, 3)))


def test_pow_gradient():
    check_op(lambda t: t ** -1.0, RNG.uniform(0.5, 2.0, size=(4, 3)))


def test_matmul_gradients_both_sides():
    b0 = RNG.normal(size=(3, 5))
    check_op(lambda t: ad.matmul(t, Tensor(b0)), RNG.normal(size=(4, 3)))
    a0 = RNG.normal(size=(4, 3))
    check_op(lambda t: ad.matmul(Tensor(a0), t), RNG.normal(size=(3, 5)))


def test_division_and_rsub():
    check_op(lambda t: (1.0 - t) / (t + 3.0), RNG.uniform(0.2, 0.8, (3, 3)))


# -- sampling ops -------------------------------------------------------------

def test_trilinear_sample_grad_grid_and_points():
    grid0 = RNG.normal(size=(5, 5, 5, 2))
    pts0 = RNG.uniform(0.6, 3.4, size=(7, 3))
    w = RNG.normal(size=(7, 2))
    check_op(
        lambda g: ad.trilinear_sample(g, Tensor(pts0)) * Tensor(w), grid0.copy()
    )
    check_op(
        lambda p: ad.trilinear_sample(Tensor(grid0), p) * Tensor(w),
        pts0.copy(), eps=1e-5,
    )


def test_trilinear_sample_outside_is_zero():
    grid = Tensor(RNG.normal(size=(4, 4, 4, 3)))
    pts = np.array([[-1.0, 2.0, 2.0], [2.0, 2.0, 9.0]])
    out = ad.trilinear_sample(grid, Tensor(pts))
    assert np.all(out.data == 0.0)


def test_trilinear_splat_is_adjoint_of_sample():
    # <splat(c, p), G> == <c, sample(G, p)> for all c, G
    pts = RNG.uniform(0.5, 4.2, size=(6, 3))
    codes = RNG.normal(size=(6, 2))
    grid = RNG.normal(size=(6, 6, 6, 2))
    lhs = np.sum(ad.trilinear_splat(Tensor(codes), Tensor(pts), (6, 6, 6)).data * grid)
    rhs = np.sum(codes * ad.trilinear_sample(Tensor(grid), Tensor(pts)).data)
    assert abs(lhs - rhs) < 1e-10


def test_trilinear_splat_gradients():
    pts0 = RNG.uniform(0.5, 3.4, size=(5, 3))
    w = RNG.normal(size=(5, 5, 5, 2))
    check_op(
        lambda c: ad.trilinear_splat(c, Tensor(pts0), (5, 5, 5)) * Tensor(w),
        RNG.normal(size=(5, 2)),
    )
    codes0 = RNG.normal(size=(5, 2))
    check_op(
        lambda p: ad.trilinear_splat(Tensor(codes0), p, (5, 5, 5)) * Tensor(w),
        pts0.copy(), eps=1e-5,
    )


def test_trilinear_splat_rejects_outside_points():
    with pytest.raises(ValueError):
        ad.trilinear_splat(Tensor(np.ones((1, 2))), Tensor(np.array([[9.0, 1, 1]])), (4, 4, 4))


def test_bilinear_sample_stack_gradients():
    grids0 = RNG.normal(size=(3, 4, 4, 2))
    parts = np.array([0, 2, 1, 0, 2])
    uv0 = RNG.uniform(0.1, 0.9, size=(5, 2))
    w = RNG.normal(size=(5, 2))
    check_op(
        lambda g: ad.bilinear_sample_stack(g, parts, Tensor(uv0)) * Tensor(w),
        grids0.copy(),
    )
    check_op(
        lambda u: ad.bilinear_sample_stack(Tensor(grids0), parts, u) * Tensor(w),
        uv0.copy(), eps=1e-5,
    )


def test_bilinear_sample_matches_manual_corner():
    grid = np.zeros((1, 2, 2, 1))
    grid[0, 0, 0, 0], grid[0, 0, 1, 0] = 1.0, 3.0
    grid[0, 1, 0, 0], grid[0, 1, 1, 0] = 5.0, 7.0
    out = ad.bilinear_sample_stack(
        Tensor(grid), np.array([0]), Tensor(np.array([[0.5, 0.5]]))
    )
    assert abs(out.data[0, 0] - 4.0) < 1e-12  # average of the four corners


def test_blur3_gradient_and_self_adjoint():
    g0 = RNG.normal(size=(4, 4, 4, 2))
    w = RNG.normal(size=(4, 4, 4, 2))
    check_op(lambda g: ad.blur3(g) * Tensor(w), g0.copy())
    h = RNG.normal(size=(4, 4, 4, 2))
    lhs = np.sum(ad.blur3(Tensor(g0)).data * h)
    rhs = np.sum(g0 * ad.blur3(Tensor(h)).data)
    assert abs(lhs - rhs) < 1e-10


# -- tape semantics ------------------------------------------------------------

def test_gradients_only_on_leaves():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    z = y.sum()
    z.backward()
    assert np.allclose(x.grad, 2.0)
    assert y.grad is None


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1
    y.backward()
    assert np.allclose(x.grad, 7.0)


def test_backward_accumulates_across_calls():
    x = Tensor(np.ones(2), requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 2.0).sum().backward()
    assert np.allclose(x.grad, 5.0)


def test_detach_bridge_replay_matches_direct_backward():
    w = Tensor(RNG.normal(size=(3, 3)), requires_grad=True)
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(2, 3))

    shared = ad.matmul(Tensor(a), w)
    bridge = shared.detach(requires_grad=True)
    (bridge * Tensor(b)).sum().backward()
    ((bridge * 2.0) * Tensor(b)).sum().backward()
    shared.backward(seed=bridge.grad)
    via_bridge = w.grad.copy()

    w.zero_grad()
    shared = ad.matmul(Tensor(a), w)
    ((shared * Tensor(b)).sum() + ((shared * 2.0) * Tensor(b)).sum()).backward()
    assert np.allclose(via_bridge, w.grad, atol=1e-12)


def test_nonscalar_backward_requires_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = (x * 5.0).sum()
    assert y._prev == ()
    assert not y.requires_grad


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError) as exc:
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    msg = str(exc.value)
    assert "(2, 3)" in msg


def test_param_store_subset_and_duplicates():
    ps = ParamStore()
    ps.add("uv/a", np.ones(2))
    ps.add("nts/b", np.ones(3))
    assert ps.subset("uv/").names() == ["uv/a"]
    assert ps.total_size() == 5
    with pytest.raises(ValueError):
        ps.add("uv/a", np.ones(1))


# -- properties ----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_softmax_rows_are_distributions(n, m, seed):
    x = np.random.default_rng(seed).normal(scale=4.0, size=(n, m))
    s = ad.softmax(Tensor(x)).data
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_exclusive_cumsum_shifts(n, m, seed):
    x = np.random.default_rng(seed).normal(size=(n, m))
    incl = ad.cumsum(Tensor(x), axis=1).data
    excl = ad.cumsum(Tensor(x), axis=1, exclusive=True).data
    assert np.allclose(excl[:, 1:], incl[:, :-1], atol=1e-12)
    assert np.all(excl[:, 0] == 0.0)
