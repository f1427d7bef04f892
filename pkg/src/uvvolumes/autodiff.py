"""Reverse-mode automatic differentiation over dense float64 arrays.

Every trainable piece of the renderer (density MLP, UV decoder, texture
stacks, color MLP, volume generator) runs on these tensors.  The design is a
classic define-by-run tape: each op records its parents and a VJP closure;
``backward`` walks the recorded graph in reverse creation order.

Gradients are deposited only on *leaf* tensors (parameters and explicit
``detach`` bridges), so backward may be called several times on subgraphs
that share a common prefix -- the shared prefix is replayed via
``backward(seed=...)`` once the downstream gradients have accumulated.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "ShapeError",
    "tensor",
    "zeros",
    "concat",
    "matmul",
    "relu",
    "sigmoid",
    "softplus",
    "softmax",
    "exp",
    "log",
    "sin",
    "cos",
    "bilinear_sample",
    "bilinear_sample_stack",
    "trilinear_sample",
    "trilinear_splat",
    "blur3",
    "gather_rows",
    "no_grad",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


def _shape_check(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


class Tensor:
    """A dense float64 array with an optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_vjp", "_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._vjp = None
        self._id = next(_ids)

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Flat view of the payload (row-major)."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self):
        return not self._prev

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self, requires_grad=False):
        """Cut the tape: returns a leaf sharing this tensor's payload."""
        t = Tensor(self.data, requires_grad=requires_grad)
        return t

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``seed`` defaults to 1 for scalars; non-scalar roots must supply the
        upstream gradient (used to replay a shared subgraph once its output
        gradient has been accumulated on a detach bridge).
        """
        if seed is None:
            if self.size != 1:
                raise ValueError(
                    f"backward on non-scalar root of shape {self.shape} requires a seed"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.shape:
                raise ShapeError(
                    f"backward: seed shape {seed.shape} != root shape {self.shape}"
                )

        # Topological order = reverse creation order over the reachable set.
        reachable = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in reachable:
                continue
            reachable[t._id] = t
            if t.requires_grad:
                stack.extend(t._prev)
        order = sorted(reachable.values(), key=lambda t: t._id, reverse=True)

        grads = {self._id: seed}
        for t in order:
            g = grads.pop(t._id, None)
            if g is None or not t.requires_grad:
                continue
            if t.is_leaf:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
                continue
            for parent, pg in zip(t._prev, t._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(parent._id)
                if acc is None:
                    grads[parent._id] = pg if pg.flags.owndata else pg.copy()
                else:
                    acc += pg

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), Tensor(-1.0)))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, Tensor(-1.0)))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __truediv__(self, other):
        other = _as_tensor(other)
        return mul(self, _pow_const(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, p):
        return _pow_const(self, float(p))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class _NoGrad:
    """Context that stops ops from recording tape nodes (inference path)."""

    enabled = False

    def __enter__(self):
        self._saved = _NoGrad.enabled
        _NoGrad.enabled = True
        return self

    def __exit__(self, *exc):
        _NoGrad.enabled = self._saved
        return False


def no_grad():
    return _NoGrad()


def _make(data, parents, vjp):
    out = Tensor(data)
    if not _NoGrad.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- primitives ---------------------------------------------------------


def add(a, b):
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b):
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def _pow_const(a, p):
    data = a.data**p
    return _make(data, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def matmul(a, b):
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def exp(a):
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sin(a):
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def softplus(a):
    # log(1 + e^x) computed stably for large |x|.
    data = np.logaddexp(0.0, a.data)
    return _make(data, (a,), lambda g: (g / (1.0 + np.exp(-a.data)),))


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _make(data, (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(data, (a,), vjp)


def reshape(a, shape):
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)
    return _make(data, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=-1):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def cumsum(a, axis=-1, exclusive=False):
    """Running sum along ``axis``; ``exclusive`` shifts by one (first = 0)."""
    cs = np.cumsum(a.data, axis=axis)
    if exclusive:
        cs = np.roll(cs, 1, axis=axis)
        idx = [slice(None)] * a.data.ndim
        idx[axis] = 0
        cs[tuple(idx)] = 0.0

    def vjp(g):
        rev = np.flip(g, axis=axis)
        out = np.flip(np.cumsum(rev, axis=axis), axis=axis)
        if exclusive:
            out = np.roll(out, -1, axis=axis)
            idx = [slice(None)] * g.ndim
            idx[axis] = -1
            out[tuple(idx)] = 0.0
        return (out,)

    return _make(cs, (a,), vjp)


def gather_cols(a, sl):
    """Slice columns of a 2D tensor (``sl`` is a constant slice)."""
    data = a.data[:, sl]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[:, sl] = g
        return (out,)

    return _make(data, (a,), vjp)


def gather_rows(a, index):
    """Select rows ``a[index]`` along axis 0 (index is a constant int array)."""
    index = np.asarray(index)
    data = a.data[index]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(data, (a,), vjp)


def gather_elements(a, col_index):
    """Per-row element selection from a 2D tensor: out[i, j] = a[i, col[i, j]]."""
    col_index = np.asarray(col_index)
    rows = np.arange(a.shape[0])[:, None]
    data = a.data[rows, col_index]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (np.broadcast_to(rows, col_index.shape), col_index), g)
        return (out,)

    return _make(data, (a,), vjp)


# -- interpolation primitives --------------------------------------------
#
# These carry gradients both to the grid values and to the sampling
# coordinates, so texture grids and UV predictions co-train.


def _corner_scatter_all(shape_flat, c, corners_iw, g):
    """Scatter several (index, weight) corner contributions of the same rows
    into one (V, C) buffer.  Fusing the corners into a single bincount per
    channel avoids allocating one dense V x C buffer per corner, which
    dominates the cost when V is a full feature grid."""
    idx = np.concatenate([lin for lin, _ in corners_iw])
    w = np.concatenate([w for _, w in corners_iw])
    contrib = w[:, None] * np.concatenate([g] * len(corners_iw))
    flat_idx = (idx[:, None] * c + np.arange(c)).ravel()
    return np.bincount(
        flat_idx, weights=contrib.ravel(), minlength=shape_flat * c
    ).reshape(shape_flat, c)


def bilinear_sample(grid, uv):
    """Sample a (H, W, C) grid at (N, 2) locations u, v in [0, 1], border-clamped.

    u indexes width, v indexes height; continuous texel coords are
    (u*(W-1), v*(H-1)).
    """
    return bilinear_sample_stack(reshape(grid, (1,) + grid.shape), None, uv)


def bilinear_sample_stack(grids, part_index, uv):
    """Sample a (P, H, W, C) grid stack at per-row part indices and (N, 2) uv.

    ``part_index`` of None means P == 1 and every row samples grid 0.
    """
    P, H, W, C = grids.shape
    n = uv.shape[0]
    pidx = np.zeros(n, dtype=np.int64) if part_index is None else np.asarray(part_index)

    u = np.clip(uv.data[:, 0], 0.0, 1.0) * (W - 1)
    v = np.clip(uv.data[:, 1], 0.0, 1.0) * (H - 1)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, W - 2) if W > 1 else np.zeros(n, np.int64)
    y0 = np.clip(np.floor(v).astype(np.int64), 0, H - 2) if H > 1 else np.zeros(n, np.int64)
    fx = u - x0
    fy = v - y0

    flat = grids.data.reshape(-1, C)
    base = pidx * (H * W)
    i00 = base + y0 * W + x0
    i01 = i00 + (1 if W > 1 else 0)
    i10 = i00 + (W if H > 1 else 0)
    i11 = i10 + (1 if W > 1 else 0)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    data = (
        w00[:, None] * flat[i00]
        + w01[:, None] * flat[i01]
        + w10[:, None] * flat[i10]
        + w11[:, None] * flat[i11]
    )

    # Coordinate gradients vanish where the clamp is active.
    du_scale = np.where((uv.data[:, 0] >= 0) & (uv.data[:, 0] <= 1), W - 1, 0.0)
    dv_scale = np.where((uv.data[:, 1] >= 0) & (uv.data[:, 1] <= 1), H - 1, 0.0)

    def vjp(g):
        g_grid = None
        if grids.requires_grad:
            nflat = P * H * W
            g_grid = _corner_scatter_all(
                nflat, C,
                [(i00, w00), (i01, w01), (i10, w10), (i11, w11)], g,
            ).reshape(grids.shape)
        g_uv = None
        if uv.requires_grad:
            d_du = (
                (flat[i01] - flat[i00]) * (1 - fy)[:, None]
                + (flat[i11] - flat[i10]) * fy[:, None]
            )
            d_dv = (
                (flat[i10] - flat[i00]) * (1 - fx)[:, None]
                + (flat[i11] - flat[i01]) * fx[:, None]
            )
            g_uv = np.stack(
                [
                    (g * d_du).sum(axis=1) * du_scale,
                    (g * d_dv).sum(axis=1) * dv_scale,
                ],
                axis=1,
            )
        return (g_grid, g_uv)

    return _make(data, (grids, uv), vjp)


def _trilinear_setup(grid_shape, pts):
    """Shared corner/weight computation for trilinear gather and splat.

    ``pts`` are continuous voxel coordinates; validity = inside [0, R-1]^3.
    """
    rx, ry, rz = grid_shape[:3]
    p = pts
    inside = (
        (p[:, 0] >= 0) & (p[:, 0] <= rx - 1)
        & (p[:, 1] >= 0) & (p[:, 1] <= ry - 1)
        & (p[:, 2] >= 0) & (p[:, 2] <= rz - 1)
    )
    q = np.clip(p, 0.0, np.array([rx - 1, ry - 1, rz - 1], dtype=np.float64))
    i0 = np.minimum(np.floor(q).astype(np.int64), np.array([rx - 2, ry - 2, rz - 2]))
    i0 = np.maximum(i0, 0)
    f = q - i0
    corners = []
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wx = f[:, 0] if dx else 1 - f[:, 0]
                wy = f[:, 1] if dy else 1 - f[:, 1]
                wz = f[:, 2] if dz else 1 - f[:, 2]
                lin = ((i0[:, 0] + dx) * ry + (i0[:, 1] + dy)) * rz + (i0[:, 2] + dz)
                corners.append(((dx, dy, dz), lin, wx * wy * wz))
    return inside, f, corners


def trilinear_sample(grid, pts):
    """Sample a (Rx, Ry, Rz, C) grid at (N, 3) voxel coordinates.

    Points outside the grid return the zero vector (and propagate zero
    gradient to both the grid and the coordinates there).
    """
    rx, ry, rz, C = grid.shape
    inside, f, corners = _trilinear_setup(grid.shape, pts.data)
    flat = grid.data.reshape(-1, C)
    data = np.zeros((pts.shape[0], C))
    for _, lin, w in corners:
        data += (w * inside)[:, None] * flat[lin]

    def vjp(g):
        g_grid = None
        if grid.requires_grad:
            nflat = rx * ry * rz
            g_grid = _corner_scatter_all(
                nflat, C, [(lin, w * inside) for _, lin, w in corners], g
            ).reshape(grid.shape)
        g_pts = None
        if pts.requires_grad:
            g_pts = np.zeros_like(pts.data)
            for axis in range(3):
                d = np.zeros((pts.shape[0], C))
                for (dx, dy, dz), lin, _ in corners:
                    sign = (dx, dy, dz)[axis]
                    wa, wb = [
                        (f[:, a] if s else 1 - f[:, a])
                        for a, s in enumerate((dx, dy, dz))
                        if a != axis
                    ]
                    d += ((1.0 if sign else -1.0) * wa * wb)[:, None] * flat[lin]
                g_pts[:, axis] = (g * d).sum(axis=1) * inside
        return (g_grid, g_pts)

    return _make(data, (grid, pts), vjp)


def trilinear_splat(codes, pts, grid_shape):
    """Scatter (N, C) codes into a (Rx, Ry, Rz, C) grid by trilinear weights.

    The adjoint of trilinear_sample; all points must lie inside the grid.
    """
    rx, ry, rz = grid_shape
    C = codes.shape[1]
    inside, f, corners = _trilinear_setup((rx, ry, rz), pts.data)
    if not inside.all():
        bad = int(np.argmin(inside))
        raise ValueError(
            f"trilinear_splat: point {bad} at {pts.data[bad]} lies outside grid {grid_shape}"
        )
    nflat = rx * ry * rz
    data = _corner_scatter_all(
        nflat, C, [(lin, w) for _, lin, w in corners], codes.data
    ).reshape(rx, ry, rz, C)

    def vjp(g):
        gflat = g.reshape(-1, C)
        g_codes = None
        if codes.requires_grad:
            g_codes = np.zeros_like(codes.data)
            for _, lin, w in corners:
                g_codes += w[:, None] * gflat[lin]
        g_pts = None
        if pts.requires_grad:
            g_pts = np.zeros_like(pts.data)
            for axis in range(3):
                d = np.zeros_like(codes.data)
                for (dx, dy, dz), lin, _ in corners:
                    sign = (dx, dy, dz)[axis]
                    wa, wb = [
                        (f[:, a] if s else 1 - f[:, a])
                        for a, s in enumerate((dx, dy, dz))
                        if a != axis
                    ]
                    d += ((1.0 if sign else -1.0) * wa * wb)[:, None] * gflat[lin]
                g_pts[:, axis] = (d * codes.data).sum(axis=1)
        return (g_codes, g_pts)

    return _make(data, (codes, pts), vjp)


def _blur_axis(x, axis):
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 1)
    xp = np.pad(x, pad)
    sl = [slice(None)] * x.ndim

    def take(start, stop):
        s = sl.copy()
        s[axis] = slice(start, stop)
        return xp[tuple(s)]

    n = x.shape[axis]
    return (take(0, n) + take(1, n + 1) + take(2, n + 2)) / 3.0


def blur3(grid):
    """3x3x3 box blur (zero-padded, separable) over the spatial axes of
    a (Rx, Ry, Rz, C) grid.  Self-adjoint, so the VJP is the same blur."""
    data = grid.data
    for axis in range(3):
        data = _blur_axis(data, axis)

    def vjp(g):
        out = g
        for axis in range(3):
            out = _blur_axis(out, axis)
        return (out,)

    return _make(data, (grid,), vjp)


# -- parameter container --------------------------------------------------


class ParamStore:
    """Named map from parameter id to Tensor with deterministic order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter id {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def subset(self, prefix):
        """Parameters whose id starts with ``prefix`` (a branch group)."""
        out = ParamStore()
        for name, t in self._params.items():
            if name.startswith(prefix):
                out._params[name] = t
        return out

    def total_size(self):
        return sum(t.size for t in self._params.values())
