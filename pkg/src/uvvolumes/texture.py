"""Appearance branch: pose-dependent neural texture stacks, bilinear
sampling, positional encoding, view-dependent color decode, spherical
harmonics variant, and per-part compositing.

Shares no parameters with the geometry branch -- swapping everything here
leaves density, marched features, UV samples, and transmittance untouched.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .scene import N_JOINTS

N_PARTS = 24
TEXTURE_RES = 64
TEXTURE_CHANNELS = 16
DELTA_RES = 16
PE_UV = 6
PE_DIR = 4
SH_DEGREE = 2

_COLOR_IN = 2 * 2 * PE_UV + TEXTURE_CHANNELS + N_PARTS  # gamma(u,v) + e_k + one-hot


def init_appearance_params(params: ParamStore, rng, sh_degree=SH_DEGREE):
    params.add("nts/base", rng.normal(0.0, 0.01, (N_PARTS, TEXTURE_RES, TEXTURE_RES, TEXTURE_CHANNELS)))
    _add_dense(params, rng, "nts/pose/0", N_JOINTS + N_PARTS, 128)
    _add_dense(params, rng, "nts/pose/1", 128, DELTA_RES * DELTA_RES * TEXTURE_CHANNELS)
    widths = [_COLOR_IN, 256, 256, 256]
    for i in range(3):
        _add_dense(params, rng, f"nts/color/{i}", widths[i], widths[i + 1])
    _add_dense(params, rng, "nts/color/3", 256 + _COLOR_IN, 256)  # skip concat
    _add_dense(params, rng, "nts/color/4", 256, 256)
    _add_dense(params, rng, "nts/color/dir", 256 + 2 * 3 * PE_DIR, 128)
    _add_dense(params, rng, "nts/color/head", 128, 3)
    _add_dense(params, rng, "nts/color/sh_head", 256, 3 * (sh_degree + 1) ** 2)


def _add_dense(params, rng, name, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    params.add(f"{name}/W", rng.uniform(-bound, bound, (fan_in, fan_out)))
    params.add(f"{name}/b", rng.uniform(-bound, bound, fan_out))


def _dense(params, name, x, activation=None):
    y = ad.matmul(x, params[f"{name}/W"]) + params[f"{name}/b"]
    return activation(y) if activation else y


def appearance_param_names():
    return lambda name: name.startswith("nts/")


# -- NTS generation ---------------------------------------------------------


def _upsample_matrix(src, dst):
    """(dst, src) bilinear interpolation matrix, endpoints aligned."""
    pos = np.linspace(0.0, src - 1.0, dst)
    i0 = np.minimum(pos.astype(np.int64), src - 2)
    f = pos - i0
    mat = np.zeros((dst, src))
    mat[np.arange(dst), i0] = 1 - f
    mat[np.arange(dst), i0 + 1] = f
    return mat


_UPSAMPLE = Tensor(_upsample_matrix(DELTA_RES, TEXTURE_RES))


def generate_nts(params: ParamStore, pose) -> Tensor:
    """Pose-dependent texture stacks for all 24 parts in one forward pass.

    E_k = B_k + upsample(delta(theta, k)): a learned base grid plus a
    pose-conditioned low-resolution delta, bilinearly upsampled.
    """
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (N_JOINTS,):
        raise ValueError(f"pose must have length {N_JOINTS}, got {pose.shape}")
    inp = np.concatenate(
        [np.tile(pose, (N_PARTS, 1)), np.eye(N_PARTS)], axis=1
    )  # (24, J + 24)
    h = _dense(params, "nts/pose/0", Tensor(inp), ad.relu)
    delta = _dense(params, "nts/pose/1", h)                       # (24, 16*16*C)
    delta = ad.reshape(delta, (N_PARTS, DELTA_RES, DELTA_RES, TEXTURE_CHANNELS))
    # Upsample rows then columns: U @ delta @ U^T, batched over part/channel.
    d = ad.transpose(delta, (1, 0, 2, 3))                         # (16, 24, 16, C)
    d = ad.reshape(d, (DELTA_RES, N_PARTS * DELTA_RES * TEXTURE_CHANNELS))
    d = ad.matmul(_UPSAMPLE, d)                                   # rows -> 64
    d = ad.reshape(d, (TEXTURE_RES, N_PARTS, DELTA_RES, TEXTURE_CHANNELS))
    d = ad.transpose(d, (2, 1, 0, 3))                             # (16, 24, 64, C)
    d = ad.reshape(d, (DELTA_RES, N_PARTS * TEXTURE_RES * TEXTURE_CHANNELS))
    d = ad.matmul(_UPSAMPLE, d)                                   # cols -> 64
    d = ad.reshape(d, (TEXTURE_RES, N_PARTS, TEXTURE_RES, TEXTURE_CHANNELS))
    d = ad.transpose(d, (1, 2, 0, 3))                             # (24, v, u, C)
    return params["nts/base"] + d


def generate_nts_single(params: ParamStore, pose, k_onehot) -> Tensor:
    """One part's stack from its one-hot label (validates the encoding)."""
    k_onehot = np.asarray(k_onehot, dtype=np.float64)
    if k_onehot.shape != (N_PARTS,) or not (
        np.isclose(k_onehot.sum(), 1.0) and set(np.unique(k_onehot)) <= {0.0, 1.0}
    ):
        raise ValueError(f"malformed one-hot part label: {k_onehot}")
    k = int(np.argmax(k_onehot))
    full = generate_nts(params, pose)
    return ad.gather_rows(full, np.array([k]))


def sample_nts(stack: Tensor, part_index, uv) -> Tensor:
    """Bilinear texture-embedding lookup at continuous (u, v) in [0, 1].

    ``stack`` is (24, Rt, Rt, C) (or (Rt, Rt, C) for a single part);
    border-clamped; gradients flow to the grids and the coordinates.
    """
    uv = uv if isinstance(uv, Tensor) else Tensor(uv)
    if len(stack.shape) == 3:
        stack = ad.reshape(stack, (1,) + stack.shape)
        part_index = None
    return ad.bilinear_sample_stack(stack, part_index, uv)


# -- positional encoding ----------------------------------------------------


def positional_encoding(p, n_freqs):
    """[sin(2^l pi p), cos(2^l pi p)] for l = 0..n_freqs-1, per component.

    Output width = 2 * n_freqs * dim(p); accepts Tensor (gradients flow) or
    ndarray (constant).
    """
    if n_freqs < 1:
        raise ValueError("n_freqs must be >= 1")
    t = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    parts = []
    for l in range(n_freqs):
        scaled = t * float(2**l * np.pi)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    return ad.concat(parts, axis=-1)


# -- color decoding ---------------------------------------------------------


def _color_trunk(params, uv, embed, k_onehot):
    pe_uv = positional_encoding(uv, PE_UV)
    k = Tensor(k_onehot) if not isinstance(k_onehot, Tensor) else k_onehot
    x = ad.concat([pe_uv, embed, k], axis=-1)
    h = _dense(params, "nts/color/0", x, ad.relu)
    h = _dense(params, "nts/color/1", h, ad.relu)
    h = _dense(params, "nts/color/2", h, ad.relu)
    h = _dense(params, "nts/color/3", ad.concat([h, x], axis=-1), ad.relu)
    return _dense(params, "nts/color/4", h, ad.relu)


def decode_color(params: ParamStore, uv, embed, k_onehot, view_dirs) -> Tensor:
    """View-dependent RGB in (0,1)^3; the direction enters only after the
    trunk, through its encoded branch."""
    h = _color_trunk(params, uv, embed, k_onehot)
    view_dirs = np.asarray(view_dirs, dtype=np.float64)
    pe_d = positional_encoding(view_dirs, PE_DIR)
    h = _dense(params, "nts/color/dir", ad.concat([h, pe_d], axis=-1), ad.relu)
    return ad.sigmoid(_dense(params, "nts/color/head", h))


def decode_color_sh(params: ParamStore, uv, embed, k_onehot, sh_degree=SH_DEGREE) -> Tensor:
    """Per-channel spherical-harmonics coefficients, (N, 3, (n+1)^2)."""
    h = _color_trunk(params, uv, embed, k_onehot)
    coeffs = _dense(params, "nts/color/sh_head", h)
    n_basis = (sh_degree + 1) ** 2
    return ad.reshape(coeffs, (coeffs.shape[0], 3, n_basis))


def sh_basis(dirs, degree=SH_DEGREE):
    """Real orthonormal spherical harmonics up to ``degree`` (max 2), (N, (n+1)^2)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = [np.full_like(x, 0.5 * np.sqrt(1.0 / np.pi))]
    if degree >= 1:
        c1 = np.sqrt(3.0 / (4 * np.pi))
        out += [c1 * y, c1 * z, c1 * x]
    if degree >= 2:
        out += [
            0.5 * np.sqrt(15.0 / np.pi) * x * y,
            0.5 * np.sqrt(15.0 / np.pi) * y * z,
            0.25 * np.sqrt(5.0 / np.pi) * (3 * z * z - 1),
            0.5 * np.sqrt(15.0 / np.pi) * x * z,
            0.25 * np.sqrt(15.0 / np.pi) * (x * x - y * y),
        ]
    if degree >= 3:
        raise ValueError("SH basis implemented up to degree 2")
    return np.stack(out, axis=-1)


def eval_sh(coeffs: Tensor, view_dirs, degree=SH_DEGREE) -> Tensor:
    """Color from SH coefficients at the given unit directions.

    sigmoid(sum_lm eta_lm Y_lm(d)) per channel; degree 0 alone is exactly
    view-independent.
    """
    basis = sh_basis(view_dirs, degree)            # (N, B)
    n, _, b = coeffs.shape
    flat = ad.reshape(coeffs, (n * 3, b))
    rep = np.repeat(basis, 3, axis=0)
    pre = (flat * Tensor(rep)).sum(axis=1)
    return ad.sigmoid(ad.reshape(pre, (n, 3)))


def composite(part_probs: Tensor, part_colors: Tensor, transmittance: Tensor, background) -> Tensor:
    """Probability-weighted color blend, alpha-composited over the background.

    C = sum_k P_k C_k, then (1 - T) C + T bg.  ``part_colors`` is (N, K, 3)
    aligned with the K columns of ``part_probs``.
    """
    n, k = part_probs.shape
    probs = ad.reshape(part_probs, (n, k, 1))
    fg = (probs * part_colors).sum(axis=1)         # (N, 3)
    t = ad.reshape(transmittance, (n, 1))
    bg = Tensor(np.asarray(background, dtype=np.float64))
    return (1.0 - t) * fg + t * bg
