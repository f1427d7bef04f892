"""Geometry branch: pose-conditioned feature volume, density decode,
raymarching to per-pixel features, and part/UV decode.

The volume generator scatters per-part latent codes (anchored to control
points on the posed capsules) into a dense grid, then applies fixed box-blur
passes each followed by a learned bias-free channel mix.  Everything here is
view-independent by construction: no function takes a ray direction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .scene import SyntheticBody

FEATURE_DIM = 64
LATENT_DIM = 16
POINTS_PER_PART = 32
SMOOTH_PASSES = 3
DEFAULT_RESOLUTION = 64

# Initial bias of the density output: softplus(-3.5) ~= 0.03, so voxels with
# zero features (everywhere, at init) start nearly transparent and rays
# through empty space render the background from the first epoch.  Adam's
# per-coordinate normalization makes the small softplus slope at this point
# irrelevant for how fast occupied regions can grow density.
EMPTY_SPACE_BIAS = -3.5

# Trilinear splatting spreads each control point's unit mass over hundreds of
# voxels (8 from the splat, then a (2k+1)^3 blur support), so raw occupied-
# voxel features would sit orders of magnitude below the decoder biases and
# the feature-selective gradient path would be invisible next to the bias
# path.  A fixed post-splat gain keeps occupied-voxel features O(1) while
# latent codes stay at a unit scale that Adam's absolute step size suits.
# Finer grids spread the same mass over proportionally more shell voxels
# (measured: mean occupied-voxel |feature| halves from res 32 to 64), so the
# gain grows linearly with resolution above the reference; coarse grids keep
# the flat reference gain.
SPLAT_GAIN = 20.0
_GAIN_REF_RESOLUTION = 32


def splat_gain(resolution):
    return SPLAT_GAIN * max(1.0, resolution / _GAIN_REF_RESOLUTION)

_VOL_MAGIC = b"UVVOL"


@dataclass
class FeatureVolume:
    lo: np.ndarray          # bbox lower corner, world meters
    hi: np.ndarray          # bbox upper corner
    resolution: int
    grid: Tensor            # (R, R, R, FEATURE_DIM)

    def world_to_voxel(self, points):
        scale = (self.resolution - 1) / (self.hi - self.lo)
        return (points - self.lo) * scale


def init_geometry_params(params: ParamStore, rng, feature_dim=FEATURE_DIM):
    """Latent codes, volume mixes, density MLP, and the part/UV decoder.

    Dense layers use uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); latent codes
    are unit normal (SPLAT_GAIN compensates the splat dilution, see above).
    """
    d = feature_dim
    params.add("uv/latent_codes", rng.normal(0.0, 1.0, (24, POINTS_PER_PART, LATENT_DIM)))
    dims = [LATENT_DIM] + [d] * SMOOTH_PASSES
    for i in range(SMOOTH_PASSES):
        params.add(f"uv/mix{i}", _dense_init(rng, dims[i], dims[i + 1]))
    _add_dense(params, rng, "uv/density/0", d, 64)
    _add_dense(params, rng, "uv/density/1", 64, 1)
    params["uv/density/1/b"].data[:] = EMPTY_SPACE_BIAS
    widths = [d, 256, 256, 256, 256]
    for i in range(4):
        _add_dense(params, rng, f"uv/iuv/{i}", widths[i], widths[i + 1])
    _add_dense(params, rng, "uv/iuv/head", 256, 26)


def _dense_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out))


def _add_dense(params, rng, name, fan_in, fan_out):
    params.add(f"{name}/W", _dense_init(rng, fan_in, fan_out))
    params.add(f"{name}/b", rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), fan_out))


def dense(params, name, x, activation=None):
    y = ad.matmul(x, params[f"{name}/W"]) + params[f"{name}/b"]
    return activation(y) if activation else y


def control_points(body: SyntheticBody, points_per_part=POINTS_PER_PART):
    """Anchor locations on each capsule's surface, carried by the kinematics.

    Laid out as rings around the axis (8 angles x axial stations), expressed
    through the posed segment and FK-carried frame so they move with the body.
    """
    n_ang = 8
    n_ax = points_per_part // n_ang
    angles = 2 * np.pi * np.arange(n_ang) / n_ang
    stations = np.linspace(0.0, 1.0, n_ax)
    pts = np.empty((24, points_per_part, 3))
    for k in range(24):
        a, b = body.seg_a[k], body.seg_b[k]
        r = body.radius[k]
        ring = (
            np.cos(angles)[:, None] * body.frame_u[k]
            + np.sin(angles)[:, None] * body.frame_v[k]
        ) * r
        i = 0
        for s in stations:
            center = a + s * (b - a)
            pts[k, i : i + n_ang] = center + ring
            i += n_ang
    return pts.reshape(-1, 3)


def build_volume(
    body: SyntheticBody,
    params: ParamStore,
    resolution=DEFAULT_RESOLUTION,
    passes=SMOOTH_PASSES,
) -> FeatureVolume:
    """Scatter latent codes into the grid and smooth with blur + channel mix.

    Linear in the codes (mixes are bias-free), so zero codes give a zero
    volume; deterministic for a fixed pose.
    """
    lo, hi = body.bbox(pad=0.10)
    scale = (resolution - 1) / (hi - lo)
    pts = (control_points(body) - lo) * scale
    codes = ad.reshape(params["uv/latent_codes"], (24 * POINTS_PER_PART, LATENT_DIM))
    grid = ad.trilinear_splat(codes, Tensor(pts), (resolution,) * 3) * splat_gain(resolution)
    for i in range(passes):
        grid = ad.blur3(grid)
        flat = ad.reshape(grid, (resolution**3, grid.shape[-1]))
        flat = ad.matmul(flat, params[f"uv/mix{i}"])
        grid = ad.reshape(flat, (resolution,) * 3 + (flat.shape[-1],))
    return FeatureVolume(lo, hi, resolution, grid)


def sample_feature(vol: FeatureVolume, points) -> Tensor:
    """Trilinear feature lookup at world points; outside the bbox -> zeros."""
    pts = points if isinstance(points, Tensor) else Tensor(points)
    voxel = Tensor(vol.world_to_voxel(pts.data)) if not pts.requires_grad else None
    if voxel is None:
        scale = (vol.resolution - 1) / (vol.hi - vol.lo)
        voxel = (pts - Tensor(vol.lo)) * Tensor(scale)
    return ad.trilinear_sample(vol.grid, voxel)


def density(params: ParamStore, features: Tensor) -> Tensor:
    """sigma = softplus(MLP(f)): two width-64 layers, non-negative output."""
    h = dense(params, "uv/density/0", features, ad.relu)
    return ad.softplus(dense(params, "uv/density/1", h))


def march_rays(
    vol: FeatureVolume,
    params: ParamStore,
    origins,
    dirs,
    near,
    far,
    n_samples=64,
    rng=None,
):
    """Volume-render features along rays.

    Returns (F, T, aux): F (N, D) accumulated features, T (N,) residual
    transmittance including every sample (the last interval is clamped to the
    far bound, so the per-ray weights and T partition unity).  ``rng`` enables
    stratified jitter (training); None uses midpoints (deterministic).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if np.any(near >= far):
        bad = int(np.argmax(near >= far))
        raise ValueError(f"ray {bad}: near {near[bad]} >= far {far[bad]}")
    n = dirs.shape[0]
    edges = np.linspace(0.0, 1.0, n_samples + 1)
    if rng is None:
        frac = (edges[:-1] + edges[1:]) / 2.0
        ts = near[:, None] + (far - near)[:, None] * frac
    else:
        u = rng.random((n, n_samples))
        frac = edges[:-1] + (edges[1:] - edges[:-1]) * u
        ts = near[:, None] + (far - near)[:, None] * frac

    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    feats = sample_feature(vol, pts.reshape(-1, 3))           # (N*S, D)
    sigma = density(params, feats)                            # (N*S, 1)
    sigma = ad.reshape(sigma, (n, n_samples))

    delta = np.diff(ts, axis=1)
    delta = np.concatenate([delta, (far[:, None] - ts[:, -1:])], axis=1)
    delta = np.maximum(delta, 0.0)

    tau = sigma * Tensor(delta)
    t_excl = ad.exp(-ad.cumsum(tau, axis=1, exclusive=True))   # T_i before sample i
    alpha = 1.0 - ad.exp(-tau)
    weights = t_excl * alpha                                   # (N, S)
    trans = ad.exp(-tau.sum(axis=1))                           # residual T, all samples

    feats = ad.reshape(feats, (n, n_samples, feats.shape[-1]))
    accum = (ad.reshape(weights, (n, n_samples, 1)) * feats).sum(axis=1)
    return accum, trans, {"weights": weights, "ts": ts, "sigma": sigma}


def decode_uv(params: ParamStore, features: Tensor):
    """Per-pixel part probabilities and UV coordinates from marched features.

    Softmax over 24 part logits, sigmoid over the two UV pre-activations.
    View direction never enters: the decode is a function of F alone.
    """
    h = features
    for i in range(4):
        h = dense(params, f"uv/iuv/{i}", h, ad.relu)
    out = dense(params, "uv/iuv/head", h)
    if len(out.shape) == 1:
        out = ad.reshape(out, (1, 26))
    logits = ad.gather_cols(out, slice(0, 24))
    uv_pre = ad.gather_cols(out, slice(24, 26))
    return ad.softmax(logits, axis=-1), ad.sigmoid(uv_pre)


def geometry_param_names():
    """Ids owned by the geometry branch (disentanglement audits use this)."""
    return lambda name: name.startswith("uv/")


# -- volume cache file ------------------------------------------------------


def save_volume(path, vol: FeatureVolume):
    with open(path, "wb") as f:
        f.write(_VOL_MAGIC)
        f.write(struct.pack("<II", vol.resolution, vol.grid.shape[-1]))
        f.write(np.asarray([*vol.lo, *vol.hi], dtype="<f8").tobytes())
        f.write(vol.grid.data.astype("<f4").tobytes())


def load_volume(path) -> FeatureVolume:
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != _VOL_MAGIC:
            raise ValueError(f"bad volume magic {magic!r}")
        r, d = struct.unpack("<II", f.read(8))
        bounds = np.frombuffer(f.read(48), dtype="<f8")
        grid = np.frombuffer(f.read(r * r * r * d * 4), dtype="<f4")
        grid = grid.astype(np.float64).reshape(r, r, r, d)
    return FeatureVolume(bounds[:3].copy(), bounds[3:].copy(), r, Tensor(grid))
