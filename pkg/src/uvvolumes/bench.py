"""Timing harness: per-stage render timings against a monolithic-MLP baseline.

The render path here is a plain-ndarray re-implementation of the inference
pipeline (castable to float32) so the comparison measures arithmetic, not
autodiff bookkeeping.  The baseline is a NeuralBody-style monolith -- one
8 x 256 MLP queried at every 3D sample -- sharing the exact ray sampling.
"""

from __future__ import annotations

import json
import platform
import time

import numpy as np

from . import texture as tex
from .autodiff import no_grad
from .model import Model, N_PARTS
from .runtime import StageTiming
from .scene import Camera, generate_rays, pose_body

BASELINE_WIDTH = 256
BASELINE_DEPTH = 8
BASELINE_PE_X = 10
BASELINE_PE_D = 4


# -- raw-ndarray kernels (no tape) ------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _pe(x, n_freqs):
    freqs = (2.0 ** np.arange(n_freqs)).astype(x.dtype) * np.pi
    ang = x[..., None, :] * freqs[:, None]
    out = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(x.shape[:-1] + (-1,))


def _dense(p, name, x, act=None):
    out = x @ p[f"{name}/W"] + p[f"{name}/b"]
    return act(out) if act else out


def cast_params(params, dtype=np.float32):
    """Flat {name: ndarray} view of a ParamStore at the bench dtype."""
    return {name: t.data.astype(dtype) for name, t in params.items()}


def _trilinear_raw(grid, pts):
    r = grid.shape[0]
    q = np.clip(pts, 0.0, r - 1)
    i0 = np.minimum(q.astype(np.int64), r - 2)
    f = (q - i0).astype(grid.dtype)
    out = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[:, 0] if dx else 1 - f[:, 0])
                    * (f[:, 1] if dy else 1 - f[:, 1])
                    * (f[:, 2] if dz else 1 - f[:, 2])
                )
                out = out + grid[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz] * w[:, None]
    return out


def _bilinear_raw(stack, part_idx, uv):
    rt = stack.shape[1]
    q = np.clip(uv, 0.0, 1.0) * (rt - 1)
    i0 = np.minimum(q.astype(np.int64), rt - 2)
    f = (q - i0).astype(stack.dtype)
    x0, y0 = i0[:, 0], i0[:, 1]
    fx, fy = f[:, 0:1], f[:, 1:2]
    return (
        stack[part_idx, y0, x0] * (1 - fx) * (1 - fy)
        + stack[part_idx, y0, x0 + 1] * fx * (1 - fy)
        + stack[part_idx, y0 + 1, x0] * (1 - fx) * fy
        + stack[part_idx, y0 + 1, x0 + 1] * fx * fy
    )


def _march_raw(p, grid, lo, hi, origins, dirs, near, far, n_samples):
    n = dirs.shape[0]
    frac = (np.arange(n_samples, dtype=grid.dtype) + 0.5) / n_samples
    ts = near[:, None] + (far - near)[:, None] * frac
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    scale = (grid.shape[0] - 1) / (hi - lo)
    vox = ((pts.reshape(-1, 3) - lo) * scale).astype(grid.dtype)
    feats = _trilinear_raw(grid, vox)
    sigma = _softplus(_dense(p, "uv/density/1", _relu(_dense(p, "uv/density/0", feats))))
    sigma = sigma.reshape(n, n_samples)
    delta = np.diff(ts, axis=1)
    delta = np.concatenate([delta, np.maximum(far[:, None] - ts[:, -1:], 0.0)], axis=1)
    tau = sigma * delta
    t_excl = np.exp(-np.cumsum(np.concatenate(
        [np.zeros((n, 1), dtype=tau.dtype), tau[:, :-1]], axis=1), axis=1))
    weights = t_excl * (1.0 - np.exp(-tau))
    trans = np.exp(-tau.sum(axis=1))
    accum = (weights[..., None] * feats.reshape(n, n_samples, -1)).sum(axis=1)
    return accum, trans


def _decode_uv_raw(p, feats):
    h = feats
    for i in range(4):
        h = _relu(_dense(p, f"uv/iuv/{i}", h))
    out = _dense(p, "uv/iuv/head", h)
    probs = np.exp(out[:, :N_PARTS] - out[:, :N_PARTS].max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, _sigmoid(out[:, N_PARTS:])


def _color_raw(p, uv, embed, onehot, dirs):
    h = np.concatenate([_pe(uv, tex.PE_UV), embed, onehot], axis=-1)
    skip = None
    for i in range(5):
        if i == 3:
            h = np.concatenate([h, skip], axis=-1)
        if i == 0:
            skip = h
        h = _relu(_dense(p, f"nts/color/{i}", h))
    h = _relu(_dense(p, "nts/color/dir", np.concatenate([h, _pe(dirs, tex.PE_DIR)], axis=-1)))
    return _sigmoid(_dense(p, "nts/color/head", h))


def render_fast(p, grid, lo, hi, nts, camera, body, n_samples, top_k, background):
    """Inference render with pre-computed volume/NTS; returns (rgb, timing)."""
    timing = StageTiming()
    t0 = time.perf_counter()
    origins, dirs, near, far, hit = generate_rays(camera, body)
    idx = np.flatnonzero(hit)
    dtype = grid.dtype
    rgb = np.tile(np.asarray(background, dtype=dtype), (camera.width * camera.height, 1))

    t1 = time.perf_counter()
    feats, trans = _march_raw(
        p, grid, lo.astype(dtype), hi.astype(dtype),
        origins[idx].astype(dtype), dirs[idx].astype(dtype),
        near[idx].astype(dtype), far[idx].astype(dtype), n_samples,
    )
    t2 = time.perf_counter()
    # Rays that stay transparent keep the background; only the rest decode.
    vis = np.flatnonzero(trans <= 0.999)
    probs, uv = _decode_uv_raw(p, feats[vis])
    t3 = time.perf_counter()

    k = min(top_k, N_PARTS)
    part_idx = np.argpartition(-probs, k - 1, axis=1)[:, :k]
    sel = np.take_along_axis(probs, part_idx, axis=1)
    sel = sel / sel.sum(axis=1, keepdims=True)
    n = uv.shape[0]
    flat_parts = part_idx.reshape(-1)
    uv_rep = np.repeat(uv, k, axis=0)
    embed = _bilinear_raw(nts, flat_parts, uv_rep)
    t4 = time.perf_counter()
    onehot = np.eye(N_PARTS, dtype=dtype)[flat_parts]
    dirs_rep = np.repeat(dirs[idx[vis]].astype(dtype), k, axis=0)
    colors = _color_raw(p, uv_rep, embed, onehot, dirs_rep).reshape(n, k, 3)
    t5 = time.perf_counter()
    fg = (sel[..., None] * colors).sum(axis=1)
    tv = trans[vis]
    rgb[idx[vis]] = (1.0 - tv)[:, None] * fg + tv[:, None] * rgb[idx[vis]]
    t6 = time.perf_counter()

    timing.density_march_ms = (t2 - t1) * 1e3
    timing.uv_decode_ms = (t3 - t2) * 1e3
    timing.nts_ms = (t4 - t3) * 1e3
    timing.color_ms = (t5 - t4) * 1e3
    timing.composite_ms = (t6 - t5) * 1e3 + (t1 - t0) * 1e3
    timing.total_ms = (t6 - t0) * 1e3
    return rgb.reshape(camera.height, camera.width, 3), timing


# -- baseline ----------------------------------------------------------------


class BaselineRadianceField:
    """One 8 x 256 MLP from (pe(x), pe(d), pose embed) to (sigma, rgb)."""

    def __init__(self, n_joints=23, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        d_in = 6 * BASELINE_PE_X + 6 * BASELINE_PE_D + n_joints
        self.params = {}
        dims = [d_in] + [BASELINE_WIDTH] * BASELINE_DEPTH + [4]
        for i in range(len(dims) - 1):
            bound = 1.0 / np.sqrt(dims[i])
            self.params[f"mlp/{i}/W"] = rng.uniform(
                -bound, bound, (dims[i], dims[i + 1])
            ).astype(dtype)
            self.params[f"mlp/{i}/b"] = np.zeros(dims[i + 1], dtype=dtype)
        self.dtype = dtype

    def param_count(self):
        return sum(a.size for a in self.params.values())

    def query(self, pts, dirs, pose_embed):
        h = np.concatenate(
            [_pe(pts, BASELINE_PE_X), _pe(dirs, BASELINE_PE_D),
             np.broadcast_to(pose_embed, pts.shape[:-1] + pose_embed.shape)],
            axis=-1,
        )
        for i in range(BASELINE_DEPTH):
            h = _relu(_dense(self.params, f"mlp/{i}", h))
        out = _dense(self.params, f"mlp/{BASELINE_DEPTH}", h)
        return _softplus(out[:, :1]), _sigmoid(out[:, 1:])

    def render(self, camera, body, pose, n_samples, background):
        """Same ray sampling as the render path; every sample hits the MLP."""
        timing = StageTiming()
        t0 = time.perf_counter()
        origins, dirs, near, far, hit = generate_rays(camera, body)
        idx = np.flatnonzero(hit)
        dtype = self.dtype
        rgb = np.tile(np.asarray(background, dtype=dtype),
                      (camera.width * camera.height, 1))
        frac = (np.arange(n_samples, dtype=dtype) + 0.5) / n_samples
        ts = near[idx, None].astype(dtype) + (far - near)[idx, None].astype(dtype) * frac
        pts = (origins[idx, None, :] + ts[..., None] * dirs[idx, None, :]).astype(dtype)
        t1 = time.perf_counter()
        n = idx.size
        d_rep = np.repeat(dirs[idx].astype(dtype), n_samples, axis=0)
        sigma, color = self.query(
            pts.reshape(-1, 3), d_rep, pose.astype(dtype)
        )
        sigma = sigma.reshape(n, n_samples)
        t2 = time.perf_counter()
        delta = np.diff(ts, axis=1)
        delta = np.concatenate([delta, np.maximum(far[idx, None].astype(dtype) - ts[:, -1:], 0.0)], axis=1)
        tau = sigma * delta
        t_excl = np.exp(-np.cumsum(np.concatenate(
            [np.zeros((n, 1), dtype=dtype), tau[:, :-1]], axis=1), axis=1))
        weights = t_excl * (1.0 - np.exp(-tau))
        trans = np.exp(-tau.sum(axis=1))
        fg = (weights[..., None] * color.reshape(n, n_samples, 3)).sum(axis=1)
        rgb[idx] = fg + trans[:, None] * rgb[idx]
        t3 = time.perf_counter()
        timing.density_march_ms = (t2 - t1) * 1e3 + (t1 - t0) * 1e3
        timing.composite_ms = (t3 - t2) * 1e3
        timing.total_ms = (t3 - t0) * 1e3
        return rgb.reshape(camera.height, camera.width, 3), timing


# -- harness -----------------------------------------------------------------


def benchmark(render_fn, frames=5, warmup=3, precomputed=True):
    """Median per-stage times over ``frames`` runs after ``warmup`` discards.

    ``render_fn`` returns (image, StageTiming).  FPS counts the render path
    only when ``precomputed`` is set (the volume is built ahead of time);
    otherwise the volume build is part of every frame.
    """
    for _ in range(warmup):
        render_fn()
    rows = []
    for _ in range(frames):
        _, t = render_fn()
        rows.append(t)
    med = StageTiming(**{
        k: float(np.median([getattr(r, k) for r in rows])) for k in (
            "volume_build_ms", "density_march_ms", "uv_decode_ms",
            "nts_ms", "color_ms", "composite_ms", "total_ms",
        )
    })
    render_ms = med.total_ms - (med.volume_build_ms if precomputed else 0.0)
    fps = 1000.0 / render_ms if render_ms > 0 else float("inf")
    return med, fps


def density_path_param_count(model: Model):
    names = ("uv/density/0/W", "uv/density/0/b", "uv/density/1/W", "uv/density/1/b")
    return sum(model.params[n].data.size for n in names)


def run_bench(model: Model, body_config, camera: Camera = None,
              frames=5, warmup=3, n_samples=None, threads=1, dtype=np.float32,
              top_k=None):
    """Time the render path against the baseline and report the comparison."""
    from .scene import ring_cameras

    body = pose_body(body_config)
    if camera is None:
        camera = ring_cameras(body, 1, width=64, height=64)[0]
    n_samples = n_samples or model.config.n_samples

    with no_grad():
        volume = model.build_volume(body)
        nts = model.generate_nts(body_config.pose)
    p = cast_params(model.params, dtype)
    grid = volume.grid.data.astype(dtype)
    nts_c = nts.data.astype(dtype)

    k = top_k or model.config.top_k_parts

    def uvv_frame():
        return render_fast(
            p, grid, volume.lo, volume.hi, nts_c, camera, body,
            n_samples, k, model.config.background,
        )

    baseline = BaselineRadianceField(dtype=dtype)

    def base_frame():
        return baseline.render(camera, body, body_config.pose, n_samples,
                               model.config.background)

    uvv_med, uvv_fps = benchmark(uvv_frame, frames, warmup, precomputed=True)
    base_med, base_fps = benchmark(base_frame, frames, warmup, precomputed=True)

    density_params = density_path_param_count(model)
    report = {
        "uvv_stage_ms": uvv_med.to_dict(),
        "baseline_stage_ms": base_med.to_dict(),
        "uvv_fps": uvv_fps,
        "baseline_fps": base_fps,
        "speedup": base_med.total_ms / uvv_med.total_ms,
        "n_samples": int(n_samples),
        "top_k_parts": int(k),
        "resolution": [camera.width, camera.height],
        "density_path_params": int(density_params),
        "baseline_params": int(baseline.param_count()),
        "param_ratio": density_params / baseline.param_count(),
        "machine": platform.platform(),
        "threads": int(threads),
        "dtype": np.dtype(dtype).name,
    }
    return report


def write_report(path, report):
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
