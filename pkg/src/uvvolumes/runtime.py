"""Full-frame rendering pipeline and editing operations.

Reposing and reshaping change only the body configuration (geometry);
retexturing swaps the color lookup for a user texture indexed by the same
(part, U, V).  Volumes and texture stacks are cached per quantized
(pose, shape) so consecutive frames of an unchanged body skip the build.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import texture as tex
from .autodiff import Tensor, no_grad
from .model import Model, N_PARTS
from .scene import (
    N_JOINTS,
    POSE_BOUND,
    SHAPE_BOUNDS,
    BodyConfig,
    Camera,
    generate_rays,
    pose_body,
)

# Rays more transparent than this are pure background: no color decode.
OPAQUE_T = 0.999


@dataclass
class EditState:
    pose: np.ndarray
    shape: np.ndarray
    camera: Camera
    sh_mode: bool = False
    texture_override: dict = field(default_factory=dict)  # part id 1..24 -> (h, w, 3|4)
    background: tuple = (1.0, 1.0, 1.0)

    def body_config(self):
        return BodyConfig(pose=self.pose.copy(), shape=self.shape.copy())

    def digest(self):
        """Stable summary of the state for clients and cache audits."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.pose, dtype=np.float64).tobytes())
        h.update(np.asarray(self.shape, dtype=np.float64).tobytes())
        h.update(np.asarray(self.camera.rotation).tobytes())
        h.update(np.asarray(self.camera.translation).tobytes())
        h.update(bytes([int(self.sh_mode)]))
        for k in sorted(self.texture_override):
            h.update(bytes([k]))
            h.update(np.ascontiguousarray(self.texture_override[k]).tobytes())
        h.update(np.asarray(self.background, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


@dataclass
class StageTiming:
    volume_build_ms: float = 0.0
    density_march_ms: float = 0.0
    uv_decode_ms: float = 0.0
    nts_ms: float = 0.0
    color_ms: float = 0.0
    composite_ms: float = 0.0
    total_ms: float = 0.0

    def stage_sum(self):
        return (
            self.volume_build_ms + self.density_march_ms + self.uv_decode_ms
            + self.nts_ms + self.color_ms + self.composite_ms
        )

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "volume_build_ms", "density_march_ms", "uv_decode_ms",
            "nts_ms", "color_ms", "composite_ms", "total_ms",
        )}


@dataclass
class FramePacket:
    rgb: np.ndarray                      # (H, W, 3) in [0, 1]
    uv_image: Optional[np.ndarray] = None  # (H, W, 3): part, U, V
    timing: Optional[StageTiming] = None
    frame_id: int = 0


def repose(state: EditState, pose) -> EditState:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (N_JOINTS,):
        raise ValueError(f"pose must have length {N_JOINTS}, got {pose.shape}")
    bad = np.flatnonzero(np.abs(pose) > POSE_BOUND)
    if bad.size:
        raise ValueError(f"pose angle {bad[0]} = {pose[bad[0]]} outside [-pi, pi]")
    return replace(state, pose=pose.copy())


def reshape_body(state: EditState, shape) -> EditState:
    shape = np.asarray(shape, dtype=np.float64)
    if shape.shape != (N_PARTS,):
        raise ValueError(f"shape must have length {N_PARTS}, got {shape.shape}")
    lo, hi = SHAPE_BOUNDS
    bad = np.flatnonzero((shape < lo) | (shape > hi))
    if bad.size:
        raise ValueError(f"shape scale {bad[0]} = {shape[bad[0]]} outside [{lo}, {hi}]")
    return replace(state, shape=shape.copy())


def retexture(state: EditState, part_textures: dict) -> EditState:
    """Override the color lookup per part with user images (part ids 1..24)."""
    merged = dict(state.texture_override)
    for part_id, img in part_textures.items():
        if not 1 <= int(part_id) <= N_PARTS:
            raise KeyError(f"unknown part id {part_id} (expected 1..{N_PARTS})")
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] not in (3, 4):
            raise ValueError(f"texture for part {part_id} must be (h, w, 3|4)")
        merged[int(part_id)] = arr
    return replace(state, texture_override=merged)


class RenderEngine:
    """Owns a model plus per-pose caches; one render in flight at a time."""

    def __init__(self, model: Model, cache_size=4):
        self.model = model
        self.cache_size = cache_size
        self._cache = {}         # quantized (pose, shape) -> (body, volume, nts)
        self._frame_counter = 0

    @staticmethod
    def _cache_key(pose, shape):
        q = 1e-6
        return (
            tuple(np.round(np.asarray(pose) / q).astype(np.int64)),
            tuple(np.round(np.asarray(shape) / q).astype(np.int64)),
        )

    def prepare(self, config: BodyConfig):
        """Body + feature volume + texture stacks for a pose, cached."""
        key = self._cache_key(config.pose, config.shape)
        if key in self._cache:
            return self._cache[key], True
        with no_grad():
            body = pose_body(config)
            volume = self.model.build_volume(body)
            nts = self.model.generate_nts(config.pose)
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        entry = (body, volume, nts)
        self._cache[key] = entry
        return entry, False

    def invalidate(self):
        self._cache.clear()

    def render_frame(
        self, state: EditState, with_uv=False, with_timing=False, chunk=8192
    ) -> FramePacket:
        """Deterministic inference render of the full frame."""
        timing = StageTiming()
        t_start = time.perf_counter()
        (body, volume, nts), _ = _timed(
            timing, "volume_build_ms", lambda: self.prepare(state.body_config())
        )
        cam = state.camera
        W, H = cam.width, cam.height
        n_pix = W * H
        rgb = np.tile(np.asarray(state.background, dtype=np.float64), (n_pix, 1))
        uv_img = np.zeros((n_pix, 3)) if with_uv else None

        origins, dirs, near, far, hit = generate_rays(cam, body)
        idx_all = np.flatnonzero(hit)
        with no_grad():
            for s in range(0, idx_all.size, chunk):
                idx = idx_all[s : s + chunk]
                self._render_chunk(
                    state, volume, nts, origins[idx], dirs[idx], near[idx], far[idx],
                    idx, rgb, uv_img, timing,
                )
        timing.total_ms = (time.perf_counter() - t_start) * 1e3
        self._frame_counter += 1
        return FramePacket(
            rgb=rgb.reshape(H, W, 3),
            uv_image=uv_img.reshape(H, W, 3) if with_uv else None,
            timing=timing if with_timing else None,
            frame_id=self._frame_counter,
        )

    def _render_chunk(
        self, state, volume, nts, origins, dirs, near, far, idx, rgb, uv_img, timing
    ):
        import uvvolumes.volume as volmod

        feats, trans, _ = _timed(
            timing,
            "density_march_ms",
            lambda: volmod.march_rays(
                volume, self.model.params, origins, dirs, near, far,
                self.model.config.n_samples, rng=None,
            ),
        )
        probs, uv = _timed(
            timing, "uv_decode_ms", lambda: volmod.decode_uv(self.model.params, feats)
        )
        if uv_img is not None:
            solid = trans.data <= OPAQUE_T
            uv_img[idx[solid], 0] = np.argmax(probs.data[solid], axis=1) + 1
            uv_img[idx[solid], 1:] = uv.data[solid]

        vis = np.flatnonzero(trans.data <= OPAQUE_T)
        if vis.size == 0:
            return
        probs_v = ad.gather_rows(probs, vis)
        uv_v = ad.gather_rows(uv, vis)
        colors, sel_idx, sel_probs = _timed(
            timing,
            "color_ms",
            lambda: self._part_colors(state, nts, probs_v, uv_v, dirs[vis], timing),
        )
        trans_v = ad.gather_rows(trans, vis)
        out = _timed(
            timing,
            "composite_ms",
            lambda: tex.composite(sel_probs, colors, trans_v, state.background),
        )
        rgb[idx[vis]] = out.data

    def _part_colors(self, state, nts, probs, uv, dirs, timing):
        if not state.texture_override:
            return self.model.part_colors(nts, probs, uv, dirs, sh_mode=state.sh_mode)
        # Mixed path: overridden parts sample the user texture, the rest
        # fall back to the learned stacks.
        colors, idx, sel = self.model.part_colors(nts, probs, uv, dirs, sh_mode=state.sh_mode)
        out = colors.data.copy()
        for part_id, img in state.texture_override.items():
            k = part_id - 1
            rows, cols = np.nonzero(idx == k)
            if rows.size == 0:
                continue
            out[rows, cols] = _sample_user_texture(img, uv.data[rows])
        return Tensor(out), idx, sel


def _sample_user_texture(img, uv):
    """Bilinear RGB lookup in a user image; V indexes rows from the top."""
    h, w = img.shape[:2]
    u = np.clip(uv[:, 0], 0.0, 1.0) * (w - 1)
    v = np.clip(uv[:, 1], 0.0, 1.0) * (h - 1)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    rgb = img[..., :3]
    return (
        rgb[y0, x0] * (1 - fx) * (1 - fy)
        + rgb[y0, x1] * fx * (1 - fy)
        + rgb[y1, x0] * (1 - fx) * fy
        + rgb[y1, x1] * fx * fy
    )


def _timed(timing, attr, fn):
    t0 = time.perf_counter()
    out = fn()
    setattr(timing, attr, getattr(timing, attr) + (time.perf_counter() - t0) * 1e3)
    return out


def render_image(model: Model, config: BodyConfig, camera: Camera, **kw):
    """One-shot full-frame render without a persistent engine."""
    engine = RenderEngine(model)
    state = EditState(pose=config.pose, shape=config.shape, camera=camera,
                      background=model.config.background)
    return engine.render_frame(state, **kw)


def export_texture_atlas(model: Model, pose, view_dir=(0.0, 0.0, 1.0), res=None):
    """Decoded RGB of every part's texture stack at a fixed view direction,
    tiled into a 6 x 4 atlas (columns x rows)."""
    res = res or tex.TEXTURE_RES
    with no_grad():
        nts = model.generate_nts(np.asarray(pose, dtype=np.float64))
    centers = (np.arange(res) + 0.5) / res
    uu, vv = np.meshgrid(centers, centers)
    uv = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    d = np.asarray(view_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    dirs = np.tile(d, (uv.shape[0], 1))
    atlas = np.zeros((4 * res, 6 * res, 3))
    with no_grad():
        for k in range(N_PARTS):
            embed = tex.sample_nts(nts, np.full(uv.shape[0], k), Tensor(uv))
            onehot = np.eye(N_PARTS)[np.full(uv.shape[0], k)]
            color = tex.decode_color(model.params, Tensor(uv), embed, onehot, dirs)
            tile = color.data.reshape(res, res, 3)
            r, c = divmod(k, 6)
            atlas[r * res : (r + 1) * res, c * res : (c + 1) * res] = tile
    return atlas


def uv_false_color(uv_image):
    """Part as hue, U as saturation, V as value -- a quick-look UV map."""
    import colorsys

    h, w = uv_image.shape[:2]
    out = np.zeros((h, w, 3))
    fg = uv_image[..., 0] > 0
    parts = uv_image[..., 0][fg].astype(np.int64) - 1
    hues = (parts * 0.381966) % 1.0
    sat = 0.25 + 0.75 * uv_image[..., 1][fg]
    val = 0.25 + 0.75 * uv_image[..., 2][fg]
    rgb = np.array([colorsys.hsv_to_rgb(hh, ss, vv) for hh, ss, vv in zip(hues, sat, val)])
    if rgb.size:
        out[fg] = rgb
    return out
