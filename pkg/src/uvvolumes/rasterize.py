"""Analytic rasterization of the capsule body.

Nearest ray-capsule intersection per pixel gives the part id; the cylindrical
chart of that part gives (U, V); a deterministic texture function gives RGB.
This is the ground-truth generator standing in for captured imagery plus
pseudo UV labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .scene import BodyConfig, Camera, SyntheticBody, generate_rays

BACKGROUND = np.array([1.0, 1.0, 1.0])

# 24 visually distinct base colors (fixed palette, HSV ring).
def _palette():
    import colorsys

    cols = []
    for k in range(24):
        h = (k * 0.381966) % 1.0  # golden-ratio hue steps
        s = 0.55 + 0.25 * ((k * 7) % 3) / 2.0
        v = 0.55 + 0.35 * ((k * 5) % 4) / 3.0
        cols.append(colorsys.hsv_to_rgb(h, s, v))
    return np.array(cols)


PALETTE = _palette()


def default_texture(part, u, v):
    """Per-part base color with smooth low-frequency UV modulation.

    ``part`` is 0-based here; all arguments broadcast.  The modulation is
    band-limited (one to two cycles across the chart) so that part identity,
    U, and V each leave a distinct, learnable imprint on the color.
    """
    part = np.asarray(part)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    color = PALETTE[part].reshape(part.shape + (3,)).copy()
    ramp = (v - 0.5) * 0.30                               # axial shading
    ring = 0.12 * np.cos(2 * np.pi * u + part)            # circumferential hue
    band = 0.10 * np.sin(2 * np.pi * (v + 0.25 * part))   # per-part phase
    color += ramp[..., None]
    color[..., 0] += ring
    color[..., 2] -= ring
    color[..., 1] += band
    return np.clip(color, 0.0, 1.0)


@dataclass
class GroundTruthFrame:
    rgb: np.ndarray        # (H, W, 3) in [0, 1]
    uv_image: np.ndarray   # (H, W, 3): part id (1..24, 0 = background), U, V
    mask: np.ndarray       # (H, W) foreground = 0, background = 1
    camera: Camera
    config: BodyConfig

    def copy(self):
        return GroundTruthFrame(
            self.rgb.copy(), self.uv_image.copy(), self.mask.copy(),
            self.camera, self.config,
        )


def intersect_capsules(body: SyntheticBody, origins, dirs):
    """Nearest intersection of rays with the 24 capsules.

    Returns (t, part) with t = +inf and part = -1 for misses.
    Shapes: origins/dirs (N, 3) -> t (N,), part (N,).
    """
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_part = np.full(n, -1, dtype=np.int64)
    for k in range(24):
        t = _ray_capsule(origins, dirs, body.seg_a[k], body.seg_b[k], body.radius[k])
        closer = t < best_t
        best_t[closer] = t[closer]
        best_part[closer] = k
    return best_t, best_part


def _ray_capsule(o, d, a, b, r):
    """Smallest positive hit parameter per ray against one capsule (inf = miss)."""
    ab = b - a
    L = np.linalg.norm(ab)
    w = ab / L if L > 0 else np.array([0.0, 1.0, 0.0])
    m = o - a
    dw = d @ w
    mw = m @ w
    # Infinite cylinder: |(m + t d) - ((m + t d).w) w|^2 = r^2
    dp = d - dw[:, None] * w
    mp = m - mw[:, None] * w
    A = np.einsum("ij,ij->i", dp, dp)
    B = 2 * np.einsum("ij,ij->i", dp, mp)
    C = np.einsum("ij,ij->i", mp, mp) - r * r
    t = np.full(o.shape[0], np.inf)
    disc = B * B - 4 * A * C
    ok = (disc >= 0) & (A > 1e-14)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        tc = np.where(ok, (-B + sign * sq) / (2 * np.where(A > 1e-14, A, 1.0)), np.inf)
        s = mw + np.where(ok, tc, 0.0) * dw
        valid = ok & (tc > 1e-6) & (s >= 0) & (s <= L)
        t = np.where(valid & (tc < t), tc, t)
    # Spherical caps.
    for cap in (a, b):
        mc = o - cap
        Bc = 2 * np.einsum("ij,ij->i", d, mc)
        Cc = np.einsum("ij,ij->i", mc, mc) - r * r
        disc_c = Bc * Bc - 4 * Cc
        okc = disc_c >= 0
        sqc = np.sqrt(np.where(okc, disc_c, 0.0))
        for sign in (-1.0, 1.0):
            tc = np.where(okc, (-Bc + sign * sqc) / 2, np.inf)
            valid = okc & (tc > 1e-6)
            t = np.where(valid & (tc < t), tc, t)
    return t


def surface_uv(body: SyntheticBody, part, points):
    """Cylindrical chart on each part: V along the axis (caps included),
    U around the circumference from the FK-carried reference direction."""
    a = body.seg_a[part]
    b = body.seg_b[part]
    r = body.radius[part]
    ab = b - a
    L = np.linalg.norm(ab, axis=-1)
    w = ab / np.where(L > 0, L, 1.0)[..., None]
    rel = points - a
    s = np.einsum("ij,ij->i", rel, w)
    v = np.clip((s + r) / (L + 2 * r), 0.0, 1.0)
    radial = rel - s[:, None] * w
    cu = np.einsum("ij,ij->i", radial, body.frame_u[part])
    cv = np.einsum("ij,ij->i", radial, body.frame_v[part])
    u = (np.arctan2(cv, cu) / (2 * np.pi)) % 1.0
    return u, v


def _shade(body, camera, texture_fn, offset):
    """One shading pass at a single subpixel offset.

    Returns (rgb, part, uv) over the flattened pixel grid; misses get the
    background color, part = -1, uv = 0.
    """
    W, H = camera.width, camera.height
    origins, dirs, _, _, bbox_hit = generate_rays(camera, body, offset=offset)
    t = np.full(W * H, np.inf)
    part = np.full(W * H, -1, dtype=np.int64)
    idx = np.flatnonzero(bbox_hit)
    if idx.size:
        t[idx], part[idx] = intersect_capsules(body, origins[idx], dirs[idx])
    fg = np.isfinite(t)
    rgb = np.tile(BACKGROUND, (W * H, 1))
    uv = np.zeros((W * H, 2))
    if fg.any():
        pts = origins[fg] + t[fg, None] * dirs[fg]
        u, v = surface_uv(body, part[fg], pts)
        rgb[fg] = texture_fn(part[fg], u, v)
        uv[fg, 0] = u
        uv[fg, 1] = v
    return rgb, part, uv


def rasterize_ground_truth(
    body: SyntheticBody,
    camera: Camera,
    texture_fn: Optional[Callable] = None,
    supersample: int = 3,
) -> GroundTruthFrame:
    """Render the capsule body.

    RGB is box-filtered over a ``supersample``x``supersample`` grid per pixel
    so silhouette pixels carry fractional coverage; the labels (part, U, V,
    mask) come from the centre ray alone, since ids cannot be blended.
    """
    texture_fn = texture_fn or default_texture
    W, H = camera.width, camera.height
    rgb, part, uv = _shade(body, camera, texture_fn, (0.0, 0.0))
    if supersample > 1:
        acc = np.zeros((W * H, 3))
        for a in range(supersample):
            for b in range(supersample):
                off = ((a + 0.5) / supersample - 0.5, (b + 0.5) / supersample - 0.5)
                acc += _shade(body, camera, texture_fn, off)[0]
        rgb = acc / supersample**2

    fg = part >= 0
    uv_image = np.zeros((W * H, 3))
    uv_image[fg, 0] = part[fg] + 1  # stored part ids are 1..24
    uv_image[fg, 1:] = uv[fg]
    mask = np.where(fg, 0.0, 1.0)
    return GroundTruthFrame(
        rgb=rgb.reshape(H, W, 3),
        uv_image=uv_image.reshape(H, W, 3),
        mask=mask.reshape(H, W),
        camera=camera,
        config=body.config,
    )
