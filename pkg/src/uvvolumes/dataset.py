"""Multi-view synthetic dataset generation, label noise, and disk layout.

Layout: frames/{pose:04}_{view:02}.png (RGB), .uv.bin (per-pixel part u8 +
U,V f32 little-endian), .mask.png; manifest.json with cameras, poses, splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import (
    N_JOINTS,
    N_PARTS,
    BodyConfig,
    Camera,
    part_neighbors,
    pose_body,
    ring_cameras,
)
from .rasterize import GroundTruthFrame, rasterize_ground_truth

# Joint angle amplitudes for the pose sampler: arms and legs swing,
# torso sways a little, so views stay collision-free.
_POSE_SCALE = np.array(
    [0.08, 0.08, 0.06, 0.25, 0.05,           # spine..head_top
     0.10, 0.45, 0.40, 0.15,                 # left arm
     0.10, 0.45, 0.40, 0.15,                 # right arm
     0.08, 0.40, 0.45, 0.15, 0.10,           # left leg
     0.08, 0.40, 0.45, 0.15, 0.10]           # right leg
)


def sample_poses(n_poses, rng):
    """Smooth pseudo-motion: per-joint sinusoids with random phase."""
    phase = rng.uniform(0, 2 * np.pi, N_JOINTS)
    freq = rng.uniform(0.5, 1.5, N_JOINTS)
    configs = []
    for i in range(n_poses):
        t = 2 * np.pi * i / max(n_poses, 1)
        pose = _POSE_SCALE * np.sin(freq * t + phase)
        configs.append(BodyConfig(pose=pose))
    return configs


@dataclass
class Dataset:
    frames: list            # list[GroundTruthFrame], index = pose * n_views + view
    cameras: list           # list[Camera]
    poses: list             # list[BodyConfig]
    heldout_views: list     # view indices excluded from training
    heldout_poses: list     # pose indices excluded from training
    seed: int

    @property
    def n_views(self):
        return len(self.cameras)

    @property
    def n_poses(self):
        return len(self.poses)

    def frame(self, pose_idx, view_idx) -> GroundTruthFrame:
        return self.frames[pose_idx * self.n_views + view_idx]

    def train_indices(self):
        return [
            (p, v)
            for p in range(self.n_poses)
            if p not in self.heldout_poses
            for v in range(self.n_views)
            if v not in self.heldout_views
        ]

    def heldout_view_indices(self):
        return [
            (p, v)
            for p in range(self.n_poses)
            if p not in self.heldout_poses
            for v in self.heldout_views
        ]

    def heldout_pose_indices(self):
        return [
            (p, v)
            for p in self.heldout_poses
            for v in range(self.n_views)
            if v not in self.heldout_views
        ]


def make_dataset(n_views=20, n_poses=30, width=128, height=128, seed=0, poses=None):
    """Ring-of-cameras dataset over sampled (or given) poses, deterministic."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    rng = np.random.default_rng(seed)
    if poses is None:
        poses = sample_poses(n_poses, rng)
    n_poses = len(poses)
    rest = pose_body(BodyConfig())
    cameras = ring_cameras(rest, n_views, width, height)
    frames = []
    for cfg in poses:
        body = pose_body(cfg)
        for cam in cameras:
            frames.append(rasterize_ground_truth(body, cam))
    heldout_views = [n_views - 1] if n_views >= 4 else []
    if n_views >= 8:
        heldout_views = [n_views // 2, n_views - 1]
    heldout_poses = list(range(max(n_poses - max(n_poses // 10, 1), 1), n_poses)) \
        if n_poses >= 4 else []
    return Dataset(frames, cameras, poses, heldout_views, heldout_poses, seed)


def inject_label_noise(frame: GroundTruthFrame, sigma_uv, flip_p, seed):
    """Gaussian UV noise (clamped to [0,1]) and neighbor part-label flips.

    RGB and mask are untouched; only foreground labels are perturbed.
    """
    if sigma_uv < 0:
        raise ValueError("sigma_uv must be >= 0")
    if not 0 <= flip_p <= 1:
        raise ValueError("flip_p must be in [0, 1]")
    rng = np.random.default_rng(seed)
    out = frame.copy()
    fg = out.uv_image[..., 0] > 0
    n = int(fg.sum())
    if n == 0:
        return out
    if sigma_uv > 0:
        noise = rng.normal(0.0, sigma_uv, (n, 2))
        out.uv_image[fg, 1:] = np.clip(out.uv_image[fg, 1:] + noise, 0.0, 1.0)
    if flip_p > 0:
        adj = part_neighbors()
        flip = rng.random(n) < flip_p
        parts = out.uv_image[fg, 0].astype(np.int64) - 1
        picks = rng.integers(0, 1 << 30, n)
        flipped = parts.copy()
        for i in np.flatnonzero(flip):
            nbrs = adj[parts[i]]
            flipped[i] = nbrs[picks[i] % len(nbrs)]
        vals = out.uv_image[fg, 0]
        vals[flip] = flipped[flip] + 1.0
        out.uv_image[fg, 0] = vals
    return out


# -- disk I/O -------------------------------------------------------------


def save_dataset(ds: Dataset, out_dir):
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for p in range(ds.n_poses):
        for v in range(ds.n_views):
            fr = ds.frame(p, v)
            stem = out / "frames" / f"{p:04d}_{v:02d}"
            _save_png(stem.with_suffix(".png"), fr.rgb)
            _save_png(Path(str(stem) + ".mask.png"), fr.mask)
            _save_uv_bin(Path(str(stem) + ".uv.bin"), fr.uv_image)
    manifest = {
        "seed": ds.seed,
        "n_views": ds.n_views,
        "n_poses": ds.n_poses,
        "width": ds.cameras[0].width,
        "height": ds.cameras[0].height,
        "cameras": [c.to_dict() for c in ds.cameras],
        "poses": [
            {"pose": cfg.pose.tolist(), "shape": cfg.shape.tolist()} for cfg in ds.poses
        ],
        "heldout_views": ds.heldout_views,
        "heldout_poses": ds.heldout_poses,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    cameras = [Camera.from_dict(d) for d in manifest["cameras"]]
    poses = [
        BodyConfig(pose=np.array(d["pose"]), shape=np.array(d["shape"]))
        for d in manifest["poses"]
    ]
    frames = []
    for p in range(manifest["n_poses"]):
        for v in range(manifest["n_views"]):
            stem = root / "frames" / f"{p:04d}_{v:02d}"
            rgb = _load_png(stem.with_suffix(".png"), channels=3)
            mask = _load_png(Path(str(stem) + ".mask.png"), channels=1)
            uv = _load_uv_bin(Path(str(stem) + ".uv.bin"), rgb.shape[0], rgb.shape[1])
            frames.append(GroundTruthFrame(rgb, uv, mask, cameras[v], poses[p]))
    return Dataset(
        frames, cameras, poses,
        manifest["heldout_views"], manifest["heldout_poses"], manifest["seed"],
    )


def _save_png(path, arr):
    a = np.clip(np.asarray(arr) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def _load_png(path, channels):
    img = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    if channels == 1 and img.ndim == 3:
        img = img[..., 0]
    return img


def _save_uv_bin(path, uv_image):
    h, w = uv_image.shape[:2]
    part = uv_image[..., 0].astype(np.uint8)
    uv = uv_image[..., 1:].astype("<f4")
    with open(path, "wb") as f:
        f.write(part.tobytes())
        f.write(uv.tobytes())


def _load_uv_bin(path, h, w):
    raw = Path(path).read_bytes()
    part = np.frombuffer(raw[: h * w], dtype=np.uint8).reshape(h, w)
    uv = np.frombuffer(raw[h * w:], dtype="<f4").reshape(h, w, 2)
    out = np.zeros((h, w, 3))
    out[..., 0] = part
    out[..., 1:] = uv
    return out
