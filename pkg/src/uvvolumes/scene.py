"""Procedural articulated body and camera model.

A 24-part capsule humanoid with a fixed kinematic tree stands in for a
parametric body model: joint angles pose it, per-part scales reshape it, and
every capsule carries an analytic cylindrical UV chart that is invariant in
the part frame (so the same surface point maps to the same (part, U, V)
from every view and pose).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_PARTS = 24
N_JOINTS = 23  # every part except the root has one rotation angle

POSE_BOUND = np.pi
SHAPE_BOUNDS = (0.25, 4.0)

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])

# (name, parent, offset in parent frame, rest direction, length, radius, joint axis)
# +Y is up, +X is the body's left, +Z is forward.  Left/right limbs mirror
# across the x=0 sagittal plane; arm joints rotate about z, leg and torso
# joints about x, the head turns about y.
_SKELETON = [
    ("pelvis",    -1, (0.0, 0.95, 0.0),   _Y,  0.10, 0.100, None),
    ("spine",      0, (0.0, 0.10, 0.0),   _Y,  0.13, 0.090, _X),
    ("chest",      1, (0.0, 0.13, 0.0),   _Y,  0.18, 0.100, _X),
    ("neck",       2, (0.0, 0.18, 0.0),   _Y,  0.06, 0.040, _X),
    ("head",       3, (0.0, 0.06, 0.0),   _Y,  0.14, 0.085, _Y),
    ("head_top",   4, (0.0, 0.14, 0.0),   _Y,  0.05, 0.060, _X),
    ("l_clav",     2, (0.02, 0.16, 0.0),  _X,  0.10, 0.040, _Z),
    ("l_uparm",    6, (0.10, 0.0, 0.0),   _X,  0.26, 0.045, _Z),
    ("l_forearm",  7, (0.26, 0.0, 0.0),   _X,  0.24, 0.040, _Z),
    ("l_hand",     8, (0.24, 0.0, 0.0),   _X,  0.12, 0.035, _Z),
    ("r_clav",     2, (-0.02, 0.16, 0.0), -_X, 0.10, 0.040, _Z),
    ("r_uparm",   10, (-0.10, 0.0, 0.0),  -_X, 0.26, 0.045, _Z),
    ("r_forearm", 11, (-0.26, 0.0, 0.0),  -_X, 0.24, 0.040, _Z),
    ("r_hand",    12, (-0.24, 0.0, 0.0),  -_X, 0.12, 0.035, _Z),
    ("l_hip",      0, (0.09, 0.0, 0.0),   -_Y, 0.08, 0.060, _X),
    ("l_thigh",   14, (0.0, -0.08, 0.0),  -_Y, 0.36, 0.060, _X),
    ("l_shin",    15, (0.0, -0.36, 0.0),  -_Y, 0.34, 0.050, _X),
    ("l_foot",    16, (0.0, -0.34, 0.0),  _Z,  0.12, 0.035, _X),
    ("l_toe",     17, (0.0, 0.0, 0.12),   _Z,  0.06, 0.025, _X),
    ("r_hip",      0, (-0.09, 0.0, 0.0),  -_Y, 0.08, 0.060, _X),
    ("r_thigh",   19, (0.0, -0.08, 0.0),  -_Y, 0.36, 0.060, _X),
    ("r_shin",    20, (0.0, -0.36, 0.0),  -_Y, 0.34, 0.050, _X),
    ("r_foot",    21, (0.0, -0.34, 0.0),  _Z,  0.12, 0.035, _X),
    ("r_toe",     22, (0.0, 0.0, 0.12),   _Z,  0.06, 0.025, _X),
]

PART_NAMES = [row[0] for row in _SKELETON]
PARENTS = np.array([row[1] for row in _SKELETON])

# l <-> r joint swap and per-joint angle sign under sagittal mirroring:
# z-axis joints negate, x-axis joints keep, the y-axis head turn negates.
_MIRROR_SWAP = {6: 10, 7: 11, 8: 12, 9: 13, 14: 19, 15: 20, 16: 21, 17: 22, 18: 23}
_MIRROR_SWAP.update({v: k for k, v in _MIRROR_SWAP.items()})


def part_neighbors():
    """Adjacency over parts (parent/child links), used for label-flip noise."""
    adj = [[] for _ in range(N_PARTS)]
    for k in range(1, N_PARTS):
        p = PARENTS[k]
        adj[k].append(p)
        adj[p].append(k)
    return adj


@dataclass
class BodyConfig:
    """Joint angles (radians) and per-part scale factors."""

    pose: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    shape: np.ndarray = field(default_factory=lambda: np.ones(N_PARTS))

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.shape = np.asarray(self.shape, dtype=np.float64)
        if self.pose.shape != (N_JOINTS,):
            raise ValueError(f"pose must have length {N_JOINTS}, got {self.pose.shape}")
        if self.shape.shape != (N_PARTS,):
            raise ValueError(f"shape must have length {N_PARTS}, got {self.shape.shape}")

    def validate(self):
        bad = np.flatnonzero(np.abs(self.pose) > POSE_BOUND)
        if bad.size:
            raise ValueError(f"pose angle {bad[0]} = {self.pose[bad[0]]} outside [-pi, pi]")
        lo, hi = SHAPE_BOUNDS
        bad = np.flatnonzero((self.shape < lo) | (self.shape > hi))
        if bad.size:
            raise ValueError(
                f"shape scale {bad[0]} = {self.shape[bad[0]]} outside [{lo}, {hi}]"
            )
        return self

    def mirrored(self):
        """Pose reflected across the sagittal plane (shape untouched)."""
        pose = self.pose.copy()
        for k in range(1, N_PARTS):
            j = k - 1
            src = _MIRROR_SWAP.get(k, k)
            axis = _SKELETON[k][6]
            sign = 1.0 if abs(axis[0]) > 0.5 else -1.0
            pose[j] = sign * self.pose[src - 1]
        return BodyConfig(pose=pose, shape=self.shape.copy())


def _rot(axis, angle):
    """Rodrigues rotation matrix about a unit axis."""
    a = np.asarray(axis, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    k = np.array(
        [[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]], dtype=np.float64
    )
    return np.eye(3) * c + s * k + (1 - c) * np.outer(a, a)


@dataclass
class SyntheticBody:
    """Posed capsules: per-part segment endpoints, radii, and UV frames."""

    seg_a: np.ndarray      # (24, 3) capsule segment start, world meters
    seg_b: np.ndarray      # (24, 3) capsule segment end
    radius: np.ndarray     # (24,)
    frame_u: np.ndarray    # (24, 3) U-chart reference direction, unit
    frame_v: np.ndarray    # (24, 3) completes the right-handed part frame
    config: BodyConfig

    def bbox(self, pad=0.10):
        """Axis-aligned bounds over all capsules, padded by a fraction."""
        r = self.radius[:, None]
        lo = np.minimum(self.seg_a - r, self.seg_b - r).min(axis=0)
        hi = np.maximum(self.seg_a + r, self.seg_b + r).max(axis=0)
        span = hi - lo
        return lo - pad * span, hi + pad * span


def pose_body(config: BodyConfig) -> SyntheticBody:
    """Forward kinematics over the capsule tree.

    Per-part scales stretch a capsule's own radius and length about its start
    point; child attachment offsets use rest lengths so one part's scale
    never moves any other part.
    """
    config.validate()
    rots = np.empty((N_PARTS, 3, 3))
    origins = np.empty((N_PARTS, 3))
    seg_a = np.empty((N_PARTS, 3))
    seg_b = np.empty((N_PARTS, 3))
    radius = np.empty(N_PARTS)
    frame_u = np.empty((N_PARTS, 3))
    frame_v = np.empty((N_PARTS, 3))

    for k, (_, parent, off, rest_dir, length, r, axis) in enumerate(_SKELETON):
        if parent < 0:
            origins[k] = np.asarray(off)
            rots[k] = np.eye(3)
        else:
            origins[k] = origins[parent] + rots[parent] @ np.asarray(off)
            local = _rot(axis, config.pose[k - 1])
            rots[k] = rots[parent] @ local
        d = rots[k] @ np.asarray(rest_dir)
        seg_a[k] = origins[k]
        seg_b[k] = origins[k] + d * (length * config.shape[k])
        radius[k] = r * config.shape[k]
        # UV frame: any rest vector perpendicular to the bone, carried by FK.
        perp = _Z if abs(np.dot(rest_dir, _Z)) < 0.9 else _X
        u_rest = np.cross(rest_dir, perp)
        u_rest /= np.linalg.norm(u_rest)
        frame_u[k] = rots[k] @ u_rest
        frame_v[k] = rots[k] @ np.cross(rest_dir, u_rest)

    return SyntheticBody(seg_a, seg_b, radius, frame_u, frame_v, config)


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray   # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) world-to-camera, meters
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.2e})")

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self):
        """World-space optical axis (+z in camera frame)."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
            rotation=np.array(d["rotation"]), translation=np.array(d["translation"]),
            width=d["width"], height=d["height"],
        )


def look_at_camera(eye, target, width, height, fov_deg=40.0, up=(0.0, 1.0, 0.0)):
    """Camera at ``eye`` looking at ``target`` (CV convention: x right, y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])  # rows: camera axes in world coords
    trans = -rot @ eye
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return Camera(
        fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
        rotation=rot, translation=trans, width=width, height=height,
    )


def orbit_camera(body: SyntheticBody, azimuth, width, height,
                 elevation_deg=8.0, distance=None):
    """Camera on the viewing ring at a given azimuth (radians)."""
    lo, hi = body.bbox()
    center = 0.5 * (lo + hi)
    dist = distance if distance is not None else 1.9 * float(np.max(hi - lo))
    elev = np.radians(elevation_deg)
    eye = center + dist * np.array(
        [np.sin(azimuth) * np.cos(elev), np.sin(elev), np.cos(azimuth) * np.cos(elev)]
    )
    return look_at_camera(eye, center, width, height)


def ring_cameras(body: SyntheticBody, n_views, width, height, elevation_deg=8.0):
    """Cameras on a ring around the body, azimuths uniform starting at 0."""
    return [
        orbit_camera(body, 2 * np.pi * i / n_views, width, height, elevation_deg)
        for i in range(n_views)
    ]


def generate_rays(camera: Camera, body: SyntheticBody, offset=(0.0, 0.0)):
    """Per-pixel rays with near/far from the body's padded bounding box.

    Returns (origins, directions, near, far, hit) with shapes (H*W, ...);
    ``hit`` marks rays that intersect the padded bbox at positive depth.
    Raises if the bbox is entirely behind the camera.  ``offset`` shifts the
    sample point inside each pixel away from the centre (in pixel units),
    which callers use for supersampling.
    """
    W, H = camera.width, camera.height
    ii, jj = np.meshgrid(np.arange(W), np.arange(H))
    x = (ii.reshape(-1) + 0.5 + offset[0] - camera.cx) / camera.fx
    y = (jj.reshape(-1) + 0.5 + offset[1] - camera.cy) / camera.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    dirs = dirs_cam @ camera.rotation  # = R^T @ d, per row
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = camera.center
    lo, hi = body.bbox()

    # Check the bbox is in front of the camera.
    corners = np.array([[lo[a], hi[a]] for a in range(3)])
    pts = np.array(
        [[corners[0][i], corners[1][j], corners[2][k]]
         for i in (0, 1) for j in (0, 1) for k in (0, 1)]
    )
    depths = (pts - origin) @ camera.forward
    if depths.max() <= 0:
        raise ValueError("degenerate bounds: body is behind the camera")

    near, far = _ray_box(origin, dirs, lo, hi)
    hit = far > np.maximum(near, 1e-6)
    near = np.maximum(near, 1e-6)
    origins = np.broadcast_to(origin, dirs.shape)
    return origins, dirs, near, far, hit


def _ray_box(origin, dirs, lo, hi):
    """Slab intersection of rays with an AABB; returns (tmin, tmax)."""
    inv = np.where(np.abs(dirs) > 1e-12, 1.0 / np.where(dirs == 0, 1e-12, dirs), 1e12)
    t0 = (lo - origin) * inv
    t1 = (hi - origin) * inv
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    return tmin, tmax
