"""Full model: geometry branch + appearance branch behind one parameter store.

The geometry branch (latent codes, volume mixes, density MLP, part/UV
decoder) and the appearance branch (texture stacks, pose delta generator,
color decoder) live under disjoint parameter prefixes ("uv/", "nts/"), which
is what makes retexturing and the two-rate optimizer groups possible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import texture as tex
from . import volume as vol
from .autodiff import ParamStore, Tensor
from .optim import load_checkpoint, restore_params, save_checkpoint
from .scene import SyntheticBody, pose_body

N_PARTS = 24


@dataclass
class ModelConfig:
    volume_resolution: int = 64
    smoothing_passes: int = 3
    n_samples: int = 64
    sh_degree: int = 2
    # Parts entering the color composite per pixel.  24 = the exact
    # probability-weighted sum; smaller values keep only the most probable
    # parts (renormalized) to fit a CPU budget.
    top_k_parts: int = 24
    background: tuple = (1.0, 1.0, 1.0)

    def to_dict(self):
        return {
            "volume_resolution": self.volume_resolution,
            "smoothing_passes": self.smoothing_passes,
            "n_samples": self.n_samples,
            "sh_degree": self.sh_degree,
            "top_k_parts": self.top_k_parts,
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


@dataclass
class RenderOutputs:
    """Per-ray results of the two-branch pipeline."""

    features: Tensor        # (N, D) marched features F
    transmittance: Tensor   # (N,) residual T
    part_probs: Tensor      # (N, 24)
    uv: Tensor              # (N, 2)
    color: Tensor | None    # (N, 3) composited, None if geometry only
    aux: dict = field(default_factory=dict)


class Model:
    def __init__(self, config: ModelConfig = None, seed=0):
        self.config = config or ModelConfig()
        self.params = ParamStore()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        vol.init_geometry_params(self.params, rng)
        tex.init_appearance_params(self.params, rng, self.config.sh_degree)

    # -- branch parameter groups ----------------------------------------

    def geometry_params(self):
        return self.params.subset("uv/")

    def appearance_params(self):
        return self.params.subset("nts/")

    # -- forward pieces ---------------------------------------------------

    def build_volume(self, body: SyntheticBody) -> vol.FeatureVolume:
        return vol.build_volume(
            body, self.params, self.config.volume_resolution, self.config.smoothing_passes
        )

    def generate_nts(self, pose) -> Tensor:
        return tex.generate_nts(self.params, pose)

    def render_rays(
        self,
        volume: vol.FeatureVolume,
        nts: Tensor,
        origins,
        dirs,
        near,
        far,
        rng=None,
        with_color=True,
        sh_mode=False,
        n_samples=None,
        top_k=None,
    ) -> RenderOutputs:
        """March, decode UV, and (optionally) decode + composite color."""
        n_samples = n_samples or self.config.n_samples
        feats, trans, aux = vol.march_rays(
            volume, self.params, origins, dirs, near, far, n_samples, rng
        )
        probs, uv = vol.decode_uv(self.params, feats)
        color = None
        if with_color:
            part_colors, sel_idx, sel_probs = self.part_colors(
                nts, probs, uv, dirs, sh_mode=sh_mode, top_k=top_k
            )
            color = tex.composite(sel_probs, part_colors, trans, self.config.background)
            aux["part_index"] = sel_idx
        return RenderOutputs(feats, trans, probs, uv, color, aux)

    def part_colors(self, nts, probs, uv, dirs, sh_mode=False, top_k=None):
        """Decode per-part colors for the top-k parts of each pixel.

        Returns (colors (N, K, 3), part indices (N, K), probs (N, K),
        renormalized when K < 24).
        """
        k = top_k or self.config.top_k_parts
        n = probs.shape[0]
        if k >= N_PARTS:
            idx = np.tile(np.arange(N_PARTS), (n, 1))
            sel = probs
        else:
            idx = np.argpartition(-probs.data, k - 1, axis=1)[:, :k]
            raw = ad.gather_elements(probs, idx)
            total = raw.sum(axis=1, keepdims=True)
            sel = raw * (total ** -1.0)
        kk = idx.shape[1]
        flat_idx = idx.reshape(-1)
        uv_rep = ad.gather_rows(uv, np.repeat(np.arange(n), kk))
        embed = tex.sample_nts(nts, flat_idx, uv_rep)
        onehot = np.eye(N_PARTS)[flat_idx]
        if sh_mode:
            coeffs = tex.decode_color_sh(
                self.params, uv_rep, embed, onehot, self.config.sh_degree
            )
            dirs_rep = np.repeat(np.asarray(dirs), kk, axis=0)
            colors = tex.eval_sh(coeffs, dirs_rep, self.config.sh_degree)
        else:
            dirs_rep = np.repeat(np.asarray(dirs), kk, axis=0)
            colors = tex.decode_color(self.params, uv_rep, embed, onehot, dirs_rep)
        return ad.reshape(colors, (n, kk, 3)), idx, sel

    # -- persistence ------------------------------------------------------

    def save(self, path):
        save_checkpoint(path, self.params)

    def load(self, path):
        restore_params(self.params, load_checkpoint(path))

    @staticmethod
    def body_for(config) -> SyntheticBody:
        return pose_body(config)
