"""Optimization loop: two Adam groups, annealed warm-start, epoch metrics.

One step handles one training pose: the feature volume and texture stacks are
built once, cut at detach bridges, and every selected view backpropagates into
the bridges; the shared subgraph is then replayed a single time.  This keeps
the per-step cost linear in rays rather than in views x volume size.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from . import metrics as met
from . import optim
from . import texture as tex
from . import volume as vol
from .autodiff import Tensor
from .model import Model, ModelConfig
from .scene import generate_rays, pose_body


@dataclass
class TrainConfig:
    epochs: int = 30
    rays_per_view: int = 128     # pixels sampled per image per step
    n_samples: int = 64          # samples per ray (N_i)
    seed: int = 0
    lr_uv: float = 1e-3
    lr_nts: float = 5e-4
    decay: float = 1e-1          # learning-rate decade factor
    psi_scale: float = -1.0      # direction noise; < 0 means half-pixel default
    anneal_rate: float = 4e-2
    sil_weight: float = losses.LAMBDA_SIL
    warmstart: bool = True
    views_per_step: int = 0      # 0 = every training view of the pose
    volume_resolution: int = 32
    smoothing_passes: int = 3
    top_k_parts: int = 3
    sh_degree: int = 2
    eval_every: int = 5
    eval_frames: int = 1

    def __post_init__(self):
        for name in ("epochs", "rays_per_view", "n_samples", "lr_uv", "lr_nts",
                     "decay", "anneal_rate", "volume_resolution"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.n_samples < 2:
            raise ValueError("TrainConfig.n_samples must be >= 2")

    def model_config(self):
        return ModelConfig(
            volume_resolution=self.volume_resolution,
            smoothing_passes=self.smoothing_passes,
            n_samples=self.n_samples,
            sh_degree=self.sh_degree,
            top_k_parts=self.top_k_parts,
        )


METRIC_COLUMNS = [
    "epoch", "L_rgb", "L_p", "L_uv", "L_s",
    "lambda_p", "lambda_uv", "lr_uv", "lr_nts", "eval_psnr",
]


def _sample_pixels(frame, hit, rays_per_view, rng):
    """Foreground-biased pixel draw among rays that can touch the volume.

    Half the rays come from the (small) foreground.  The background half is
    split between the near-silhouette band and the remaining background:
    without that, foreground pixels are sampled an order of magnitude more
    densely than the band just outside the silhouette, and the losses favor
    a dilated body over an exact one.
    """
    from scipy.ndimage import binary_dilation

    flat_mask = frame.mask.reshape(-1)
    fg_img = frame.mask == 0
    band_img = binary_dilation(fg_img, iterations=4) & ~fg_img
    band_flat = band_img.reshape(-1)
    fg = np.flatnonzero(hit & (flat_mask == 0))
    band = np.flatnonzero(hit & band_flat)
    bg = np.flatnonzero(hit & (flat_mask == 1) & ~band_flat)
    n_fg = min(fg.size, rays_per_view // 2)
    n_band = min(band.size, (rays_per_view - n_fg) // 2)
    n_bg = min(bg.size, rays_per_view - n_fg - n_band)
    chosen = [rng.choice(fg, size=n_fg, replace=False)] if n_fg else []
    if n_band:
        chosen.append(rng.choice(band, size=n_band, replace=False))
    if n_bg:
        chosen.append(rng.choice(bg, size=n_bg, replace=False))
    return np.sort(np.concatenate(chosen))


def _view_loss(model, vol_b, nts_b, frame, pix, origins, dirs, near, far,
               lam_p, lam_uv, psi, rng, lambda_s=losses.LAMBDA_SIL):
    """Forward + component losses for one view's sampled pixels."""
    feats, trans, _ = vol.march_rays(
        vol_b, model.params, origins[pix], dirs[pix], near[pix], far[pix],
        model.config.n_samples, rng=rng,
    )
    probs, uv = vol.decode_uv(model.params, feats)
    color_dirs = losses.perturb_ray_directions(dirs[pix], psi, rng)
    colors, _, sel = model.part_colors(nts_b, probs, uv, color_dirs)
    pred = tex.composite(sel, colors, trans, model.config.background)

    gt = frame.rgb.reshape(-1, 3)[pix]
    l_rgb = losses.loss_rgb(pred, gt)

    labels = frame.uv_image.reshape(-1, 3)[pix]
    fg_rows = np.flatnonzero(labels[:, 0] > 0)
    if fg_rows.size and lam_p + lam_uv > 0:
        target_p = np.eye(24)[labels[fg_rows, 0].astype(np.int64) - 1]
        l_p, l_uv = losses.loss_warmstart(
            ad.gather_rows(probs, fg_rows), ad.gather_rows(uv, fg_rows),
            target_p, labels[fg_rows, 1], labels[fg_rows, 2],
        )
    else:
        l_p, l_uv = Tensor(0.0), Tensor(0.0)
    l_s = losses.loss_silhouette(trans, frame.mask.reshape(-1)[pix])
    total = losses.loss_total(l_rgb, l_p, l_uv, l_s, lam_p, lam_uv,
                              lambda_s=lambda_s)
    return total, (float(l_rgb.data), float(l_p.data), float(l_uv.data), float(l_s.data))


def _train_step(model, dataset, pose_idx, views, config, lam_p, lam_uv, rng):
    """One pose: shared volume/NTS, per-view losses, bridge replay."""
    body_config = dataset.poses[pose_idx]
    body = pose_body(body_config)
    volume = model.build_volume(body)
    nts = model.generate_nts(body_config.pose)

    vgrid_b = volume.grid.detach(requires_grad=True)
    vol_b = vol.FeatureVolume(volume.lo, volume.hi, volume.resolution, vgrid_b)
    nts_b = nts.detach(requires_grad=True)

    sums = np.zeros(4)
    scale = 1.0 / len(views)
    for view_idx in views:
        frame = dataset.frame(pose_idx, view_idx)
        origins, dirs, near, far, hit = generate_rays(frame.camera, body)
        pix = _sample_pixels(frame, hit, config.rays_per_view, rng)
        psi = config.psi_scale
        if psi < 0:
            psi = losses.half_pixel_angle(frame.camera)
        total, comps = _view_loss(
            model, vol_b, nts_b, frame, pix, origins, dirs, near, far,
            lam_p, lam_uv, psi, rng, lambda_s=config.sil_weight,
        )
        (total * scale).backward()
        sums += np.asarray(comps)

    if vgrid_b.grad is not None:
        volume.grid.backward(seed=vgrid_b.grad)
    if nts_b.grad is not None:
        nts.backward(seed=nts_b.grad)
    return sums * scale


def _eval_psnr(model, dataset, config):
    """PSNR of rendered held-out views against ground truth."""
    from .runtime import render_image

    pairs = dataset.heldout_view_indices()[: config.eval_frames]
    if not pairs:
        return math.nan
    vals = []
    for p, v in pairs:
        frame = dataset.frame(p, v)
        packet = render_image(model, frame.config, frame.camera)
        vals.append(met.psnr(packet.rgb, frame.rgb))
    return float(np.mean(vals))


def _save_state(out_dir, model, adam_uv, adam_nts, epoch):
    optim.save_checkpoint(os.path.join(out_dir, "checkpoint.uvv1"), model.params)
    moments = {}
    for tag, state in (("uv", adam_uv), ("nts", adam_nts)):
        for name, m in state.m.items():
            moments[f"m/{tag}/{name}"] = m
            moments[f"v/{tag}/{name}"] = state.v[name]
        moments[f"t/{tag}"] = np.array(state.t)
    moments["epoch"] = np.array(epoch)
    np.savez(os.path.join(out_dir, "optimizer.npz"), **moments)


def _load_state(out_dir, model, adam_uv, adam_nts):
    loaded = optim.load_checkpoint(os.path.join(out_dir, "checkpoint.uvv1"))
    optim.restore_params(model.params, loaded)
    with np.load(os.path.join(out_dir, "optimizer.npz")) as z:
        for tag, state in (("uv", adam_uv), ("nts", adam_nts)):
            for name in state.m:
                state.m[name] = z[f"m/{tag}/{name}"]
                state.v[name] = z[f"v/{tag}/{name}"]
            state.t = int(z[f"t/{tag}"])
        return int(z["epoch"])


def train(dataset, config: TrainConfig, out_dir, model=None, resume=False) -> Model:
    """Optimize a model on the dataset; writes checkpoints and metrics.csv.

    Deterministic for a fixed seed: every step draws from an RNG keyed by
    (seed, epoch, step), so a resumed run replays the remaining epochs
    bit-identically.  A non-finite loss aborts without touching the
    checkpoint written after the last completed epoch.
    """
    train_poses = [p for p in range(dataset.n_poses) if p not in dataset.heldout_poses]
    train_views = [v for v in range(dataset.n_views) if v not in dataset.heldout_views]
    if len(train_views) < 2:
        raise ValueError("training needs at least 2 views")
    os.makedirs(out_dir, exist_ok=True)

    if model is None:
        model = Model(config.model_config(), seed=config.seed)
    uv_params = model.geometry_params()
    # The SH head is an alternative color decoder that the photometric loss
    # never touches; it is fitted afterwards by distill_sh.
    nts_params = ad.ParamStore()
    for name, p in model.appearance_params().items():
        if "sh_head" not in name:
            nts_params.add(name, p)
    adam_uv = optim.AdamState(uv_params)
    adam_nts = optim.AdamState(nts_params)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    start_epoch = 0
    if resume:
        start_epoch = _load_state(out_dir, model, adam_uv, adam_nts) + 1
    if not resume or not os.path.exists(metrics_path):
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f).writerow(METRIC_COLUMNS)

    ckpt_path = os.path.join(out_dir, "checkpoint.uvv1")
    for epoch in range(start_epoch, config.epochs):
        lr_uv, lr_nts = losses.lr_schedule(epoch)
        lr_uv *= config.lr_uv / 1e-3
        lr_nts *= config.lr_nts / 5e-4
        lam_p, lam_uv = (
            losses.anneal_weights(epoch, config.anneal_rate)
            if config.warmstart
            else (0.0, 0.0)
        )

        epoch_sums = np.zeros(4)
        for step, pose_idx in enumerate(train_poses):
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, epoch, step])
            )
            views = train_views
            if 0 < config.views_per_step < len(train_views):
                views = sorted(rng.choice(train_views, size=config.views_per_step,
                                          replace=False).tolist())
            try:
                epoch_sums += _train_step(
                    model, dataset, pose_idx, views, config, lam_p, lam_uv, rng
                )
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"training aborted at epoch {epoch} step {step}: {exc}; "
                    f"last-good checkpoint retained at {ckpt_path}"
                ) from exc
            optim.adam_step(uv_params, adam_uv, lr_uv)
            optim.adam_step(nts_params, adam_nts, lr_nts)
            model.params.zero_grad()

        means = epoch_sums / len(train_poses)
        eval_psnr = math.nan
        if config.eval_every > 0 and (epoch + 1) % config.eval_every == 0:
            eval_psnr = _eval_psnr(model, dataset, config)
        with open(metrics_path, "a", newline="") as f:
            csv.writer(f).writerow([
                epoch, *(f"{x:.8g}" for x in means),
                f"{lam_p:.8g}", f"{lam_uv:.8g}", f"{lr_uv:.8g}", f"{lr_nts:.8g}",
                "" if math.isnan(eval_psnr) else f"{eval_psnr:.6g}",
            ])
        _save_state(out_dir, model, adam_uv, adam_nts, epoch)
    return model
