"""Loss suite, annealing/learning-rate schedules, and ray-direction noise.

Warm-start targets only ever supervise foreground pixels; the silhouette
loss alone shapes background density.  U-distances are circular (the chart
wraps), matching the rasterizer's seam convention.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def loss_rgb(pred: Tensor, target) -> Tensor:
    """Mean squared photometric error over all pixels and channels."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"loss_rgb: prediction {pred.shape} vs target {target.shape}")
    diff = pred - Tensor(target)
    return (diff * diff).sum() * (1.0 / diff.size)


def circular_u_delta(pred_u: Tensor, target_u) -> Tensor:
    """Signed U difference on the unit circle, in [-0.5, 0.5]."""
    d = pred_u - Tensor(np.asarray(target_u, dtype=np.float64))
    return d - Tensor(np.round(d.data))


def loss_warmstart(pred_probs: Tensor, pred_uv: Tensor, target_probs, target_u, target_v):
    """(L_p, L_uv): cross-entropy over parts + probability-weighted UV error.

    Targets come from rasterized (optionally noised) foreground labels;
    ``target_probs`` rows must be distributions.
    """
    tp = np.asarray(target_probs, dtype=np.float64)
    if tp.ndim != 2 or tp.shape[1] != pred_probs.shape[1]:
        raise ValueError(f"target probs shape {tp.shape} does not match {pred_probs.shape}")
    sums = tp.sum(axis=1)
    if np.any(tp < 0) or np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("target part probabilities are not distributions")
    n = tp.shape[0]
    log_p = ad.log(pred_probs + 1e-12)
    l_p = -(Tensor(tp) * log_p).sum() * (1.0 / n)

    du = circular_u_delta(ad.gather_cols(pred_uv, slice(0, 1)), np.asarray(target_u)[:, None])
    dv = ad.gather_cols(pred_uv, slice(1, 2)) - Tensor(np.asarray(target_v, dtype=np.float64)[:, None])
    per_pixel = du * du + dv * dv                      # (N, 1); targets are per-pixel
    l_uv = (Tensor(sums[:, None]) * per_pixel).sum() * (1.0 / n)
    return l_p, l_uv


def loss_silhouette(transmittance: Tensor, mask) -> Tensor:
    """Mean of S(1-T) + (1-S)T; mask is 0 on foreground, 1 on background."""
    s = np.asarray(mask, dtype=np.float64).reshape(-1)
    t = transmittance
    if t.shape != s.shape:
        raise ad.ShapeError(f"loss_silhouette: T {t.shape} vs mask {s.shape}")
    term = Tensor(s) * (1.0 - t) + Tensor(1.0 - s) * t
    return term.sum() * (1.0 / s.size)


LAMBDA_VGG = 5e-2
LAMBDA_SIL = 1e-1
ANNEAL_RATE = 4e-2


def loss_total(l_rgb, l_p, l_uv, l_s, lambda_p, lambda_uv, perceptual_hook=None,
               lambda_s=LAMBDA_SIL):
    """L = L_rgb + lambda_vgg L_vgg + lambda_p L_p + lambda_uv L_uv + lambda_s L_s.

    ``perceptual_hook`` supplies L_vgg when enabled (a pretrained feature
    network is out of scope here); the default contributes exactly zero.
    """
    components = {"rgb": l_rgb, "p": l_p, "uv": l_uv, "s": l_s}
    total = l_rgb + l_p * lambda_p + l_uv * lambda_uv + l_s * lambda_s
    if perceptual_hook is not None:
        l_vgg = perceptual_hook()
        components["vgg"] = l_vgg
        total = total + l_vgg * LAMBDA_VGG
    for name, comp in components.items():
        val = comp.data if isinstance(comp, Tensor) else comp
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"loss component {name!r} is non-finite")
    return total


def anneal_weights(epoch, rate=ANNEAL_RATE):
    """Exponential annealing of the warm-start weights with hard floors.

    ``rate`` defaults to the canonical decay constant; short desk-scale runs
    may anneal faster so the photometric term takes over before the budget
    runs out.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lam_p = max(1e-1 * np.exp(-rate * epoch), 1e-3)
    lam_uv = max(1e-0 * np.exp(-rate * epoch), 5e-2)
    return lam_p, lam_uv


def lr_schedule(epoch):
    """Per-branch learning rates, one decade per 250 / 1000 epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr_uv = 1e-3 * 0.1 ** (epoch / 250.0)
    lr_nts = 5e-4 * 0.1 ** (epoch / 1000.0)
    return lr_uv, lr_nts


def perturb_ray_directions(dirs, psi_scale, rng):
    """Sub-pixel direction noise for training: d' = normalize(d + psi) with
    psi uniform in a disk of radius ``psi_scale`` perpendicular to d."""
    if psi_scale < 0:
        raise ValueError("psi_scale must be >= 0")
    if psi_scale == 0 or rng is None:
        return np.asarray(dirs)
    d = np.asarray(dirs, dtype=np.float64)
    helper = np.where(np.abs(d[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(d, u)
    r = psi_scale * np.sqrt(rng.random((d.shape[0], 1)))
    phi = 2 * np.pi * rng.random((d.shape[0], 1))
    psi = r * (np.cos(phi) * u + np.sin(phi) * v)
    out = d + psi
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def half_pixel_angle(camera):
    """Default psi scale: half the angular extent of one pixel."""
    return 0.5 / camera.fx
