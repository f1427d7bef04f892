"""Command-line entry point: dataset synthesis, training, rendering,
benchmarking, texture export, and serving.

Exit codes: 0 success, 2 bad arguments, 3 runtime failure.
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click
import numpy as np

from . import config as cfg

log = logging.getLogger("uvvolumes")


def _setup_logging():
    level = os.environ.get("UVVOL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(message, code=3):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path, overrides):
    try:
        return cfg.load_config(path, overrides)
    except (ValueError, OSError) as exc:
        _fail(str(exc), code=2)


def _limit_threads(threads):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _save_png(path, rgb):
    from PIL import Image

    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _read_body_file(path):
    from .scene import BodyConfig

    with open(path) as f:
        doc = json.load(f)
    pose = np.asarray(doc.get("pose", np.zeros(23)), dtype=np.float64)
    shape = np.asarray(doc.get("shape", np.ones(24)), dtype=np.float64)
    return BodyConfig(pose=pose, shape=shape)


def _load_model(checkpoint, model_section):
    from .model import Model, ModelConfig

    meta_path = os.path.splitext(checkpoint)[0] + ".json"
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            model_config = ModelConfig.from_dict(json.load(f))
    else:
        section = dict(model_section)
        section["background"] = tuple(section["background"])
        model_config = ModelConfig.from_dict(section)
    model = Model(model_config)
    model.load(checkpoint)
    return model


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML config file.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="BLAS/OpenMP thread cap.")
@click.pass_context
def main(ctx, config_path, threads):
    """Editable free-view human renderer: data, training, rendering, serving."""
    _setup_logging()
    _limit_threads(threads)
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["threads"] = threads


@main.command("synth-data")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--views", type=int, default=None)
@click.option("--poses", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def cmd_synth_data(ctx, out, views, poses, width, height, seed):
    """Rasterize the synthetic multi-view dataset to a directory."""
    conf = _load_config(ctx.obj["config_path"], {"scene": {
        "views": views, "poses": poses, "width": width,
        "height": height, "seed": seed,
    }})
    s = conf["scene"]
    from .dataset import inject_label_noise, make_dataset, save_dataset

    try:
        ds = make_dataset(n_views=s["views"], n_poses=s["poses"],
                          width=s["width"], height=s["height"], seed=s["seed"])
        if s["label_noise_uv"] > 0 or s["label_flip_p"] > 0:
            for i, frame in enumerate(ds.frames):
                ds.frames[i] = inject_label_noise(
                    frame, s["label_noise_uv"], s["label_flip_p"], seed=s["seed"] + i
                )
        save_dataset(ds, out)
        cfg.echo_config(conf, out)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {s['poses']} poses x {s['views']} views to {out}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--rays-per-view", type=int, default=None)
@click.option("--n-samples", type=int, default=None)
@click.option("--volume-resolution", type=int, default=None)
@click.option("--warmstart/--no-warmstart", default=None)
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in --out.")
@click.pass_context
def cmd_train(ctx, data_dir, out, epochs, seed, rays_per_view, n_samples,
              volume_resolution, warmstart, resume):
    """Optimize a model on a dataset directory."""
    if not os.path.isdir(data_dir):
        _fail(f"dataset directory not found: {data_dir}", code=2)
    conf = _load_config(ctx.obj["config_path"], {"train": {
        "epochs": epochs, "seed": seed, "rays_per_view": rays_per_view,
        "n_samples": n_samples, "volume_resolution": volume_resolution,
        "warmstart": warmstart,
    }})
    from .dataset import load_dataset
    from .train import TrainConfig, train

    try:
        ds = load_dataset(data_dir)
        tconf = TrainConfig(**conf["train"])
        cfg.echo_config(conf, out)
        model = train(ds, tconf, out, resume=resume)
        with open(os.path.join(out, "checkpoint.json"), "w") as f:
            json.dump(model.config.to_dict(), f, indent=2)
    except (ValueError, RuntimeError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"trained {tconf.epochs} epochs; checkpoint + metrics.csv in {out}")


@main.command("render")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--pose-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON {pose: [23], shape: [24]}; defaults to rest pose.")
@click.option("--yaw", type=float, default=0.0, show_default=True,
              help="Camera azimuth in degrees.")
@click.option("--width", type=int, default=256)
@click.option("--height", type=int, default=256)
@click.option("--uv-out", type=click.Path(dir_okay=False), default=None,
              help="Also write a UV false-color PNG here.")
@click.option("--sh", is_flag=True, help="Spherical-harmonics color mode.")
@click.pass_context
def cmd_render(ctx, checkpoint, out, pose_file, yaw, width, height, uv_out, sh):
    """Render one frame from a trained checkpoint."""
    conf = _load_config(ctx.obj["config_path"], None)
    from .runtime import EditState, RenderEngine, uv_false_color
    from .scene import BodyConfig, orbit_camera, pose_body

    try:
        model = _load_model(checkpoint, conf["model"])
        body_config = _read_body_file(pose_file) if pose_file else BodyConfig()
        body = pose_body(body_config)
        camera = orbit_camera(body, np.deg2rad(yaw), width, height)
        state = EditState(pose=body_config.pose, shape=body_config.shape,
                          camera=camera, sh_mode=sh,
                          background=model.config.background)
        packet = RenderEngine(model).render_frame(state, with_uv=uv_out is not None)
        _save_png(out, packet.rgb)
        if uv_out:
            _save_png(uv_out, uv_false_color(packet.uv_image))
    except (ValueError, KeyError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {out}")


@main.command("bench")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional trained checkpoint; default benches a fresh model.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--frames", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.pass_context
def cmd_bench(ctx, checkpoint, out, frames, width, height):
    """Time the render path against the monolithic-MLP baseline."""
    conf = _load_config(ctx.obj["config_path"], {"bench": {
        "frames": frames, "width": width, "height": height,
    }})
    b = conf["bench"]
    from .bench import run_bench, write_report
    from .model import Model
    from .scene import BodyConfig, look_at_camera, pose_body, ring_cameras

    try:
        model = (_load_model(checkpoint, conf["model"]) if checkpoint
                 else Model(seed=0))
        body_config = BodyConfig()
        camera = ring_cameras(pose_body(body_config), 1,
                              width=b["width"], height=b["height"])[0]
        report = run_bench(
            model, body_config, camera, frames=b["frames"], warmup=b["warmup"],
            n_samples=b["n_samples"], threads=ctx.obj["threads"],
            dtype=np.dtype(b["dtype"]).type, top_k=b["top_k_parts"],
        )
        write_report(out, report)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"fps {report['uvv_fps']:.2f} vs baseline {report['baseline_fps']:.2f} "
               f"(speedup {report['speedup']:.1f}x); report in {out}")


@main.command("export-texture")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--pose-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def cmd_export_texture(ctx, checkpoint, out, pose_file):
    """Write the decoded 6x4 texture atlas PNG for a pose."""
    conf = _load_config(ctx.obj["config_path"], None)
    from .runtime import export_texture_atlas
    from .scene import BodyConfig

    try:
        model = _load_model(checkpoint, conf["model"])
        body_config = _read_body_file(pose_file) if pose_file else BodyConfig()
        atlas = export_texture_atlas(model, body_config.pose)
        _save_png(out, atlas)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {out}")


@main.command("serve")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def cmd_serve(ctx, checkpoint, host, port):
    """Serve the interactive editing API (HTTP + WebSocket)."""
    conf = _load_config(ctx.obj["config_path"], {"serve": {
        "host": host, "port": port,
    }})
    s = conf["serve"]
    import uvicorn

    from .model import Model
    from .service import create_app

    try:
        model = (_load_model(checkpoint, conf["model"]) if checkpoint
                 else Model(seed=0))
        app = create_app(model, frame_width=s["width"], frame_height=s["height"])
        import socket

        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((s["host"], s["port"]))
        click.echo(f"listening on {sock.getsockname()[0]}:{sock.getsockname()[1]}")
        server_config = uvicorn.Config(app, log_level="warning")
        uvicorn.Server(server_config).run(sockets=[sock])
    except (ValueError, OSError) as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
