"""TOML configuration: sections [scene], [train], [model], [bench], [serve].

Every hyperparameter is addressable by file or CLI flag; unknown sections
or keys are rejected so typos fail loudly instead of silently using a
default.
"""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS = {
    "scene": {
        "views": 20,
        "poses": 30,
        "width": 128,
        "height": 128,
        "seed": 0,
        "label_noise_uv": 0.0,
        "label_flip_p": 0.0,
    },
    "train": {
        "epochs": 30,
        "rays_per_view": 128,
        "n_samples": 64,
        "seed": 0,
        "lr_uv": 1e-3,
        "lr_nts": 5e-4,
        "decay": 1e-1,
        "psi_scale": -1.0,
        "anneal_rate": 4e-2,
        "sil_weight": 1e-1,
        "warmstart": True,
        "views_per_step": 0,
        "volume_resolution": 32,
        "smoothing_passes": 3,
        "top_k_parts": 3,
        "sh_degree": 2,
        "eval_every": 5,
        "eval_frames": 1,
    },
    "model": {
        "volume_resolution": 64,
        "smoothing_passes": 3,
        "n_samples": 64,
        "sh_degree": 2,
        "top_k_parts": 24,
        "background": [1.0, 1.0, 1.0],
    },
    "bench": {
        "frames": 5,
        "warmup": 3,
        "width": 64,
        "height": 64,
        "n_samples": 32,
        "top_k_parts": 3,
        "dtype": "float32",
    },
    "serve": {
        "host": "127.0.0.1",
        "port": 8000,
        "width": 96,
        "height": 96,
    },
}


def load_config(path=None, overrides=None):
    """Defaults, updated by a TOML file, updated by {section: {key: value}}.

    Raises ValueError naming any unknown section or key.
    """
    merged = {section: dict(values) for section, values in DEFAULTS.items()}
    layers = []
    if path is not None:
        with open(path, "rb") as f:
            layers.append(tomllib.load(f))
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for section, values in layer.items():
            if section not in merged:
                raise ValueError(
                    f"unknown config section [{section}]; "
                    f"expected one of {sorted(merged)}"
                )
            for key, value in values.items():
                if key not in merged[section]:
                    raise ValueError(
                        f"unknown key {key!r} in section [{section}]; "
                        f"expected one of {sorted(merged[section])}"
                    )
                if value is not None:
                    merged[section][key] = value
    return merged


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_config(config):
    """Serialize a resolved config back to TOML text (flat sections only)."""
    lines = []
    for section, values in config.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def echo_config(config, out_dir):
    """Record the resolved config next to the artifacts it produced."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config_used.toml")
    with open(path, "w") as f:
        f.write(dump_config(config))
    return path
