"""Adam optimizer with bias correction, plus checkpoint serialization.

Checkpoint format: little-endian binary, header {magic "UVV1", count},
then per parameter {id length u32, id bytes, rank u32, dims u64[], f64 payload}.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import ParamStore, Tensor

MAGIC = b"UVV1"


class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    def __init__(self, params: ParamStore, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: ParamStore, state: AdamState, lr: float):
    """One Adam update over every parameter in ``params``.

    Gradients are left intact for inspection; the caller zeroes them.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    state.t += 1
    b1, b2, eps, t = state.beta1, state.beta2, state.eps, state.t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def save_checkpoint(path, params: ParamStore):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            ident = name.encode("utf-8")
            f.write(struct.pack("<I", len(ident)))
            f.write(ident)
            f.write(struct.pack("<I", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            f.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint into {name: ndarray}; validation is the caller's job."""
    out = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r} in {path}")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = payload.astype(np.float64)
    return out


def restore_params(params: ParamStore, loaded: dict):
    """Copy loaded arrays into an existing ParamStore, checking shapes."""
    mismatched = [
        f"{name}: checkpoint {loaded[name].shape} vs model {p.shape}"
        for name, p in params.items()
        if name in loaded and loaded[name].shape != p.shape
    ]
    missing = [name for name in params if name not in loaded]
    if mismatched or missing:
        raise ValueError(
            "checkpoint/architecture mismatch: "
            + "; ".join(mismatched + [f"{m}: missing" for m in missing])
        )
    for name, p in params.items():
        p.data[...] = loaded[name]
