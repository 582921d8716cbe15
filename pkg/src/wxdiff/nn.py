"""Parameter storage, Adam optimizer, checkpoints, and timestep embedding."""

import json
import math
import struct

import numpy as np

from .autodiff import Tensor


class StateError(RuntimeError):
    """Raised when an operation is called out of order (e.g. step before backward)."""


class ParamStore:
    """Named trainable tensors plus per-parameter Adam moments.

    Parameters are float32 by default; ``astype`` produces a converted copy
    so finite-difference oracles can run the same network in float64.
    """

    def __init__(self):
        self.params = {}
        self.moments = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Tensor(np.asarray(value), requires_grad=True)
        self.params[name] = p
        self.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        return p

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self):
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def astype(self, dtype):
        out = ParamStore()
        for name, p in self.params.items():
            out.add(name, p.data.astype(dtype))
        out.step_count = self.step_count
        return out


def adam_step(store, lr=3e-5, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; clears gradients afterwards.

    Defaults follow the training setup used throughout this package:
    lr 3e-5, momentum coefficients (0.9, 0.999).
    """
    b1, b2 = betas
    for p in store.params.values():
        if p.grad is None:
            raise StateError("adam_step called with unpopulated gradients")
    store.step_count += 1
    t = store.step_count
    for name, p in store.params.items():
        g = p.grad
        m, v = store.moments[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store.moments[name] = (m, v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grad()
    return store


# -- initializers --------------------------------------------------------


def conv_init(rng, c_in, c_out, k=3, zero=False, dtype=np.float32):
    """He-normal conv kernel (or zeros for identity-start output heads)."""
    if zero:
        w = np.zeros((c_out, c_in, k, k), dtype=dtype)
    else:
        std = math.sqrt(2.0 / (c_in * k * k))
        w = rng.standard_normal((c_out, c_in, k, k)).astype(dtype) * std
    b = np.zeros(c_out, dtype=dtype)
    return w, b


def linear_init(rng, d_in, d_out, dtype=np.float32):
    std = math.sqrt(1.0 / d_in)
    w = rng.standard_normal((d_in, d_out)).astype(dtype) * std
    b = np.zeros(d_out, dtype=dtype)
    return w, b


# -- timestep embedding --------------------------------------------------


def time_embedding(t, dim):
    """Sinusoidal embedding of integer timesteps.

    Frequencies are geometrically spaced over [1, 1/10000]; output
    interleaves sin/cos so that t=0 maps to (0, 1, 0, 1, ...). Accepts a
    scalar or a 1-D array of timesteps.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    if half > 1:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    angles = t_arr[:, None] * freqs[None, :]
    emb = np.empty((t_arr.shape[0], dim))
    emb[:, 0::2] = np.sin(angles)
    emb[:, 1::2] = np.cos(angles)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return emb[0]
    return emb


# -- checkpoint format ---------------------------------------------------
#
# Layout: 8-byte little-endian header length, JSON header, raw float32
# little-endian parameter blob. Header maps name -> {shape, offset}.


def save_checkpoint(store, path):
    header = {"byte_order": "little", "dtype": "float32", "step": store.step_count, "params": {}}
    blobs = []
    offset = 0
    for name in sorted(store.params):
        data = store.params[name].data.astype("<f4")
        header["params"][name] = {"shape": list(data.shape), "offset": offset}
        raw = data.tobytes()
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    with open(path, "rb") as f:
        (head_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(head_len))
        blob = f.read()
    store = ParamStore()
    for name, meta in header["params"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=meta["offset"])
        store.add(name, arr.reshape(shape).astype(np.float32))
    store.step_count = header.get("step", 0)
    return store
