"""Flat parameter storage, the Adam optimizer, and checkpoint IO.

All learnable scalars of the system live in one ParamStore: both neural
field MLPs, the per-frame correction field, the density sharpness scalar and
the digitization heads each own a named, disjoint segment of the flat value
array. Gradients land in a parallel flat array through shared-view tensors,
so the optimizer is a handful of vectorized updates regardless of how many
sub-networks exist.
"""

from __future__ import annotations

import json

import numpy as np

from .engine import Tensor

CHECKPOINT_VERSION = 1


class ParamStore:
    """Flat array of learnable values with named disjoint segments."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._pending = []  # (name, shape, init array) until frozen
        self._segments = {}  # name -> (offset, shape)
        self.values = None
        self.grads = None

    @property
    def frozen(self):
        return self.values is not None

    def register(self, name, init):
        """Reserve a named segment initialised with ``init`` (any array)."""
        if self.frozen:
            raise RuntimeError("ParamStore is frozen; register before freeze()")
        if name in self._segments or any(n == name for n, _, _ in self._pending):
            raise ValueError(f"duplicate parameter segment {name!r}")
        init = np.asarray(init, dtype=self.dtype)
        self._pending.append((name, init.shape, init))
        return name

    def freeze(self):
        if self.frozen:
            return self
        total = sum(int(np.prod(shape)) for _, shape, _ in self._pending)
        self.values = np.zeros(total, dtype=self.dtype)
        self.grads = np.zeros(total, dtype=self.dtype)
        off = 0
        for name, shape, init in self._pending:
            n = int(np.prod(shape))
            self._segments[name] = (off, shape)
            self.values[off : off + n] = init.ravel()
            off += n
        self._pending.clear()
        return self

    @property
    def size(self):
        return 0 if self.values is None else self.values.size

    def segment_names(self):
        return list(self._segments)

    def segment_slice(self, name):
        off, shape = self._segments[name]
        return slice(off, off + int(np.prod(shape)))

    def tensor(self, name, tape=None, trainable=True):
        """Tensor view of a segment; grads accumulate into the flat store.

        With ``tape=None`` (or trainable=False) the view is a plain constant:
        the identical forward computation runs without any recording.
        """
        off, shape = self._segments[name]
        n = int(np.prod(shape))
        data = self.values[off : off + n].reshape(shape)
        if tape is None or not trainable:
            return Tensor(data)
        grad = self.grads[off : off + n].reshape(shape)
        return Tensor(data, tape=tape, requires_grad=True, grad=grad)

    def get(self, name):
        off, shape = self._segments[name]
        return self.values[off : off + int(np.prod(shape))].reshape(shape)

    def get_grad(self, name):
        off, shape = self._segments[name]
        return self.grads[off : off + int(np.prod(shape))].reshape(shape)

    def zero_grad(self):
        self.grads[:] = 0.0

    def mask_for(self, prefixes):
        """Boolean mask over the flat array selecting segments by name prefix."""
        mask = np.zeros(self.size, dtype=bool)
        for name in self._segments:
            if any(name.startswith(p) for p in prefixes):
                mask[self.segment_slice(name)] = True
        return mask

    def spec_json(self):
        return json.dumps(
            [[name, list(self._segments[name][1])] for name in self._segments]
        )


class Adam:
    """Bias-corrected Adam over (a masked part of) a ParamStore."""

    def __init__(self, store, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8, mask=None):
        store.freeze()
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(store.size, dtype=store.dtype)
        self.v = np.zeros(store.size, dtype=store.dtype)
        self.t = 0
        self.mask = mask  # None means all parameters

    def step(self):
        adam_step(self.store, self, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(store, state, lr, beta1, beta2, eps):
    """One standard Adam update; moment buffers persist inside ``state``."""
    state.t += 1
    g = store.grads
    if state.mask is not None:
        g = np.where(state.mask, g, 0.0)
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * g * g
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    upd = lr * mhat / (np.sqrt(vhat) + eps)
    if state.mask is not None:
        upd = np.where(state.mask, upd, 0.0)
    store.values -= upd


def save_checkpoint(path, store, adam=None, step=0, meta=None):
    """Versioned binary dump; round-trips values and moments bit-exactly."""
    payload = {
        "version": np.asarray(CHECKPOINT_VERSION),
        "step": np.asarray(step),
        "values": store.values,
        "segments": np.frombuffer(store.spec_json().encode(), dtype=np.uint8),
    }
    if adam is not None:
        payload["adam_m"] = adam.m
        payload["adam_v"] = adam.v
        payload["adam_t"] = np.asarray(adam.t)
    if meta is not None:
        payload["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path, store, adam=None):
    """Restore values (and moments) into an identically laid out store."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        seg = json.loads(bytes(data["segments"]).decode())
        if seg != json.loads(store.spec_json()):
            raise ValueError("checkpoint segment layout does not match store")
        store.freeze()
        store.values[:] = data["values"]
        step = int(data["step"])
        if adam is not None and "adam_m" in data:
            adam.m[:] = data["adam_m"]
            adam.v[:] = data["adam_v"]
            adam.t = int(data["adam_t"])
        meta = json.loads(bytes(data["meta"]).decode()) if "meta" in data else None
    return step, meta
