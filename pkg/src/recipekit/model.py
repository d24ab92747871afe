"""A compact convolutional classifier with hand-derived backpropagation.

Layout is NHWC throughout.  Three blocks of (3x3 conv, stride 1, zero pad 1)
-> ReLU -> 2x2 average pool feed a global average pool, a linear embedding
layer and a linear classifier::

    x (N,H,W,3) -> [conv-relu-pool] x3 -> GAP (N,64) -> embedding (N,D) -> logits (N,K)

Global pooling lets the network take any input of at least 8x8 pixels,
which test-time augmentation relies on.
"""

import hashlib

import numpy as np

from . import _accel
from .losses import softmax

CHANNELS = (16, 32, 64)
MIN_SIDE = 2 ** len(CHANNELS)


class ModelInputError(ValueError):
    """Raised when a batch does not fit the network."""


class BackwardWithoutForward(RuntimeError):
    """``backward`` was called without a cached training-mode forward pass."""


def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = _accel.im2col3x3(xp).reshape(n * h * wd, 9 * c)
    z = cols @ w.reshape(9 * c, -1) + b
    return z.reshape(n, h, wd, -1), cols


def _conv_backward(dz, cols, w, x_shape, need_dx):
    n, h, wd, c = x_shape
    co = w.shape[-1]
    dz2 = dz.reshape(-1, co)
    dw = (cols.T @ dz2).reshape(w.shape)
    db = dz2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dz2 @ w.reshape(9 * c, co).T).reshape(n, h, wd, 9, c)
    dx = _accel.col2im3x3(dcols)[:, 1:-1, 1:-1, :]
    return dx, dw, db


def _pool_forward(a):
    n, h, w, c = a.shape
    ho, wo = h // 2, w // 2
    crop = a[:, : 2 * ho, : 2 * wo, :]
    return crop.reshape(n, ho, 2, wo, 2, c).mean(axis=(2, 4))


def _pool_backward(dout, a_shape):
    n, h, w, c = a_shape
    ho, wo = dout.shape[1:3]
    da = np.zeros(a_shape, dtype=dout.dtype)
    spread = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * 0.25
    da[:, : 2 * ho, : 2 * wo, :] = spread
    return da


class TinyBackbone:
    """Parameter store plus forward/backward for the reference network.

    ``params`` is an ordered dict of arrays.  When an ArcFace head is attached
    its class-centre matrix lives here as ``arcface.weight`` so the optimizer
    updates it alongside the trunk.
    """

    def __init__(self, params, input_size=32):
        self.params = params
        self.input_size = int(input_size)
        self._cache = None

    @classmethod
    def init(cls, seed, embed_dim=64, num_classes=10, input_size=32, dtype=np.float32):
        if embed_dim < 1 or num_classes < 1:
            raise ValueError("embed_dim and num_classes must be >= 1")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5EED])))
        params = {}
        c_in = 3
        for i, c_out in enumerate(CHANNELS, start=1):
            bound = np.sqrt(6.0 / (9 * c_in))
            params[f"conv{i}.w"] = rng.uniform(-bound, bound, (3, 3, c_in, c_out))
            params[f"conv{i}.b"] = np.zeros(c_out)
            c_in = c_out
        for name, fan_in, fan_out in (("embed", c_in, embed_dim), ("fc", embed_dim, num_classes)):
            bound = np.sqrt(3.0 / fan_in)
            params[f"{name}.w"] = rng.uniform(-bound, bound, (fan_in, fan_out))
            params[f"{name}.b"] = np.zeros(fan_out)
        params = {k: v.astype(dtype) for k, v in params.items()}
        return cls(params, input_size)

    @property
    def embed_dim(self):
        return self.params["embed.w"].shape[1]

    @property
    def num_classes(self):
        return self.params["fc.w"].shape[1]

    @property
    def dtype(self):
        return self.params["fc.w"].dtype

    def add_arcface_head(self, seed):
        """Attach a freshly initialised ArcFace centre matrix if none exists."""
        if "arcface.weight" not in self.params:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xA4C])))
            bound = np.sqrt(3.0 / self.embed_dim)
            w = rng.uniform(-bound, bound, (self.num_classes, self.embed_dim))
            self.params["arcface.weight"] = w.astype(self.dtype)
        return self.params["arcface.weight"]

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype):
        return TinyBackbone({k: v.astype(dtype) for k, v in self.params.items()}, self.input_size)

    def digest(self):
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[3] != 3:
            raise ModelInputError(f"expected an (N, H, W, 3) batch, got {x.shape}")
        if x.shape[1] < MIN_SIDE or x.shape[2] < MIN_SIDE:
            raise ModelInputError(f"spatial size {x.shape[1:3]} is below {MIN_SIDE}x{MIN_SIDE}")
        if not np.all(np.isfinite(x)):
            raise ModelInputError("input batch contains NaN or Inf")
        return x.astype(self.dtype, copy=False)

    def forward(self, x, train=False):
        """Return ``(embeddings, logits)``; ``train=True`` caches for backward."""
        a = self._check_input(x)
        p = self.params
        blocks = []
        for i in range(1, len(CHANNELS) + 1):
            z, cols = _conv_forward(a, p[f"conv{i}.w"], p[f"conv{i}.b"])
            mask = z > 0
            r = z * mask
            pooled = _pool_forward(r)
            if train:
                blocks.append((a.shape, cols, mask, r.shape))
            a = pooled
        g = a.mean(axis=(1, 2))
        emb = g @ p["embed.w"] + p["embed.b"]
        logits = emb @ p["fc.w"] + p["fc.b"]
        if train:
            self._cache = (blocks, a.shape, g, emb)
        return emb, logits

    def backward(self, d_emb=None, d_logits=None):
        """Parameter gradients from upstream gradients of both heads.

        The classifier's gradient and the direct embedding gradient add at the
        embedding, then flow through the shared trunk.
        """
        if self._cache is None:
            raise BackwardWithoutForward("run forward(..., train=True) before backward")
        blocks, last_shape, g, emb = self._cache
        p = self.params
        dt = self.dtype
        n = emb.shape[0]
        d_logits = np.zeros((n, self.num_classes), dt) if d_logits is None else d_logits.astype(dt)
        d_emb = np.zeros_like(emb) if d_emb is None else d_emb.astype(dt)
        grads = {}
        grads["fc.w"] = emb.T @ d_logits
        grads["fc.b"] = d_logits.sum(axis=0)
        d_e = d_emb + d_logits @ p["fc.w"].T
        grads["embed.w"] = g.T @ d_e
        grads["embed.b"] = d_e.sum(axis=0)
        d_g = d_e @ p["embed.w"].T
        _, hl, wl, _ = last_shape
        d_a = np.broadcast_to(d_g[:, None, None, :] / (hl * wl), last_shape)
        for i in range(len(CHANNELS), 0, -1):
            x_shape, cols, mask, r_shape = blocks[i - 1]
            d_r = _pool_backward(d_a, r_shape)
            d_z = d_r * mask
            d_a, dw, db = _conv_backward(d_z, cols, p[f"conv{i}.w"], x_shape, need_dx=i > 1)
            grads[f"conv{i}.w"] = dw
            grads[f"conv{i}.b"] = db
        return {k: grads[k] for k in p if k in grads}

    def activation_signature(self):
        """Digest of the cached ReLU masks; finite-difference audits compare these."""
        if self._cache is None:
            return None
        h = hashlib.sha1()
        for _, _, mask, _ in self._cache[0]:
            h.update(np.packbits(mask).tobytes())
        return h.hexdigest()


def predict_probs(model, x, batch_size=256):
    """Row-wise softmax of the classifier logits, computed in float64."""
    x = np.asarray(x)
    out = []
    for start in range(0, len(x), batch_size):
        _, logits = model.forward(x[start : start + batch_size], train=False)
        out.append(softmax(logits))
    if not out:
        return np.zeros((0, model.num_classes))
    return np.concatenate(out, axis=0)
