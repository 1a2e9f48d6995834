"""Minimal differentiable layers on numpy arrays.

Dense, 2-D convolution, LSTM, embedding lookup, dropout, softmax /
cross-entropy and Adam, each with a hand-written backward pass.  Training
runs in float32; gradient-check tests build the same layers in float64.

Every layer follows the same small protocol: ``params`` and ``grads`` are
dicts of arrays with matching shapes, ``forward`` returns ``(out, cache)``
and ``backward(dout, cache)`` accumulates into ``grads`` and returns the
gradient w.r.t. the layer input.
"""

from __future__ import annotations

import struct

import numpy as np

DTYPE = np.float32

CHECKPOINT_MAGIC = b"DVQC"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i4", 3: "<i8"}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


class ShapeMismatch(ValueError):
    """Input shape does not match the layer specification."""


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or has an unsupported layout."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based stream (Philox); same seed -> same stream anywhere."""
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# activations

def _act_forward(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name, dy, y):
    # all supported activations have derivatives expressible via the output
    if name == "linear":
        return dy
    if name == "relu":
        return dy * (y > 0)
    if name == "tanh":
        return dy * (1.0 - y * y)
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    raise ValueError(f"unknown activation {name!r}")


def xavier_uniform(rng, shape, fan_in, fan_out, dtype=DTYPE):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Shared param/grad bookkeeping."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())


class Dense(Layer):
    """y = act(x @ W + b), x of shape (batch, n_in)."""

    def __init__(self, n_in, n_out, activation="linear", *, rng, dtype=DTYPE):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self._register("W", xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self._register("b", np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"dense expects (batch, {self.n_in}), got {x.shape}")
        y = _act_forward(self.activation, x @ self.params["W"] + self.params["b"])
        return y, (x, y)

    def backward(self, dy, cache):
        x, y = cache
        if dy.shape != y.shape:
            raise ShapeMismatch(f"upstream grad {dy.shape} != output {y.shape}")
        dz = _act_backward(self.activation, dy, y)
        self.grads["W"] += x.T @ dz
        self.grads["b"] += dz.sum(axis=0)
        return dz @ self.params["W"].T


class Conv2d(Layer):
    """2-D convolution on (batch, channels, height, width) input.

    padding is "valid" or "same"; stride >= 1.  Forward and backward are
    vectorized over the k*k kernel offsets, which is plenty for the small
    kernels used here.
    """

    def __init__(self, in_ch, out_ch, ksize=3, stride=1, padding="valid",
                 activation="linear", *, rng, dtype=DTYPE):
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if padding not in ("valid", "same"):
            raise ValueError(f"unknown padding {padding!r}")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.ksize, self.stride, self.padding = ksize, stride, padding
        self.activation = activation
        fan_in = in_ch * ksize * ksize
        fan_out = out_ch * ksize * ksize
        self._register("W", xavier_uniform(rng, (out_ch, in_ch, ksize, ksize),
                                           fan_in, fan_out, dtype))
        self._register("b", np.zeros(out_ch, dtype=dtype))

    def _geometry(self, h, w):
        k, s = self.ksize, self.stride
        if self.padding == "valid":
            if h < k or w < k:
                raise ShapeMismatch(f"input {h}x{w} smaller than kernel {k}")
            oh, ow = (h - k) // s + 1, (w - k) // s + 1
            pads = (0, 0, 0, 0)
        else:
            oh, ow = -(-h // s), -(-w // s)
            ph = max((oh - 1) * s + k - h, 0)
            pw = max((ow - 1) * s + k - w, 0)
            pads = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
        return oh, ow, pads

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"conv2d expects (batch, {self.in_ch}, h, w), got {x.shape}")
        b, _, h, w = x.shape
        k, s = self.ksize, self.stride
        oh, ow, (pt, pb, pl, pr) = self._geometry(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any((pt, pb, pl, pr)) else x
        W = self.params["W"]
        z = np.zeros((b, self.out_ch, oh, ow), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                xs = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
                # (b,c,oh,ow) x (oc,c) -> (b,oc,oh,ow)
                z += np.einsum("bchw,oc->bohw", xs, W[:, :, ki, kj], optimize=True)
        z += self.params["b"][None, :, None, None]
        y = _act_forward(self.activation, z)
        return y, (x, xp, y)

    def backward(self, dy, cache):
        x, xp, y = cache
        if dy.shape != y.shape:
            raise ShapeMismatch(f"upstream grad {dy.shape} != output {y.shape}")
        k, s = self.ksize, self.stride
        b, _, oh, ow = dy.shape
        _, _, hp, wp = xp.shape
        dz = _act_backward(self.activation, dy, y)
        self.grads["b"] += dz.sum(axis=(0, 2, 3))
        W = self.params["W"]
        dxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                xs = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
                self.grads["W"][:, :, ki, kj] += np.einsum(
                    "bohw,bchw->oc", dz, xs, optimize=True)
                dxp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += np.einsum(
                    "bohw,oc->bchw", dz, W[:, :, ki, kj], optimize=True)
        pt = (hp - x.shape[2]) // 2 if self.padding == "same" else 0
        pl = (wp - x.shape[3]) // 2 if self.padding == "same" else 0
        return dxp[:, :, pt:pt + x.shape[2], pl:pl + x.shape[3]]


class Embedding(Layer):
    """Token-id lookup table, ids of shape (batch, steps)."""

    def __init__(self, vocab_size, dim, *, rng, dtype=DTYPE):
        super().__init__()
        self.vocab_size, self.dim = vocab_size, dim
        self._register("W", xavier_uniform(rng, (vocab_size, dim), vocab_size, dim, dtype))

    def forward(self, ids):
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ShapeMismatch(f"embedding expects (batch, steps), got {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ShapeMismatch("token id out of range")
        return self.params["W"][ids], ids

    def backward(self, dy, cache):
        ids = cache
        np.add.at(self.grads["W"], ids.reshape(-1), dy.reshape(-1, self.dim))
        return None


class LSTM(Layer):
    """Single-layer LSTM over a full sequence (batch, steps, n_in).

    Gate order in the packed weight matrices is input, forget, cell, output.
    The forget-gate bias starts at +1 which keeps early training stable.
    """

    def __init__(self, n_in, hidden, *, rng, dtype=DTYPE):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        h = hidden
        self._register("Wx", xavier_uniform(rng, (n_in, 4 * h), n_in, h, dtype))
        self._register("Wh", xavier_uniform(rng, (h, 4 * h), h, h, dtype))
        b = np.zeros(4 * h, dtype=dtype)
        b[h:2 * h] = 1.0
        self._register("b", b)

    def cell(self, x_t, h_prev, c_prev):
        """One gated update; returns (h, c, gate cache)."""
        h = self.hidden
        a = x_t @ self.params["Wx"] + h_prev @ self.params["Wh"] + self.params["b"]
        i = 1.0 / (1.0 + np.exp(-a[:, :h]))
        f = 1.0 / (1.0 + np.exp(-a[:, h:2 * h]))
        g = np.tanh(a[:, 2 * h:3 * h])
        o = 1.0 / (1.0 + np.exp(-a[:, 3 * h:]))
        c = f * c_prev + i * g
        tc = np.tanh(c)
        return o * tc, c, (x_t, h_prev, c_prev, i, f, g, o, tc)

    def forward(self, x, h0=None, c0=None):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeMismatch(f"lstm expects (batch, steps, {self.n_in}), got {x.shape}")
        b, t, _ = x.shape
        h = np.zeros((b, self.hidden), dtype=x.dtype) if h0 is None else h0
        c = np.zeros((b, self.hidden), dtype=x.dtype) if c0 is None else c0
        hs = np.zeros((b, t, self.hidden), dtype=x.dtype)
        caches = []
        for step in range(t):
            h, c, cache = self.cell(x[:, step], h, c)
            hs[:, step] = h
            caches.append(cache)
        return hs, (h, c), caches

    def backward(self, dhs, caches, dh_last=None, dc_last=None):
        """dhs: per-step gradients (may be None), plus final-state gradients."""
        sample = caches[0][0]
        b = sample.shape[0]
        t = len(caches)
        dx = np.zeros((b, t, self.n_in), dtype=sample.dtype)
        dh = np.zeros((b, self.hidden), dtype=sample.dtype) if dh_last is None else dh_last.copy()
        dc = np.zeros((b, self.hidden), dtype=sample.dtype) if dc_last is None else dc_last.copy()
        Wx, Wh = self.params["Wx"], self.params["Wh"]
        for step in range(t - 1, -1, -1):
            if dhs is not None:
                dh = dh + dhs[:, step]
            x_t, h_prev, c_prev, i, f, g, o, tc = caches[step]
            do = dh * tc
            dct = dh * o * (1.0 - tc * tc) + dc
            di = dct * g
            df = dct * c_prev
            dg = dct * i
            dc = dct * f
            da = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)],
                axis=1)
            self.grads["Wx"] += x_t.T @ da
            self.grads["Wh"] += h_prev.T @ da
            self.grads["b"] += da.sum(axis=0)
            dx[:, step] = da @ Wx.T
            dh = da @ Wh.T
        return dx, dh, dc


# ---------------------------------------------------------------------------
# stateless ops

def dropout(x, p, train, rng):
    """Inverted dropout: zero with prob p and scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def softmax(logits, axis=-1):
    """Max-stabilized softmax; rows sum to 1."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs, targets):
    """Mean -log p[target] over the batch; probs (batch, k), targets int (batch,)."""
    targets = np.asarray(targets)
    picked = probs[np.arange(probs.shape[0]), targets]
    return float(-np.log(picked).mean())


def softmax_xent_grad(probs, targets):
    """d(mean cross-entropy)/d(logits) for probs = softmax(logits)."""
    targets = np.asarray(targets)
    d = probs.copy()
    d[np.arange(d.shape[0]), targets] -= 1.0
    return d / d.shape[0]


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on param.

    state is a dict carrying first/second moments and the step counter; an
    empty dict is initialized on first use.
    """
    if param.shape != grad.shape:
        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    if not state:
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
        state["t"] = 0
    state["t"] += 1
    m, v, t = state["m"], state["v"], state["t"]
    m += (1.0 - beta1) * (grad - m)
    v += (1.0 - beta2) * (grad * grad - v)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Adam:
    """Tracks per-parameter moment state for a list of layers."""

    def __init__(self, layers, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.layers = list(layers)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = [{name: {} for name in layer.params} for layer in self.layers]

    def step(self):
        for layer, states in zip(self.layers, self.state):
            for name, param in layer.params.items():
                adam_step(param, layer.grads[name], states[name],
                          self.lr, self.beta1, self.beta2, self.eps)

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()


def param_count(layers) -> int:
    return sum(layer.param_count() for layer in layers)


# ---------------------------------------------------------------------------
# checkpoint i/o: flat binary, little-endian, bit-exact round trip

def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    """header {magic, version, count} then per-entry {name, dtype, shape, raw}."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr)
            code = _DTYPE_TO_CODE.get(np.dtype(data.dtype.str.replace(">", "<")))
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
            raw = data.astype(_DTYPE_CODES[code], copy=False).tobytes()
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(raw)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if len(view) < 12 or bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", view, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    arrays: dict[str, np.ndarray] = {}
    offset = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", view, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", view, offset)
            offset += 4 * ndim
            dt = np.dtype(_DTYPE_CODES[code])
            nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if ndim else dt.itemsize
            if offset + nbytes > len(view):
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            arrays[name] = np.frombuffer(view[offset:offset + nbytes], dtype=dt).reshape(shape).copy()
            offset += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if offset != len(view):
        raise CheckpointError(f"{path}: trailing bytes after last entry")
    return arrays


def collect_params(named_layers) -> dict[str, np.ndarray]:
    """Flatten {layer_name: layer} into checkpoint entries 'layer/param'."""
    out = {}
    for lname, layer in named_layers.items():
        for pname, param in layer.params.items():
            out[f"{lname}/{pname}"] = param
    return out


def restore_params(named_layers, arrays):
    for lname, layer in named_layers.items():
        for pname in layer.params:
            key = f"{lname}/{pname}"
            if key not in arrays:
                raise CheckpointError(f"missing checkpoint entry {key!r}")
            stored = arrays[key]
            if stored.shape != layer.params[pname].shape:
                raise CheckpointError(
                    f"{key!r}: shape {stored.shape} != {layer.params[pname].shape}")
            layer.params[pname][...] = stored
