"""Minimal differentiable dense-network engine.

All tensors are plain numpy arrays of shape (batch, features). Complex
vectors travel as concatenated real halves: [Re(v) | Im(v)]. Complex
N x L matrices flatten row-major per part: [Re(X).ravel() | Im(X).ravel()].

Layers implement forward(x, mode, rng) -> (y, cache) and
backward(cache, dy) -> (dx, param_grads). A NetworkGraph is an ordered
layer list; Residual and Branch layers nest sub-sequences, which keeps
the graph acyclic and the backward pass a simple reversal.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, InvalidArgument, NonFiniteError, StateError

TRAIN = "train"
EVAL = "eval"


def _merge_grads(target, layer, grads):
    """Container layers emit grads already keyed 'sublayer.param'; leaf
    layers emit bare param names that get the layer's name prefixed."""
    if layer.sublayers():
        target.update(grads)
    else:
        for k, v in grads.items():
            target[f"{layer.name}.{k}"] = v


def _ensure_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced in {where}")


# ---------------------------------------------------------------------------
# Stateless numeric primitives
# ---------------------------------------------------------------------------

def quantize_ste(x, bits):
    """B-bit uniform quantizer with bin-midpoint reconstruction.

    Inputs are clamped to [0, 1]; the top bin absorbs x = 1 so the output
    stays strictly inside (0, 1). Worst-case error is 2^-(bits+1).
    """
    if bits < 1:
        raise InvalidArgument(f"bits must be >= 1, got {bits}")
    levels = 2 ** bits
    clamped = np.clip(x, 0.0, 1.0)
    idx = np.minimum(np.floor(clamped * levels), levels - 1)
    return (idx + 0.5) / levels


def quantizer_midpoints(bits):
    """All representable output levels of quantize_ste, ascending."""
    levels = 2 ** bits
    return (np.arange(levels) + 0.5) / levels


def awgn_apply(signal, snr_db, rng):
    """Add white Gaussian noise to complex samples stored as real pairs.

    signal has shape (..., 2L) with layout [Re | Im]. The noise variance is
    referenced to each sample's own average per-symbol power:
    sigma^2 = (||signal||^2 / L) / 10^(snr_db/10), split evenly between the
    real and imaginary parts. snr_db=None bypasses (infinite SNR).
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[-1] == 0 or signal.shape[-1] % 2 != 0:
        raise InvalidArgument(f"signal last dim must be even and nonzero, got {signal.shape}")
    if snr_db is None:
        return signal.copy()
    half = signal.shape[-1] // 2
    power = np.sum(signal ** 2, axis=-1, keepdims=True) / half
    sigma2 = power / (10.0 ** (snr_db / 10.0))
    noise = rng.standard_normal(signal.shape) * np.sqrt(sigma2 / 2.0)
    return signal + noise


def power_project(w_re, w_im, power):
    """Rescale each complex column of (w_re, w_im) to squared norm `power`.

    All-zero columns are replaced by the scaled first standard basis vector
    so the constraint holds unconditionally.
    """
    if power <= 0:
        raise InvalidArgument(f"power must be positive, got {power}")
    w_re = np.asarray(w_re, dtype=np.float64)
    w_im = np.asarray(w_im, dtype=np.float64)
    col_norm = np.sqrt(np.sum(w_re ** 2 + w_im ** 2, axis=0))
    zero = col_norm == 0.0
    safe = np.where(zero, 1.0, col_norm)
    scale = np.sqrt(power) / safe
    out_re = w_re * scale
    out_im = w_im * scale
    if np.any(zero):
        out_re = out_re.copy()
        out_im = out_im.copy()
        out_re[:, zero] = 0.0
        out_im[:, zero] = 0.0
        out_re[0, zero] = np.sqrt(power)
    return out_re, out_im


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Layer:
    """Base layer: no parameters, identity-like contract."""

    def __init__(self, name):
        self.name = name

    def params(self):
        return {}

    def trainable(self):
        return {}

    def sublayers(self):
        return ()

    def forward(self, x, mode, rng):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def _shape_check(self, x, dim):
        if x.ndim != 2 or x.shape[1] != dim:
            raise InvalidArgument(
                f"layer '{self.name}' expects input (batch, {dim}), got {x.shape}")


class Dense(Layer):
    def __init__(self, in_dim, out_dim, bias=True, name="dense"):
        super().__init__(name)
        if in_dim < 1 or out_dim < 1:
            raise InvalidArgument("dense dims must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.has_bias = bias
        self.weight = np.zeros((in_dim, out_dim))
        self.bias = np.zeros(out_dim) if bias else None

    def params(self):
        p = {"weight": self.weight}
        if self.has_bias:
            p["bias"] = self.bias
        return p

    def trainable(self):
        return {k: True for k in self.params()}

    def forward(self, x, mode, rng):
        self._shape_check(x, self.in_dim)
        y = x @ self.weight
        if self.has_bias:
            y = y + self.bias
        return y, x

    def backward(self, cache, dy):
        x = cache
        grads = {"weight": x.T @ dy}
        if self.has_bias:
            grads["bias"] = dy.sum(axis=0)
        return dy @ self.weight.T, grads


class Activation(Layer):
    KINDS = ("tanh", "sigmoid", "relu")

    def __init__(self, kind, name=None):
        if kind not in self.KINDS:
            raise InvalidArgument(f"unknown activation '{kind}'")
        super().__init__(name or kind)
        self.kind = kind

    def forward(self, x, mode, rng):
        if self.kind == "tanh":
            y = np.tanh(x)
        elif self.kind == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-x))
        else:
            y = np.maximum(x, 0.0)
        return y, y

    def backward(self, cache, dy):
        y = cache
        if self.kind == "tanh":
            dx = dy * (1.0 - y ** 2)
        elif self.kind == "sigmoid":
            dx = dy * y * (1.0 - y)
        else:
            dx = dy * (y > 0.0)
        return dx, {}


class Quantize(Layer):
    """Uniform quantizer; backward is the exact identity (straight-through)."""

    def __init__(self, bits, name="quantize"):
        super().__init__(name)
        if bits < 1:
            raise InvalidArgument("quantizer bits must be >= 1")
        self.bits = bits

    def forward(self, x, mode, rng):
        return quantize_ste(x, self.bits), None

    def backward(self, cache, dy):
        return dy, {}


class AWGN(Layer):
    """Per-sample signal-power-referenced noise injection.

    Active in train mode (or always when always_on); snr_db=None bypasses.
    Backward is the exact identity.
    """

    def __init__(self, snr_db=None, always_on=False, name="awgn"):
        super().__init__(name)
        self.snr_db = snr_db
        self.always_on = always_on

    def forward(self, x, mode, rng):
        if self.snr_db is None or (mode != TRAIN and not self.always_on):
            return x, None
        if rng is None:
            raise StateError(f"layer '{self.name}' needs an rng to draw noise")
        return awgn_apply(x, self.snr_db, rng), None

    def backward(self, cache, dy):
        return dy, {}


class PowerProject(Layer):
    """Project activations holding a flattened complex N x L matrix so every
    column has squared norm `power`. Input layout: [Re(X).ravel() | Im(X).ravel()].
    """

    def __init__(self, power, n_rows, n_cols, name="power_project"):
        super().__init__(name)
        if power <= 0:
            raise InvalidArgument("power must be positive")
        self.power = power
        self.n_rows = n_rows
        self.n_cols = n_cols

    @property
    def dim(self):
        return 2 * self.n_rows * self.n_cols

    def forward(self, x, mode, rng):
        self._shape_check(x, self.dim)
        b = x.shape[0]
        n, l = self.n_rows, self.n_cols
        w = x.reshape(b, 2, n, l)  # [:,0]=Re, [:,1]=Im
        norm = np.sqrt(np.sum(w ** 2, axis=(1, 2)))  # (b, l)
        if np.any(norm == 0.0):
            raise InvalidArgument(
                f"layer '{self.name}': zero column cannot be projected in-graph")
        scale = np.sqrt(self.power) / norm
        y = w * scale[:, None, None, :]
        return y.reshape(b, -1), (w, norm, scale)

    def backward(self, cache, dy):
        w, norm, scale = cache
        b = w.shape[0]
        g = dy.reshape(w.shape)
        # y = sqrt(P) w_col / |w_col|; dL/dw = scale*(g - w (w.g)/|w|^2) per column
        dot = np.sum(w * g, axis=(1, 2))  # (b, l)
        dx = scale[:, None, None, :] * (g - w * (dot / norm ** 2)[:, None, None, :])
        return dx.reshape(b, -1), {}


class ComplexPilot(Layer):
    """Trainable complex pilot matrix applied to a complex row-vector channel.

    Input [Re(h) | Im(h)] of width 2N, output [Re(hX) | Im(hX)] of width 2L.
    The two real weight matrices realize the bias-free linear maps of the
    real/imaginary decomposition.
    """

    def __init__(self, n_ant, length, name="pilot"):
        super().__init__(name)
        self.n_ant = n_ant
        self.length = length
        self.w_re = np.zeros((n_ant, length))
        self.w_im = np.zeros((n_ant, length))

    def params(self):
        return {"w_re": self.w_re, "w_im": self.w_im}

    def trainable(self):
        return {"w_re": True, "w_im": True}

    def project(self, power):
        """Re-impose the per-column power constraint on the pilot weights."""
        re, im = power_project(self.w_re, self.w_im, power)
        self.w_re[...] = re
        self.w_im[...] = im

    def forward(self, x, mode, rng):
        self._shape_check(x, 2 * self.n_ant)
        hr, hi = x[:, : self.n_ant], x[:, self.n_ant:]
        yr = hr @ self.w_re - hi @ self.w_im
        yi = hi @ self.w_re + hr @ self.w_im
        return np.concatenate([yr, yi], axis=1), (hr, hi)

    def backward(self, cache, dy):
        hr, hi = cache
        gr, gi = dy[:, : self.length], dy[:, self.length:]
        dhr = gr @ self.w_re.T + gi @ self.w_im.T
        dhi = -gr @ self.w_im.T + gi @ self.w_re.T
        grads = {
            "w_re": hr.T @ gr + hi.T @ gi,
            "w_im": -hi.T @ gr + hr.T @ gi,
        }
        return np.concatenate([dhr, dhi], axis=1), grads


class Residual(Layer):
    """Skip connection around an inner layer sequence (same in/out width)."""

    def __init__(self, inner, name="residual"):
        super().__init__(name)
        self.inner = list(inner)

    def sublayers(self):
        return tuple(self.inner)

    def forward(self, x, mode, rng):
        h = x
        caches = []
        for layer in self.inner:
            h, c = layer.forward(h, mode, rng)
            caches.append(c)
        if h.shape != x.shape:
            raise InvalidArgument(
                f"layer '{self.name}': inner output {h.shape} != input {x.shape}")
        return x + h, caches

    def backward(self, cache, dy):
        dh = dy
        grads = {}
        for layer, c in zip(reversed(self.inner), reversed(cache)):
            dh, g = layer.backward(c, dh)
            _merge_grads(grads, layer, g)
        return dy + dh, grads


class Branch(Layer):
    """Parallel sub-sequences over input column slices, outputs concatenated.

    branches: list of (start, stop, layers); layers=None passes the slice
    through unchanged. Slices may overlap (e.g. two heads on the full input);
    input gradients accumulate.
    """

    def __init__(self, in_dim, branches, name="branch"):
        super().__init__(name)
        self.in_dim = in_dim
        self.branches = [(s, t, list(ls) if ls is not None else None)
                         for s, t, ls in branches]
        for s, t, _ in self.branches:
            if not (0 <= s < t <= in_dim):
                raise InvalidArgument(f"layer '{name}': bad slice [{s}:{t}]")

    def sublayers(self):
        subs = []
        for _, _, ls in self.branches:
            if ls is not None:
                subs.extend(ls)
        return tuple(subs)

    def forward(self, x, mode, rng):
        self._shape_check(x, self.in_dim)
        outs, caches = [], []
        for s, t, ls in self.branches:
            h = x[:, s:t]
            if ls is None:
                outs.append(h)
                caches.append(None)
                continue
            sub = []
            for layer in ls:
                h, c = layer.forward(h, mode, rng)
                sub.append(c)
            outs.append(h)
            caches.append(sub)
        widths = [o.shape[1] for o in outs]
        return np.concatenate(outs, axis=1), (caches, widths, x.shape)

    def backward(self, cache, dy):
        caches, widths, x_shape = cache
        dx = np.zeros(x_shape)
        grads = {}
        off = 0
        for (s, t, ls), c, w in zip(self.branches, caches, widths):
            g_out = dy[:, off:off + w]
            off += w
            if ls is None:
                dx[:, s:t] += g_out
                continue
            dh = g_out
            for layer, lc in zip(reversed(ls), reversed(c)):
                dh, g = layer.backward(lc, dh)
                _merge_grads(grads, layer, g)
            dx[:, s:t] += dh
        return dx, grads


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------

class NetworkGraph:
    """Ordered layer list with a flat, name-keyed parameter view."""

    def __init__(self, layers):
        self.layers = list(layers)
        names = [l.name for l in self.walk()]
        if len(names) != len(set(names)):
            raise InvalidArgument(f"duplicate layer names in graph: {sorted(names)}")

    def walk(self):
        """Depth-first iteration over all layers, nested ones included."""
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            stack.extend(reversed(layer.sublayers()))

    def parameters(self):
        """Flat dict of 'layer.param' -> live array reference."""
        out = {}
        for layer in self.walk():
            for pname, arr in layer.params().items():
                out[f"{layer.name}.{pname}"] = arr
        return out

    def trainable_mask(self):
        out = {}
        for layer in self.walk():
            for pname, flag in layer.trainable().items():
                out[f"{layer.name}.{pname}"] = flag
        return out

    def param_count(self):
        return sum(a.size for a in self.parameters().values())

    def forward(self, x, mode=TRAIN, rng=None):
        """Run the layer composition; returns (output, caches)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, mode, rng)
            caches.append(c)
        _ensure_finite(x, f"forward through {len(self.layers)} layers")
        return x, caches

    def predict(self, x, rng=None):
        return self.forward(x, mode=EVAL, rng=rng)[0]

    def backward(self, caches, dy):
        """Reverse-mode pass; returns (input grad, grads keyed 'layer.param')."""
        if caches is None or len(caches) != len(self.layers):
            raise StateError("forward cache missing or stale; run forward first")
        dy = np.asarray(dy, dtype=np.float64)
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(cache, dy)
            _merge_grads(grads, layer, g)
        _ensure_finite(dy, "backward input gradient")
        return dy, grads

    def copy_state(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state(self, state):
        params = self.parameters()
        for k, v in state.items():
            if k not in params:
                raise InvalidArgument(f"unknown parameter '{k}' in state")
            if params[k].shape != v.shape:
                raise InvalidArgument(
                    f"shape mismatch for '{k}': {params[k].shape} vs {v.shape}")
            params[k][...] = v


def glorot_init(graph, seed):
    """Glorot-uniform weights, zero biases, deterministic under seed."""
    rng = np.random.default_rng(seed)
    for layer in graph.walk():
        if isinstance(layer, Dense):
            limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            layer.weight[...] = rng.uniform(-limit, limit, layer.weight.shape)
            if layer.has_bias:
                layer.bias[...] = 0.0
        elif isinstance(layer, ComplexPilot):
            limit = np.sqrt(6.0 / (layer.n_ant + layer.length))
            layer.w_re[...] = rng.uniform(-limit, limit, layer.w_re.shape)
            layer.w_im[...] = rng.uniform(-limit, limit, layer.w_im.shape)
    return graph


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(state, params, grads, trainable=None):
    """One bias-corrected Adam update, in place on `params`.

    Parameters whose trainable flag is False (or with no gradient) are left
    untouched; the step counter increments exactly once per call.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1 ** state.t
    correct2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        if trainable is not None and not trainable.get(key, True):
            continue
        g = grads.get(key)
        if g is None:
            continue
        if g.shape != p.shape:
            raise InvalidArgument(
                f"gradient shape {g.shape} != parameter shape {p.shape} for '{key}'")
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g ** 2
        p -= state.lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
        _ensure_finite(p, f"adam update of '{key}'")
    return params, state


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"PCEW"
_CKPT_VERSION = 1


def save_params(graph, path):
    """Write all graph parameters as float32 little-endian."""
    entries = sorted(graph.parameters().items())
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes(order="C"))


def load_params(graph, path):
    """Load a checkpoint written by save_params into the graph (in place)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", offset=0)
    try:
        version, count = struct.unpack_from("<II", data, 4)
    except struct.error:
        raise FormatError("truncated checkpoint header", offset=len(data))
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    pos = 12
    params = graph.parameters()
    seen = set()
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            if len(data[pos:pos + nlen]) != nlen:
                raise struct.error
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            if len(data) - pos < 4 * n:
                raise struct.error
            flat = np.frombuffer(data, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
        except struct.error:
            raise FormatError("truncated checkpoint entry", offset=pos)
        if name not in params:
            raise FormatError(f"checkpoint names unknown parameter '{name}'", offset=pos)
        if params[name].shape != tuple(shape):
            raise FormatError(
                f"shape mismatch for '{name}': file {tuple(shape)}, graph {params[name].shape}",
                offset=pos)
        params[name][...] = flat.reshape(shape).astype(np.float64)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"checkpoint missing parameters {sorted(missing)}", offset=pos)
    return graph
