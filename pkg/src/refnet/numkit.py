"""Small dense numeric kernel: MLPs with hand-written backprop, Adam, BCE, RNG streams.

Everything is float64. Arrays are plain numpy; non-finite values are rejected
where data enters (inputs, gradients).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

ACTIVATIONS = ("relu", "sigmoid", "identity")
PROB_CLAMP = 1e-12


# -- RNG ---------------------------------------------------------------------

def _name_key(name) -> int:
    digest = hashlib.sha256(str(name).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(seed: int, *names) -> np.random.Generator:
    """Counter-based (Philox) stream for ``(seed, *names)``.

    Streams depend only on the seed and the name path, never on the order in
    which they are requested, so per-entity streams are schedule independent.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_name_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *names) -> int:
    return int(derive_rng(seed, *names).integers(0, 2**31 - 1))


# -- activations -------------------------------------------------------------

def sigmoid(z):
    return expit(np.asarray(z, dtype=np.float64))


def log_sigmoid(z):
    return log_expit(np.asarray(z, dtype=np.float64))


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def check_finite(x, what="array"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains NaN or Inf")
    return x


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# -- MLP ---------------------------------------------------------------------

class Mlp:
    """Fully connected network. Weights are ``(fan_in, fan_out)``; rows are samples."""

    def __init__(self, sizes, activations, dropout: float = 0.0, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if len(activations) != len(sizes) - 1:
            raise ValueError("one activation per layer required")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        self.sizes = sizes
        self.activations = list(activations)
        self.dropout = float(dropout)
        rng = rng if rng is not None else derive_rng(0, "mlp")
        self.weights = [xavier_uniform(i, o, rng) for i, o in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(o) for o in sizes[1:]]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x, training: bool = False, rng=None, return_cache: bool = False):
        x = check_finite(x, "input")
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} input columns, got {x.shape[1]}")
        cache = {"inputs": [], "pre": [], "post": [], "masks": []}
        h = x
        last = len(self.weights) - 1
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            cache["inputs"].append(h)
            z = h @ w + b
            a = _act(act, z)
            cache["pre"].append(z)
            cache["post"].append(a)
            mask = None
            if training and self.dropout > 0 and i < last:
                if rng is None:
                    raise ValueError("training with dropout needs an rng")
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache["masks"].append(mask)
            h = a
        return (h, cache) if return_cache else h

    def backward(self, cache, grad_out, grad_wrt_pre: bool = False):
        """Parameter gradients given dL/d(output).

        With ``grad_wrt_pre`` the incoming gradient is taken w.r.t. the last
        pre-activation (fused sigmoid + BCE).
        """
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            if cache["masks"][i] is not None:
                g = g * cache["masks"][i]
            if not (grad_wrt_pre and i == len(self.weights) - 1):
                g = g * _act_grad(self.activations[i], cache["pre"][i], cache["post"][i])
            grads_w[i] = cache["inputs"][i].T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out += [gw, gb]
        return out, g

    def predict(self, x) -> np.ndarray:
        return self.forward(x, training=False).ravel() if self.sizes[-1] == 1 else self.forward(x)

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.sizes = list(self.sizes)
        twin.activations = list(self.activations)
        twin.dropout = self.dropout
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin


# -- loss --------------------------------------------------------------------

def bce_loss(p, y):
    """Mean binary cross-entropy and its gradient w.r.t. ``p``."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = (pc - y) / (pc * (1.0 - pc)) / p.size
    grad[(p < PROB_CLAMP) | (p > 1.0 - PROB_CLAMP)] = 0.0
    return float(loss), grad


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, **kw) -> "AdamState":
        return cls(learning_rate=learning_rate,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam, updating ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must align")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("NaN or Inf gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- binary classifier training ----------------------------------------------

def fit_binary(mlp: Mlp, x, y, epochs: int, learning_rate: float = 1e-3,
               batch_size: int = 32, rng=None) -> list[float]:
    """Mini-batch Adam on mean BCE; returns per-epoch training loss."""
    x = check_finite(x, "features")
    y = np.asarray(y, dtype=np.float64).ravel()
    if mlp.activations[-1] != "sigmoid" or mlp.sizes[-1] != 1:
        raise ValueError("binary training needs a single sigmoid output")
    rng = rng if rng is not None else derive_rng(0, "fit_binary")
    state = AdamState.for_params(mlp.params, learning_rate=learning_rate)
    history = []
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            p, cache = mlp.forward(x[idx], training=True, rng=rng, return_cache=True)
            p = p.ravel()
            pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
            yb = y[idx]
            total += -np.sum(yb * np.log(pc) + (1 - yb) * np.log1p(-pc))
            g = ((p - yb) / len(idx))[:, None]
            grads, _ = mlp.backward(cache, g, grad_wrt_pre=True)
            adam_step(state, mlp.params, grads)
        history.append(total / n)
    return history


# -- gradient checking -------------------------------------------------------

def relative_error(a, b, floor: float = 1e-7) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def numeric_gradient(f, params, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``f()`` w.r.t. each entry of ``params`` (in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = f()
            p[i] = old - h
            fm = f()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def grad_check(model: Mlp, x, y, h: float = 1e-5, kink_margin: float = 1e-4) -> float:
    """Max relative error between backprop and central differences of mean BCE.

    Dropout must be off. Raises if a relu pre-activation sits within
    ``kink_margin`` of zero, where the derivative is undefined.
    """
    x = check_finite(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    probe = model.copy()
    probe.dropout = 0.0
    _, cache = probe.forward(x, return_cache=True)
    for act, z in zip(probe.activations, cache["pre"]):
        if act == "relu" and np.any(np.abs(z) <= kink_margin):
            raise ValueError("relu pre-activation at a kink; gradient check undefined")

    def loss():
        return bce_loss(probe.forward(x), y)[0]

    p, cache = probe.forward(x, return_cache=True)
    _, dp = bce_loss(p, y)
    analytic, _ = probe.backward(cache, dp[:, None])
    numeric = numeric_gradient(loss, probe.params, h)
    return float(max(relative_error(a, n).max() for a, n in zip(analytic, numeric)))


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"RFNMLP\x00\x00"
_VERSION = 1


def save_mlp(mlp: Mlp, path) -> None:
    """Binary checkpoint: header then little-endian float64 parameters.

    Layout: magic (8 bytes), version u32, layer count L u32, L+1 sizes u32,
    L activation codes u8, dropout f64, then for each layer the weight matrix
    (fan_in x fan_out, row-major) followed by the bias vector.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(mlp.weights)))
        fh.write(struct.pack(f"<{len(mlp.sizes)}I", *mlp.sizes))
        fh.write(bytes(ACTIVATIONS.index(a) for a in mlp.activations))
        fh.write(struct.pack("<d", mlp.dropout))
        for w, b in zip(mlp.weights, mlp.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ValueError("not an MLP checkpoint")
    version, layers = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    sizes = list(struct.unpack_from(f"<{layers + 1}I", data, off))
    off += 4 * (layers + 1)
    acts = [ACTIVATIONS[c] for c in data[off:off + layers]]
    off += layers
    (dropout,) = struct.unpack_from("<d", data, off)
    off += 8
    mlp = Mlp.__new__(Mlp)
    mlp.sizes, mlp.activations, mlp.dropout = sizes, acts, dropout
    mlp.weights, mlp.biases = [], []
    for i, o in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=i * o, offset=off).reshape(i, o)
        off += 8 * i * o
        b = np.frombuffer(data, dtype="<f8", count=o, offset=off)
        off += 8 * o
        mlp.weights.append(w.astype(np.float64))
        mlp.biases.append(b.astype(np.float64))
    return mlp
