"""Dense feed-forward classifiers with exact gradients in parameters and inputs.

Weights are stored as ``(in_dim, out_dim)`` matrices so a layer computes
``h @ W + b`` on a row-major batch. The ReLU derivative at 0 is fixed to 0.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ModelFormatError, ParameterError
from .tensor import RngStream, check_finite, gaussian

ACTIVATIONS = ("relu", "elu", "none")

MODEL_MAGIC = b"NALM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise DimensionError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")


@dataclass
class Network:
    layers: tuple
    weights: list
    biases: list

    @property
    def num_classes(self):
        return self.layers[-1].out_dim

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    def copy(self):
        return Network(self.layers, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flat_parameters(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def equals(self, other):
        """Bitwise equality of architecture and parameters."""
        if self.layers != other.layers:
            return False
        return all(a.tobytes() == b.tobytes() for a, b in zip(self.parameters(), other.parameters()))


@dataclass
class GradPair:
    grad_theta: list  # [(dW, db), ...] mirroring Network.weights/biases
    grad_x: np.ndarray

    def flat_theta(self):
        return np.concatenate([np.concatenate([gw.ravel(), gb.ravel()]) for gw, gb in self.grad_theta])


@dataclass
class Trace:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation of each layer


def parse_arch(arch, activation="relu"):
    """``"784-256-256-10"`` -> LayerSpecs with ``activation`` on hidden layers."""
    try:
        dims = [int(p) for p in str(arch).split("-")]
    except ValueError:
        raise ParameterError(f"bad architecture string {arch!r}") from None
    if len(dims) < 2:
        raise ParameterError("architecture needs at least input and output sizes")
    specs = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        act = "none" if i == len(dims) - 2 else activation
        specs.append(LayerSpec(a, b, act))
    return specs


def _check_chain(specs):
    if not specs:
        raise DimensionError("network needs at least one layer")
    for a, b in zip(specs[:-1], specs[1:]):
        if a.out_dim != b.in_dim:
            raise DimensionError(f"layer chain mismatch: {a.out_dim} -> {b.in_dim}")
    if specs[-1].activation != "none":
        raise DimensionError("last layer must produce logits (activation 'none')")


def init_network(specs, rng):
    """Scaled-Gaussian fan-in init, std sqrt(2/in_dim); zero biases."""
    specs = tuple(specs)
    _check_chain(specs)
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    weights, biases = [], []
    for i, s in enumerate(specs):
        weights.append(gaussian(rng.child("init", i), (s.in_dim, s.out_dim), np.sqrt(2.0 / s.in_dim)))
        biases.append(np.zeros(s.out_dim))
    return Network(specs, weights, biases)


def activation_eval(kind, v):
    """Return ``(value, derivative)`` of the activation at ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if kind == "relu":
        return np.maximum(v, 0.0), (v > 0).astype(np.float64)
    if kind == "elu":
        neg = np.minimum(v, 0.0)
        return np.where(v > 0, v, np.expm1(neg)), np.where(v > 0, 1.0, np.exp(neg))
    if kind == "none":
        return v.copy(), np.ones_like(v)
    raise ParameterError(f"unknown activation {kind!r}")


def _act(kind, v):
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "elu":
        return np.where(v > 0, v, np.expm1(np.minimum(v, 0.0)))
    return v


def _act_grad(kind, v):
    if kind == "relu":
        return v > 0
    if kind == "elu":
        return np.where(v > 0, 1.0, np.exp(np.minimum(v, 0.0)))
    return None


def forward(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"expected input of shape (batch, {net.input_dim}), got {x.shape}")
    trace = Trace()
    h = x
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        trace.inputs.append(h)
        z = h @ w + b
        trace.pre.append(z)
        h = _act(spec.activation, z)
    return check_finite(h, "logits"), trace


def logits(net, x):
    return forward(net, x)[0]


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = np.full(n, int(labels))
    labels = labels.astype(np.int64)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ParameterError(f"label out of range [0, {num_classes})")
    return labels


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logit_batch, labels):
    """Per-row ``-log softmax(logits)[label]``."""
    logit_batch = np.atleast_2d(np.asarray(logit_batch, dtype=np.float64))
    labels = _check_labels(labels, logit_batch.shape[0], logit_batch.shape[1])
    return -log_softmax(logit_batch)[np.arange(len(labels)), labels]


def loss_ce(logit_batch, labels):
    """Mean cross-entropy over the batch."""
    return float(np.mean(cross_entropy(logit_batch, labels)))


def backward_ce(net, trace, labels, reduction="mean"):
    """Exact gradient of the batch cross-entropy w.r.t. parameters and input.

    ``reduction="mean"`` differentiates the batch mean, ``"sum"`` the batch
    sum (which gives each row's own input gradient unscaled).
    """
    z_out = trace.pre[-1]
    n = z_out.shape[0]
    labels = _check_labels(labels, n, net.num_classes)
    p = np.exp(log_softmax(z_out))
    g = p
    g[np.arange(n), labels] -= 1.0
    if reduction == "mean":
        g /= n
    elif reduction != "sum":
        raise ParameterError(f"unknown reduction {reduction!r}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        grads[i] = (trace.inputs[i].T @ g, g.sum(axis=0))
        g = g @ net.weights[i].T
        if i > 0:
            d = _act_grad(net.layers[i - 1].activation, trace.pre[i - 1])
            if d is not None:
                g = g * d
    return GradPair(grads, g)


def sgd_step(net, grad_theta, lr):
    """In-place ``theta <- theta - lr * grad``."""
    for i, (gw, gb) in enumerate(grad_theta):
        net.weights[i] -= lr * gw
        net.biases[i] -= lr * gb


class NetLoss:
    """Cross-entropy of a network exposed through the generic loss-model interface.

    The adversary and smoothing code accept anything with ``losses`` and
    ``loss_and_grad_x``; toy losses in :mod:`nalcert.oracles` implement the
    same two methods.
    """

    def __init__(self, net):
        self.net = net

    @property
    def input_dim(self):
        return self.net.input_dim

    def losses(self, x, labels):
        return cross_entropy(logits(self.net, x), labels)

    def loss_and_grad_x(self, x, labels):
        z, trace = forward(self.net, x)
        gp = backward_ce(self.net, trace, labels, reduction="sum")
        return cross_entropy(z, labels), gp.grad_x


def as_loss_model(model):
    return NetLoss(model) if isinstance(model, Network) else model


# ---- persistence --------------------------------------------------------


def dumps_network(net):
    header = json.dumps(
        {"layers": [[s.in_dim, s.out_dim, s.activation] for s in net.layers], "dtype": "<f8"},
        separators=(",", ":"),
    ).encode()
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<HI", MODEL_VERSION, len(header)))
    buf.write(header)
    for p in net.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def loads_network(blob):
    if len(blob) < 42 or blob[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model checksum mismatch")
    version, hlen = struct.unpack("<HI", body[4:10])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    header = json.loads(body[10 : 10 + hlen])
    specs = tuple(LayerSpec(a, b, act) for a, b, act in header["layers"])
    _check_chain(specs)
    off = 10 + hlen
    weights, biases = [], []
    for s in specs:
        nw, nb = s.in_dim * s.out_dim, s.out_dim
        w = np.frombuffer(body, dtype="<f8", count=nw, offset=off).reshape(s.in_dim, s.out_dim)
        off += 8 * nw
        b = np.frombuffer(body, dtype="<f8", count=nb, offset=off)
        off += 8 * nb
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(body):
        raise ModelFormatError("trailing bytes in model file")
    return Network(specs, weights, biases)


def save_network(net, path):
    with open(path, "wb") as f:
        f.write(dumps_network(net))


def load_network(path):
    with open(path, "rb") as f:
        return loads_network(f.read())
