"""Gaussian smoothing: noise configuration, Monte-Carlo smoothed loss, smoothed prediction.

Every function takes a *loss model*: either a :class:`~nalcert.nn.Network`
(cross-entropy) or any object exposing ``losses(X, labels)`` and
``loss_and_grad_x(X, labels)`` on row batches.

Noise for one estimate is drawn from the sub-stream
``RngStream(seed).child(tag, instance, iteration)``, so an estimate depends only
on its own identifiers and never on which thread or in what order it runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .nn import GradPair, Network, as_loss_model, backward_ce, forward, logits
from .tensor import RngStream, as_tensor, gaussian


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    r: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ParameterError(f"sigma must be >= 0, got {self.sigma}")
        if int(self.r) != self.r or self.r < 1:
            raise ParameterError(f"r must be an integer >= 1, got {self.r}")

    @property
    def draws(self):
        """Effective draw count: with sigma = 0 every draw is identical, so one suffices."""
        return 1 if self.sigma == 0 else int(self.r)

    def stream(self, tag, *index):
        return RngStream(int(self.seed)).child(tag, *index)


def draw_noise(ns, shape, tag, *index):
    """Noise tensor of ``shape`` from the sub-stream ``(tag, *index)``; zeros when sigma = 0."""
    return gaussian(ns.stream(tag, *index), shape, ns.sigma)


def _vector(x, model):
    x = as_tensor(x, "x").ravel()
    d = getattr(model, "input_dim", None)
    if d is not None and x.size != d:
        raise DimensionError(f"expected an input of length {d}, got {x.size}")
    return x


def smoothed_loss(model, x, label, ns, instance=0, iteration=0, noise=None):
    """Monte-Carlo estimate of E_z[loss(x + z)] and its standard error.

    ``noise`` (shape ``(r, d)``) freezes the draws instead of sampling them.
    """
    lm = as_loss_model(model)
    x = _vector(x, lm)
    if noise is None:
        noise = draw_noise(ns, (ns.draws, x.size), "smooth", instance, iteration)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1, x.size)
    vals = lm.losses(x[None, :] + noise, np.full(noise.shape[0], label))
    if vals.size == 1:
        return float(vals[0]), 0.0
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))


def smoothed_loss_grad(model, x, label, ns, instance=0, iteration=0, noise=None):
    """Exact gradient of the r-sample average loss; ``grad_theta`` is empty for non-network models."""
    lm = as_loss_model(model)
    x = _vector(x, lm)
    if noise is None:
        noise = draw_noise(ns, (ns.draws, x.size), "smooth", instance, iteration)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1, x.size)
    pts = x[None, :] + noise
    labels = np.full(noise.shape[0], label)
    if isinstance(model, Network):
        _, trace = forward(model, pts)
        gp = backward_ce(model, trace, labels, reduction="mean")
        return GradPair(gp.grad_theta, gp.grad_x.sum(axis=0))
    _, gx = lm.loss_and_grad_x(pts, labels)
    return GradPair([], gx.mean(axis=0))


def _logit_fn(model):
    if isinstance(model, Network):
        return lambda X: logits(model, X)
    if hasattr(model, "logits"):
        return model.logits
    raise ParameterError("smoothed prediction needs a network or an object with a logits() method")


def smoothed_predict(model, x, sigma, n, rng, chunk=1000):
    """Counts of the base classifier's argmax over ``n`` noisy copies of ``x``.

    Ties between logits go to the lowest class index (``numpy.argmax``).
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    f = _logit_fn(model)
    x = as_tensor(x, "x").ravel()
    if sigma == 0:
        z = f(x[None, :])
        counts = np.zeros(z.shape[1], dtype=np.int64)
        counts[int(np.argmax(z[0]))] = n
        return counts
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    counts = None
    left = n
    while left:
        m = min(chunk, left)
        z = f(x[None, :] + gaussian(gen, (m, x.size), sigma))
        c = np.bincount(np.argmax(z, axis=1), minlength=z.shape[1])
        counts = c if counts is None else counts + c
        left -= m
    return counts.astype(np.int64)


def smoothed_predict_batch(model, X, sigma, n, ns_or_stream, tag="predict"):
    """Majority-vote smoothed predictions for each row, one sub-stream per row."""
    root = ns_or_stream if isinstance(ns_or_stream, RngStream) else RngStream(int(ns_or_stream.seed))
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int64)
    for i, x in enumerate(X):
        out[i] = int(np.argmax(smoothed_predict(model, x, sigma, n, root.child(tag, i))))
    return out


def noisy_cost(x, x0, noise):
    """Per-draw squared-l2 transport cost ``||x + z - x0||^2``."""
    return np.sum(np.square(x[None, :] + noise - x0[None, :]), axis=1)


__all__ = [
    "NoiseSpec",
    "draw_noise",
    "smoothed_loss",
    "smoothed_loss_grad",
    "smoothed_predict",
    "smoothed_predict_batch",
    "noisy_cost",
]
