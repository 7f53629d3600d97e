"""Brute-force ground truth for the test suite.

Nothing here imports the modules it is used to check (adversary, smoothing,
certifier, nn); only numpy and the standard library.  Agreement between an
oracle and the production code is therefore evidence rather than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

TOY_KINDS = ("bounded-bump", "concave-quadratic", "linear")


@dataclass
class ToyLoss:
    """Closed-form losses on R^d that speak the loss-model interface.

    bounded-bump:       M * exp(-||x - c||^2 / scale^2), clamped to [0, M]
    concave-quadratic:  -(scale / 2) * ||x - c||^2
    linear:             w . x

    ``center`` may be a single point ``(d,)`` or one point per label
    ``(C, d)``; in the latter case row ``i`` uses ``center[labels[i]]``.
    Labels are otherwise ignored.
    """

    kind: str
    center: np.ndarray = field(default_factory=lambda: np.zeros(1))
    scale: float = 1.0
    M: float = 1.0
    w: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in TOY_KINDS:
            raise ParameterError(f"unknown toy loss {self.kind!r}")
        self.center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        if self.scale <= 0 or self.M <= 0:
            raise ParameterError("scale and M must be positive")
        if self.kind == "linear":
            if self.w is None:
                raise ParameterError("linear toy loss needs w")
            self.w = np.atleast_1d(np.asarray(self.w, dtype=np.float64))

    input_dim = None

    def _centers(self, X, labels):
        if self.center.ndim == 1:
            return self.center[None, :]
        if labels is None:
            raise ParameterError("per-label centers need labels")
        return self.center[np.broadcast_to(np.asarray(labels, dtype=np.int64), (X.shape[0],))]

    def value(self, X, labels=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "linear":
            return X @ self.w
        sq = np.sum(np.square(X - self._centers(X, labels)), axis=1)
        if self.kind == "bounded-bump":
            return np.clip(self.M * np.exp(-sq / self.scale**2), 0.0, self.M)
        return -0.5 * self.scale * sq

    def grad(self, X, labels=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "linear":
            return np.broadcast_to(self.w, X.shape).copy()
        diff = X - self._centers(X, labels)
        if self.kind == "bounded-bump":
            v = self.M * np.exp(-np.sum(diff**2, axis=1) / self.scale**2)
            return (-2.0 / self.scale**2) * v[:, None] * diff
        return -self.scale * diff

    # loss-model interface
    def losses(self, X, labels=None):
        return self.value(X, labels)

    def loss_and_grad_x(self, X, labels=None):
        return self.value(X, labels), self.grad(X, labels)

    def smoothed_closed_form(self, x, sigma, label=None):
        """E_z[loss(x + z)], z ~ N(0, sigma^2 I), for the single-center bump and the quadratic."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        c = self.center if self.center.ndim == 1 else self.center[label]
        sq = float(np.sum((x - c) ** 2))
        d = x.size
        if self.kind == "bounded-bump":
            s2 = self.scale**2
            return self.M * (s2 / (s2 + 2 * sigma**2)) ** (d / 2) * math.exp(-sq / (s2 + 2 * sigma**2))
        if self.kind == "concave-quadratic":
            return -0.5 * self.scale * (sq + d * sigma**2)
        return float(x @ self.w)


# ---- Gauss-Hermite smoothing ------------------------------------------------


def hermite_nodes(d, sigma, order):
    """Nodes ``(m, d)`` and weights ``(m,)`` for E over N(0, sigma^2 I_d)."""
    if d > 2:
        raise DimensionError("quadrature oracle supports d <= 2")
    if order < 20:
        raise ParameterError("quadrature order must be >= 20")
    t, w = np.polynomial.hermite.hermgauss(order)
    z1 = math.sqrt(2.0) * sigma * t
    w1 = w / math.sqrt(math.pi)
    if d == 1:
        return z1[:, None], w1
    zz = np.stack(np.meshgrid(z1, z1, indexing="ij"), axis=-1).reshape(-1, 2)
    return zz, np.outer(w1, w1).ravel()


def quadrature_smoothed(objective, x, sigma, order=40):
    """E_z[objective(x + z)] by tensor-product Gauss-Hermite.

    ``objective`` maps an ``(N, d)`` array to ``(N,)`` values.  ``x`` may be a
    point ``(d,)`` (scalar result) or a batch ``(n, d)`` (vector result).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = np.atleast_2d(x.reshape(1, -1) if single else x)
    z, w = hermite_nodes(X.shape[1], sigma, order)
    pts = (X[:, None, :] + z[None, :, :]).reshape(-1, X.shape[1])
    vals = np.asarray(objective(pts), dtype=np.float64).reshape(X.shape[0], -1)
    out = vals @ w
    return float(out[0]) if single else out


# ---- grid search --------------------------------------------------------------


def _grid(center, half, res):
    axes = [np.linspace(c - half, c + half, res) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _best(objective, pts, chunk):
    vals = np.concatenate([np.asarray(objective(pts[i : i + chunk]), dtype=np.float64)
                           for i in range(0, len(pts), chunk)])
    j = int(np.argmax(vals))
    return pts[j], float(vals[j])


def grid_maximize(objective, x0, radius, resolution=200, chunk=4096):
    """Exhaustive maximization over a grid centred at ``x0``, then a 10x finer pass.

    The coarse grid spans ``x0 +- radius`` with ``resolution`` points per
    axis; the refinement covers the best coarse cell's neighbourhood
    (one cell either side) at a tenth of the spacing.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.size > 2:
        raise DimensionError("grid oracle supports d <= 2")
    if resolution < 100:
        raise ParameterError("resolution must be >= 100 per axis")
    x_best, v_best = _best(objective, _grid(x0, radius, resolution), chunk)
    h = 2.0 * radius / (resolution - 1)
    x_ref, v_ref = _best(objective, _grid(x_best, h, 21), chunk)
    if v_ref >= v_best:
        return x_ref, v_ref
    return x_best, v_best


# ---- finite differences --------------------------------------------------------


def _check_h(h):
    if not 1e-7 <= h <= 1e-3:
        raise ParameterError("finite-difference step must lie in [1e-7, 1e-3]")


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    _check_h(h)
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def finite_diff_hessian(f, x, h=1e-4):
    """Symmetrized central-difference Hessian of scalar ``f`` at a vector ``x``."""
    _check_h(h)
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.size
    H = np.zeros((d, d))
    e = np.eye(d) * h
    f0 = f(x)
    for i in range(d):
        H[i, i] = (f(x + e[i]) - 2 * f0 + f(x - e[i])) / h**2
        for j in range(i + 1, d):
            H[i, j] = (f(x + e[i] + e[j]) - f(x + e[i] - e[j]) - f(x - e[i] + e[j]) + f(x - e[i] - e[j])) / (4 * h * h)
    return 0.5 * (H + H.T) if d > 1 else H


# ---- binomial tails and normal quantile ------------------------------------------


def _log_pmf(i, n, p):
    return math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * math.log(p) + (n - i) * math.log1p(-p)


def _tail(ks, n, p):
    """Sum of the binomial pmf over ``ks`` via log-space accumulation."""
    logs = [_log_pmf(i, n, p) for i in ks]
    m = max(logs)
    return math.exp(m) * sum(math.exp(v - m) for v in logs)


def _bisect(g, lo, hi, tol):
    # g increasing on [lo, hi]; returns the root
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_binom(k, n, alpha):
    if n > 2000:
        raise ParameterError("brute-force binomial oracle supports n <= 2000")
    if not (0 <= k <= n) or n < 1:
        raise ParameterError(f"need 0 <= k <= n, n >= 1 (k={k}, n={n})")
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")


def binomial_lower_brute(k, n, alpha, tol=1e-12):
    """p with P(X >= k | p) = alpha, by bisection on the summed upper tail."""
    _check_binom(k, n, alpha)
    if k == 0:
        return 0.0
    return _bisect(lambda p: _tail(range(k, n + 1), n, p) - alpha, 0.0 + 1e-300, 1.0 - 1e-16, tol)


def binomial_upper_brute(k, n, alpha, tol=1e-12):
    """p with P(X <= k | p) = alpha, by bisection on the summed lower tail."""
    _check_binom(k, n, alpha)
    if k == n:
        return 1.0
    return _bisect(lambda p: alpha - _tail(range(0, k + 1), n, p), 1e-300, 1.0 - 1e-16, tol)


def normal_cdf_erf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def inv_phi_bisect(p, tol=1e-13):
    if not 0 < p < 1:
        raise ParameterError("p must lie in (0, 1)")
    if p > 0.5:
        # 1 - p is exact here; bisecting the lower tail keeps full relative precision
        return -inv_phi_bisect(1.0 - p, tol)
    return _bisect(lambda x: normal_cdf_erf(x) - p, -40.0, 40.0, tol)


# ---- duplicate implementations for cross-checks -------------------------------


def naive_matmul(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise DimensionError("inner dimensions differ")
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_forward(weights, biases, activations, x):
    """Row-by-row forward pass written without the production helpers."""
    out = []
    for row in np.atleast_2d(np.asarray(x, dtype=np.float64)):
        h = list(row)
        for W, b, act in zip(weights, biases, activations):
            nxt = []
            for j in range(W.shape[1]):
                v = b[j] + sum(h[i] * W[i, j] for i in range(W.shape[0]))
                if act == "relu":
                    v = v if v > 0 else 0.0
                elif act == "elu":
                    v = v if v > 0 else math.expm1(v)
                nxt.append(v)
            h = nxt
        out.append(h)
    return np.array(out)
