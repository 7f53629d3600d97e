"""Inner maximization of the penalized noisy loss, and l2 PGD attacks.

The ascent works on the r-sample objective

    F(x) = (1/r) sum_j [ loss(x + z_j) - gamma * c(x + z_j, x0) ],   c(a, b) = ||a - b||^2

with fresh draws z_j at every iteration and no projection onto any box.
``cost_mode="clean"`` replaces the noisy cost with ``c(x, x0)``.

Noise for instance ``i`` comes from ``ns.stream("inner", i)`` as one
``(K + 1, r, d)`` block: slot ``k < K`` drives iteration ``k`` and slot ``K``
evaluates the final objective. Everything is batched across instances, but
the draws an instance sees depend only on its identifier, never on which
batch or thread it lands in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AscentDivergenceError, DimensionError, ParameterError
from .nn import Network, as_loss_model, logits
from .smoothing import NoiseSpec
from .tensor import RngStream

COST_MODES = ("noisy", "clean")
START_MODES = ("clean", "random-ball")


@dataclass(frozen=True)
class SurrogateSpec:
    gamma: float
    K: int = 4
    eta1: float | None = None  # default 0.5 / gamma
    cost_mode: str = "noisy"
    start_mode: str = "clean"
    start_radius: float = 0.0
    clamp01: bool = False

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ParameterError("gamma must be >= 0")
        if int(self.K) != self.K or self.K < 0:
            raise ParameterError("K must be an integer >= 0")
        if self.eta1 is None:
            if self.gamma == 0:
                raise ParameterError("eta1 has no default when gamma = 0")
            object.__setattr__(self, "eta1", 0.5 / self.gamma)
        if not self.eta1 > 0:
            raise ParameterError("eta1 must be > 0")
        if self.cost_mode not in COST_MODES:
            raise ParameterError(f"cost_mode must be one of {COST_MODES}")
        if self.start_mode not in START_MODES:
            raise ParameterError(f"start_mode must be one of {START_MODES}")
        if self.start_mode == "random-ball" and not self.start_radius > 0:
            raise ParameterError("random-ball start needs start_radius > 0")


@dataclass(frozen=True)
class AttackSpec:
    epsilon: float
    k_pgd: int = 20
    eta: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")
        if int(self.k_pgd) != self.k_pgd or self.k_pgd < 1:
            raise ParameterError("k_pgd must be an integer >= 1")
        step = 2.0 * self.epsilon / self.k_pgd
        if self.eta is None:
            object.__setattr__(self, "eta", step)
        elif self.eta != step:
            raise ParameterError(f"eta must equal 2*epsilon/k_pgd = {step}")


@dataclass
class SurrogateResult:
    x_adv: np.ndarray
    phi_estimate: float
    ascent_trace: list = field(default_factory=list)
    transport_cost: float = 0.0
    phi_se: float = 0.0


@dataclass
class BatchSurrogate:
    """Batched counterpart of :class:`SurrogateResult` (one row per instance)."""

    x_adv: np.ndarray
    phi: np.ndarray
    phi_se: np.ndarray
    trace: np.ndarray  # (n, K + 1)
    transport_cost: np.ndarray
    final_noise: np.ndarray  # (n, r, d) slot-K draws

    def result(self, i):
        return SurrogateResult(self.x_adv[i], float(self.phi[i]), list(self.trace[i]),
                               float(self.transport_cost[i]), float(self.phi_se[i]))


def _start(ss, ns, x0, instances):
    if ss.start_mode == "clean":
        return x0.copy()
    out = x0.copy()
    root = RngStream(int(ns.seed))
    d = x0.shape[1]
    for row, i in enumerate(instances):
        gen = root.child("start", i).generator()
        u = gen.standard_normal(d)
        u /= np.linalg.norm(u)
        out[row] += ss.start_radius * gen.random() ** (1.0 / d) * u
    return out


def _objective(lm, pts, labels_rep, x_base, x0, noise, gamma, cost_mode, with_grad):
    """Per-draw penalized values (n, r) and, optionally, the mean ascent direction (n, d)."""
    n, r, d = noise.shape
    if with_grad:
        vals, g = lm.loss_and_grad_x(pts, labels_rep)
    else:
        vals, g = lm.losses(pts, labels_rep), None
    vals = vals.reshape(n, r)
    if cost_mode == "noisy":
        diff = pts.reshape(n, r, d) - x0[:, None, :]
        cost = np.sum(diff * diff, axis=2)
    else:
        diff = x_base - x0
        cost = np.broadcast_to(np.sum(diff * diff, axis=1)[:, None], (n, r))
    pen = vals - gamma * cost
    if not with_grad:
        return pen, None
    g = g.reshape(n, r, d)
    if cost_mode == "noisy":
        step = (g - (2.0 * gamma) * diff).mean(axis=1)
    else:
        step = g.mean(axis=1) - (2.0 * gamma) * diff
    return pen, step


def inner_maximize_batch(model, X0, labels, ss, ns, instances=None, tag="inner"):
    """Run the noisy ascent on every row of ``X0``.

    ``instances`` are the integer identifiers that key each row's noise
    stream (default ``0..n-1``).
    """
    lm = as_loss_model(model)
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    n, d = X0.shape
    if getattr(lm, "input_dim", None) not in (None, d):
        raise DimensionError(f"model expects inputs of length {lm.input_dim}, got {d}")
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,))
    instances = np.arange(n) if instances is None else np.asarray(instances, dtype=np.int64)
    r = ns.draws
    K = int(ss.K)
    if ns.sigma == 0:
        noise = np.zeros((n, K + 1, r, d))
    else:
        noise = np.stack([ns.stream(tag, i).generator().standard_normal((K + 1, r, d)) for i in instances])
        noise *= ns.sigma
    labels_rep = np.repeat(labels, r)
    x = _start(ss, ns, X0, instances)
    trace = np.empty((n, K + 1))
    for k in range(K):
        pts = (x[:, None, :] + noise[:, k]).reshape(n * r, d)
        pen, step = _objective(lm, pts, labels_rep, x, X0, noise[:, k], ss.gamma, ss.cost_mode, True)
        trace[:, k] = pen.mean(axis=1)
        x = x + ss.eta1 * step
        if ss.clamp01:
            x = np.clip(x, 0.0, 1.0)
        if not np.all(np.isfinite(x)):
            raise AscentDivergenceError(k + 1)
    zK = noise[:, K]
    pts = (x[:, None, :] + zK).reshape(n * r, d)
    pen, _ = _objective(lm, pts, labels_rep, x, X0, zK, ss.gamma, ss.cost_mode, False)
    if not np.all(np.isfinite(pen)):
        raise AscentDivergenceError(K, "non-finite objective at the final iterate")
    phi = pen.mean(axis=1)
    trace[:, K] = phi
    se = pen.std(axis=1, ddof=1) / np.sqrt(r) if r > 1 else np.zeros(n)
    tc = np.sum(np.square(x[:, None, :] + zK - X0[:, None, :]), axis=2).mean(axis=1)
    return BatchSurrogate(x, phi, se, trace, tc, zK)


def inner_maximize(model, x0, label, ss, ns, instance=0):
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    return inner_maximize_batch(model, x0[None, :], [label], ss, ns, [instance]).result(0)


def wrm_inner(model, x0, label, gamma, K, eta1=None, seed=0, instance=0):
    """Noiseless Lagrangian ascent: the sigma = 0, r = 1 case of :func:`inner_maximize`."""
    ss = SurrogateSpec(gamma=gamma, K=K, eta1=eta1)
    return inner_maximize(model, x0, label, ss, NoiseSpec(0.0, 1, seed), instance)


def pgd_attack(model, X0, labels, attack, clamp01=False):
    """l2 PGD: normalized-gradient steps of size ``eta``, each followed by projection.

    Works on a batch (rows of ``X0``) or a single vector. Rows whose gradient
    is exactly zero skip the step rather than raising.
    """
    lm = as_loss_model(model)
    X0 = np.asarray(X0, dtype=np.float64)
    single = X0.ndim == 1
    X0 = np.atleast_2d(X0)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (X0.shape[0],))
    eps = float(attack.epsilon)
    x = X0.copy()
    for _ in range(int(attack.k_pgd)):
        _, g = lm.loss_and_grad_x(x, labels)
        gn = np.linalg.norm(g, axis=1)
        ok = gn > 0
        x[ok] += attack.eta * g[ok] / gn[ok, None]
        delta = x - X0
        dn = np.linalg.norm(delta, axis=1)
        far = dn > eps
        delta[far] *= (eps / dn[far])[:, None]
        x = X0 + delta
        if clamp01:
            x = np.clip(x, 0.0, 1.0)
    return x[0] if single else x


def predict(net, X, batch=2048):
    """Deterministic argmax predictions (ties to the lowest class index)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(len(X), dtype=np.int64)
    for i in range(0, len(X), batch):
        out[i : i + batch] = np.argmax(logits(net, X[i : i + batch]), axis=1)
    return out


def transfer_eval(source_net, target_net, dataset, attack, batch=512):
    """Accuracy of ``target_net`` on PGD examples crafted against ``source_net``.

    A point counts as correct only if the target classifies both the clean
    input and the transferred example correctly (the clean input lies in the
    attack ball, so a clean error is already a successful attack).
    """
    if not (isinstance(source_net, Network) and isinstance(target_net, Network)):
        raise ParameterError("transfer_eval needs two networks")
    if source_net.input_dim != target_net.input_dim or source_net.num_classes != target_net.num_classes:
        raise DimensionError("source and target networks disagree on input size or class count")
    X, y = dataset.inputs, dataset.labels
    correct = 0
    for i in range(0, len(X), batch):
        xb, yb = X[i : i + batch], y[i : i + batch]
        adv = pgd_attack(source_net, xb, yb, attack)
        correct += int(np.sum((predict(target_net, xb) == yb) & (predict(target_net, adv) == yb)))
    return correct / len(X)
