"""Outer minimization: NAL, WRM, training with noise, PGD adversarial training, natural SGD.

All five methods share one loop: shuffle with ``child("shuffle", epoch)``,
build the batch's training points, take a plain SGD step on their mean
cross-entropy. Only the construction of the training points differs:

  natural  x0
  noise    x0 + z, r fresh draws per instance
  pgd_at   PGD(x0) inside an l2 ball of radius attack_eps
  wrm      noiseless Lagrangian ascent from x0
  nal      noisy Lagrangian ascent from x0, then r fresh draws around x_K

Because the pieces are shared, nal with K = 0 and sigma = 0 performs exactly
the arithmetic of natural training, and nal with sigma = 0, r = 1 exactly that
of wrm.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .adversary import AttackSpec, SurrogateSpec, inner_maximize_batch, pgd_attack, predict
from .errors import NonFiniteError, ParameterError, TrainingDivergedError
from .nn import backward_ce, cross_entropy, forward, sgd_step
from .parallel import chunked_map
from .smoothing import NoiseSpec, smoothed_predict
from .tensor import RngStream

METHODS = ("nal", "wrm", "noise", "pgd_at", "natural")

# Rows per work unit when a batch is fanned out across threads. Fixed so the
# arithmetic never depends on the thread count.
WORK_CHUNK = 32


@dataclass(frozen=True)
class TrainSpec:
    method: str
    epochs: int = 10
    eta2: float = 0.1
    batch_size: int = 128
    gamma: float | None = None
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(0.0, 1, 0))
    K: int = 4
    eta1: float | None = None
    cost_mode: str = "noisy"
    attack_eps: float | None = None
    k_pgd: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ParameterError("epochs must be an integer >= 1")
        if not self.eta2 > 0:
            raise ParameterError("eta2 must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.method in ("nal", "wrm"):
            if self.gamma is None or not self.gamma > 0:
                raise ParameterError(f"method {self.method} needs gamma > 0")
            self.surrogate()  # validates K, eta1, cost_mode
        if self.method == "pgd_at" and (self.attack_eps is None or not self.attack_eps > 0):
            raise ParameterError("method pgd_at needs attack_eps > 0")

    def surrogate(self):
        return SurrogateSpec(gamma=self.gamma, K=self.K, eta1=self.eta1, cost_mode=self.cost_mode)

    def effective_noise(self):
        """The noise actually used: wrm, pgd_at and natural train without it."""
        if self.method in ("nal", "noise"):
            return self.noise
        return NoiseSpec(0.0, 1, self.noise.seed)

    def as_dict(self):
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d


@dataclass
class TrainHistory:
    surrogate_loss: list = field(default_factory=list)  # epoch mean of the minimized loss
    clean_loss: list = field(default_factory=list)  # full-train-set loss after the epoch
    wall_time: list = field(default_factory=list)  # seconds spent in the epoch

    def rows(self):
        return [(e + 1, s, c, t) for e, (s, c, t) in
                enumerate(zip(self.surrogate_loss, self.clean_loss, self.wall_time))]


def _training_points(net, X0, y, idx, ts, epoch, threads):
    """Training inputs and their labels for one batch (rows grouped per instance)."""
    ns = ts.effective_noise()
    if ts.method == "natural":
        return X0, y
    if ts.method == "noise":
        if ns.sigma == 0:
            return X0, y
        r, d = ns.draws, X0.shape[1]
        z = np.stack([ns.stream(f"train-noise-e{epoch}", i).generator().standard_normal((r, d)) for i in idx])
        return (X0[:, None, :] + ns.sigma * z).reshape(-1, d), np.repeat(y, r)
    if ts.method == "pgd_at":
        attack = AttackSpec(ts.attack_eps, ts.k_pgd)
        parts = chunked_map(lambda lo, hi: pgd_attack(net, X0[lo:hi], y[lo:hi], attack),
                            len(idx), WORK_CHUNK, threads)
        return np.concatenate(parts), y
    ss = ts.surrogate()

    def work(lo, hi):
        res = inner_maximize_batch(net, X0[lo:hi], y[lo:hi], ss, ns, idx[lo:hi], tag=f"inner-e{epoch}")
        if ns.sigma == 0:
            return res.x_adv
        # slot K of each instance's block: fresh draws for the parameter update
        return (res.x_adv[:, None, :] + res.final_noise).reshape(-1, X0.shape[1])

    pts = np.concatenate(chunked_map(work, len(idx), WORK_CHUNK, threads))
    return pts, np.repeat(y, ns.draws)


def _mean_loss(net, X, y, batch=2048):
    total = 0.0
    for i in range(0, len(X), batch):
        total += float(np.sum(cross_entropy(forward(net, X[i : i + batch])[0], y[i : i + batch])))
    return total / len(X)


def _rows_per_instance(ts):
    """Rows per instance in a training batch."""
    if ts.method in ("nal", "noise"):
        return ts.effective_noise().draws
    return 1


def train(net0, ds, ts, threads=1, log=None):
    """Train a copy of ``net0`` on ``ds``; returns ``(net, history)``."""
    net = net0.copy()
    hist = TrainHistory()
    root = RngStream(int(ts.seed))
    n = ds.n
    for epoch in range(ts.epochs):
        t0 = time.perf_counter()
        perm = root.child("shuffle", epoch).generator().permutation(n)
        acc, count = 0.0, 0
        for b, lo in enumerate(range(0, n, ts.batch_size)):
            idx = perm[lo : lo + ts.batch_size]
            try:
                pts, lab = _training_points(net, ds.inputs[idx], ds.labels[idx], idx, ts, epoch, threads)
                z, trace = forward(net, pts)
            except NonFiniteError as e:
                raise TrainingDivergedError(epoch + 1, b + 1, f"{e} at epoch {epoch + 1}, batch {b + 1}") from e
            losses = cross_entropy(z, lab)
            if not np.all(np.isfinite(losses)):
                raise TrainingDivergedError(epoch + 1, b + 1)
            gp = backward_ce(net, trace, lab, reduction="mean")
            sgd_step(net, gp.grad_theta, ts.eta2)
            if not all(np.all(np.isfinite(p)) for p in net.parameters()):
                raise TrainingDivergedError(epoch + 1, b + 1, "non-finite parameters after the update "
                                            f"at epoch {epoch + 1}, batch {b + 1}")
            acc += float(losses.sum()) / _rows_per_instance(ts)
            count += len(idx)
        hist.surrogate_loss.append(acc / count)
        hist.clean_loss.append(_mean_loss(net, ds.inputs, ds.labels))
        hist.wall_time.append(time.perf_counter() - t0)
        if log:
            log(f"epoch {epoch + 1}/{ts.epochs}: train objective {hist.surrogate_loss[-1]:.4f}, "
                f"clean loss {hist.clean_loss[-1]:.4f}")
    return net, hist


def evaluate(net, ds, attack=None, noise_at_test=None, threads=1, batch=256):
    """Clean and PGD-robust accuracy.

    A point counts as robust only if it is classified correctly at the clean
    input and at the attacked input, so ``robust_acc <= clean_acc`` always.
    With ``noise_at_test`` set, predictions are the majority vote over that
    spec's draws; the attack itself targets the base network.
    """
    X, y = ds.inputs, ds.labels

    def classify(pts, lo, tag):
        ns = noise_at_test
        if ns is None or ns.sigma == 0:
            return predict(net, pts)
        return np.array([int(np.argmax(smoothed_predict(net, x, ns.sigma, ns.draws, ns.stream(tag, lo + j))))
                         for j, x in enumerate(pts)], dtype=np.int64)

    def work(lo, hi):
        ok = classify(X[lo:hi], lo, "eval-clean") == y[lo:hi]
        if attack is None:
            return ok, ok
        adv = pgd_attack(net, X[lo:hi], y[lo:hi], attack)
        return ok, ok & (classify(adv, lo, "eval-adv") == y[lo:hi])

    parts = chunked_map(work, ds.n, batch, threads)
    clean = np.concatenate([p[0] for p in parts])
    robust = np.concatenate([p[1] for p in parts])
    out = {"clean_acc": float(clean.mean()), "robust_acc": float(robust.mean()) if attack else None}
    if attack is not None:
        assert out["robust_acc"] <= out["clean_acc"]
    return out
