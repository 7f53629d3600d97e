"""Randomized-smoothing certification.

Selection and estimation draws for test point ``i`` come from
``RngStream(seed).child("certify", i)`` (children ``"select"`` and
``"estimate"``), so per-point counts never depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from .errors import ParameterError
from .nn import as_loss_model
from .parallel import chunked_map
from .smoothing import NoiseSpec, smoothed_loss, smoothed_predict
from .tensor import RngStream

MODES = ("one-sided", "two-class")

# AS241 (PPND16) coefficients
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3, 1.3731693765509461125e4,
      4.5921953931549871457e4, 6.7265770927008700853e4, 3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4, 5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0, 3.64784832476320460504e0,
      1.27045825245236838258e0, 2.41780725177450611770e-1, 2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4, 1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0, 2.96560571828504891230e-1,
      2.65321895265761230930e-2, 1.24266094738807843860e-3, 2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7, 2.04426310338993978564e-15)


def _poly(coef, x):
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _ppnd16_lower(p):
    # p <= 0.5
    q = p - 0.5
    if abs(q) <= 0.425:
        t = 0.180625 - q * q
        return q * _poly(_A, t) / _poly(_B, t)
    t = math.sqrt(-math.log(p))
    if t <= 5.0:
        t -= 1.6
        return -_poly(_C, t) / _poly(_D, t)
    t -= 5.0
    return -_poly(_E, t) / _poly(_F, t)


def inv_phi(p):
    """Standard normal quantile: AS241 plus one Newton step on the erfc-based CDF.

    Evaluated in the lower tail and reflected for p > 1/2 (1 - p is exact
    there), which keeps the function exactly antisymmetric about 1/2.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ParameterError(f"inv_phi needs p in (0, 1), got {p}")
    if p > 0.5:
        return -inv_phi(1.0 - p)
    x = _ppnd16_lower(p)
    dens = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if dens > 0:
        x -= (norm_cdf(x) - p) / dens
    return x


def _check_counts(k, n, alpha):
    if int(k) != k or int(n) != n or n < 1 or not 0 <= k <= n:
        raise ParameterError(f"need integers 0 <= k <= n, n >= 1 (k={k}, n={n})")
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")


def clopper_pearson_lower(k, n, alpha):
    """One-sided exact lower bound: the p with P(Bin(n, p) >= k) = alpha."""
    _check_counts(k, n, alpha)
    if k == 0:
        return 0.0
    if k == n:
        return alpha ** (1.0 / n)
    return brentq(lambda p: betainc(k, n - k + 1, p) - alpha, 0.0, 1.0, xtol=1e-15, rtol=1e-15, maxiter=500)


def clopper_pearson_upper(k, n, alpha):
    """One-sided exact upper bound: the p with P(Bin(n, p) <= k) = alpha."""
    _check_counts(k, n, alpha)
    if k == n:
        return 1.0
    if k == 0:
        return 1.0 - alpha ** (1.0 / n)
    return brentq(lambda p: (1.0 - alpha) - betainc(k + 1, n - k, p), 0.0, 1.0, xtol=1e-15, rtol=1e-15,
                  maxiter=500)


def certified_radius(pA_lower, pB_upper, sigma):
    """sigma/2 * (inv_phi(pA_lower) - inv_phi(pB_upper)), floored at 0."""
    if not (0.0 <= pA_lower <= 1.0 and 0.0 <= pB_upper <= 1.0):
        raise ParameterError("probabilities must lie in [0, 1]")
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if pA_lower <= pB_upper:
        return 0.0
    if not (0.0 < pA_lower < 1.0 and 0.0 < pB_upper < 1.0):
        raise ParameterError("radius needs probabilities strictly inside (0, 1)")
    return max(0.0, 0.5 * sigma * (inv_phi(pA_lower) - inv_phi(pB_upper)))


@dataclass(frozen=True)
class CertifySpec:
    sigma: float
    n0: int = 100
    n: int = 1000
    alpha: float = 0.001
    mode: str = "one-sided"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("certification needs sigma > 0")
        if self.n0 < 1 or self.n < 1:
            raise ParameterError("n0 and n must be >= 1")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class CertResult:
    c_hat: int
    pA_lower: float
    pB_upper: float
    radius: float
    abstain: bool


def certify(net, x, cs, rng):
    """Certify one input. ``rng`` is an RngStream (or an int seed)."""
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    sel = smoothed_predict(net, x, cs.sigma, cs.n0, rng.child("select"))
    c_hat = int(np.argmax(sel))
    counts = smoothed_predict(net, x, cs.sigma, cs.n, rng.child("estimate"))
    if cs.mode == "one-sided":
        pA = clopper_pearson_lower(int(counts[c_hat]), cs.n, cs.alpha)
        pB = 1.0 - pA
        abstain = pA <= 0.5
    else:
        others = counts.copy()
        others[c_hat] = -1
        pA = clopper_pearson_lower(int(counts[c_hat]), cs.n, cs.alpha / 2)
        pB = clopper_pearson_upper(int(others.max()), cs.n, cs.alpha / 2)
        abstain = pA <= pB
    radius = 0.0 if abstain else certified_radius(pA, pB, cs.sigma)
    return CertResult(c_hat, pA, pB, radius, bool(abstain))


def certify_dataset(net, ds, cs, seed=0, threads=1, chunk=16):
    root = RngStream(int(seed))

    def work(lo, hi):
        return [certify(net, ds.inputs[i], cs, root.child("certify", i)) for i in range(lo, hi)]

    return [res for part in chunked_map(work, ds.n, chunk, threads) for res in part]


def curve_from_results(results, labels, radii):
    """Fraction of points that are certified, correct and have radius >= rho, per rho."""
    ok = np.array([(not r.abstain) and r.c_hat == y for r, y in zip(results, labels)], dtype=bool)
    rad = np.array([r.radius for r in results])
    out = []
    for rho in radii:
        out.append((float(rho), float(np.mean(ok & (rad >= rho))) if len(results) else 0.0))
    return out


def certified_accuracy_curve(net, ds, cs, radii, seed=0, threads=1):
    return curve_from_results(certify_dataset(net, ds, cs, seed, threads), ds.labels, radii)


def proposition1_threshold(dist, sigma, pB_upper):
    """-log Phi(inv_phi(pB_upper) + dist / sigma)."""
    if not 0.0 < pB_upper < 1.0:
        raise ParameterError("pB_upper must lie in (0, 1)")
    if not (math.isfinite(dist) and sigma > 0):
        raise ParameterError("need a finite distance and sigma > 0")
    return -math.log(norm_cdf(inv_phi(pB_upper) + dist / sigma))


def proposition1_check(model, x, x0, sigma, pB_upper, label, r=1000, seed=0):
    """True when the smoothed loss at ``x`` clears the robustness threshold.

    The Monte-Carlo estimate is inflated by three standard errors before the
    comparison, so a pass is conservative.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    thr = proposition1_threshold(float(np.linalg.norm(x - x0)), sigma, pB_upper)
    est, se = smoothed_loss(as_loss_model(model), x, label, NoiseSpec(sigma, r, seed), instance=0)
    return est + 3.0 * se <= thr
