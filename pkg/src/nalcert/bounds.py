"""The distributional certificate gamma * rho + E[phi_gamma] and its empirical checks.

For each test point the ascent of :mod:`nalcert.adversary` yields ``x*`` and a
penalized-objective estimate ``phi``. The worst-case point is measured with a
*separate* set of r draws around ``x*`` (stream ``"eval"``), so comparing the
bound against the measured loss is a genuine Monte-Carlo check rather than
an identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .adversary import SurrogateSpec, inner_maximize_batch
from .errors import MatchingError, ParameterError
from .nn import as_loss_model
from .parallel import chunked_map
from .smoothing import NoiseSpec

GAMMAS_DEFAULT = (0.25, 1.5, 3.0)


@dataclass
class PopulationStats:
    phi: np.ndarray  # penalized objective at x*, per instance
    rho: np.ndarray  # E_z c(x* + z, x0), independent draws
    loss: np.ndarray  # E_z loss(x* + z), same independent draws
    shift: np.ndarray  # ||x* - x0||^2
    x_adv: np.ndarray

    @property
    def n(self):
        return len(self.phi)


def population_stats(model, ds, ss, ns, threads=1, chunk=64):
    lm = as_loss_model(model)
    X, y = ds.inputs, ds.labels
    r, d = ns.draws, ds.d

    def work(lo, hi):
        idx = np.arange(lo, hi)
        res = inner_maximize_batch(lm, X[lo:hi], y[lo:hi], ss, ns, idx)
        if ns.sigma == 0:
            z = np.zeros((hi - lo, r, d))
        else:
            z = ns.sigma * np.stack([ns.stream("eval", i).generator().standard_normal((r, d)) for i in idx])
        pts = res.x_adv[:, None, :] + z
        loss = lm.losses(pts.reshape(-1, d), np.repeat(y[lo:hi], r)).reshape(hi - lo, r).mean(axis=1)
        rho = np.sum(np.square(pts - X[lo:hi, None, :]), axis=2).mean(axis=1)
        shift = np.sum(np.square(res.x_adv - X[lo:hi]), axis=1)
        return res.phi, rho, loss, shift, res.x_adv

    parts = chunked_map(work, ds.n, chunk, threads)
    return PopulationStats(*(np.concatenate([p[k] for p in parts]) for k in range(5)))


def _se(v):
    return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def surrogate_population(model, ds, ss, ns, threads=1):
    """Mean over the dataset of the per-instance surrogate estimate, with its standard error."""
    st = population_stats(model, ds, ss, ns, threads)
    return float(st.phi.mean()), _se(st.phi)


def rho_and_worst_case(model, ds, ss, ns, threads=1):
    """``(rho_test, worst_case_loss)`` at the ascent's adversarial points."""
    st = population_stats(model, ds, ss, ns, threads)
    return float(st.rho.mean()), float(st.loss.mean())


@dataclass
class BoundReport:
    gamma: float
    mean_phi: float
    phi_se: float
    rho_grid: list
    bound_values: list
    rho_test: float
    worst_case_loss: float
    epsilon_equiv: float
    combined_se: float  # standard error of worst_case_loss - bound(rho_test)
    extra: dict = field(default_factory=dict)

    def bound(self, rho):
        return self.gamma * rho + self.mean_phi

    @property
    def gap(self):
        """bound(rho_test) - worst_case_loss."""
        return self.bound(self.rho_test) - self.worst_case_loss

    def holds(self, slack_se=3.0):
        return self.worst_case_loss <= self.bound(self.rho_test) + slack_se * self.combined_se

    def as_dict(self):
        return {
            "gamma": self.gamma, "mean_phi": self.mean_phi, "phi_se": self.phi_se,
            "rho_grid": list(self.rho_grid), "bound_values": list(self.bound_values),
            "rho_test": self.rho_test, "worst_case_loss": self.worst_case_loss,
            "epsilon_equiv": self.epsilon_equiv, "combined_se": self.combined_se,
            "gap": self.gap, "holds_3se": self.holds(), **self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        """Inverse of :meth:`as_dict` (derived fields are recomputed)."""
        names = [f.name for f in fields(cls) if f.name != "extra"]
        extra = {k: v for k, v in d.items() if k not in names and k not in ("gap", "holds_3se")}
        return cls(**{k: d[k] for k in names}, extra=extra)


def bound_report(gamma, st, rho_grid=None, points=20):
    mean_phi = float(st.phi.mean())
    rho_test = float(st.rho.mean())
    if rho_grid is None:
        rho_grid = np.linspace(0.0, 2.0 * rho_test, points)
    rho_grid = [float(v) for v in rho_grid]
    diff = st.loss - gamma * st.rho - st.phi
    return BoundReport(
        gamma=float(gamma), mean_phi=mean_phi, phi_se=_se(st.phi), rho_grid=rho_grid,
        bound_values=[gamma * v + mean_phi for v in rho_grid], rho_test=rho_test,
        worst_case_loss=float(st.loss.mean()), epsilon_equiv=math.sqrt(rho_test), combined_se=_se(diff),
    )


def certificate_curve(model, ds, gammas, rho_grid=None, ns=None, K=4, eta1=None, cost_mode="noisy",
                      threads=1, points=20):
    """One :class:`BoundReport` per gamma; ``eta1=None`` means 0.5/gamma for each gamma."""
    ns = ns or NoiseSpec(0.0, 1, 0)
    reports = []
    for g in gammas:
        ss = SurrogateSpec(gamma=g, K=K, eta1=eta1, cost_mode=cost_mode)
        reports.append(bound_report(g, population_stats(model, ds, ss, ns, threads), rho_grid, points))
    return reports


def lower_envelope(reports, rho_grid):
    """min over gamma of gamma * rho + mean_phi at each rho (the tightest reported bound)."""
    return [(float(r), min(rep.bound(r) for rep in reports)) for r in rho_grid]


def epsilon_equivalence(model, ds, gamma, ns, K=15, eta1=None, threads=1):
    """sqrt of the mean noisy transport cost of K-step ascent examples."""
    if not gamma > 0:
        raise ParameterError("gamma must be > 0")
    st = population_stats(model, ds, SurrogateSpec(gamma=gamma, K=K, eta1=eta1), ns, threads)
    return math.sqrt(float(st.rho.mean()))


# ---- necessary-condition check for the noise-vs-no-noise ordering ---------------


@dataclass
class EqualBudgetResult:
    flag: bool
    noisy_loss: float
    noisy_se: float
    clean_loss: float
    noisy_cost: float
    clean_cost: float
    gamma_noisy: float | None
    gamma_clean: float | None

    def as_dict(self):
        return dict(self.__dict__)


def _match(cost_of, budget, lo, hi, iters, rtol, allow_under=False):
    """Bisect log-gamma so that cost_of(gamma) ~ budget (cost falls as gamma grows).

    With ``allow_under`` an attack that cannot spend the whole budget even at
    the smallest gamma is accepted as is: its cost is below the budget, so it
    is still feasible.
    """
    c_lo, st_lo = cost_of(lo)
    if allow_under and c_lo < budget:
        return lo, c_lo, st_lo
    c_hi = cost_of(hi)[0]
    if not c_hi <= budget <= c_lo:
        raise MatchingError(f"cannot bracket transport cost {budget:.6g}: "
                            f"cost({lo:g}) = {c_lo:.6g}, cost({hi:g}) = {c_hi:.6g}")
    a, b = math.log(lo), math.log(hi)
    best = None
    for _ in range(iters):
        m = 0.5 * (a + b)
        cost, st = cost_of(math.exp(m))
        if best is None or abs(cost - budget) < abs(best[1] - budget):
            best = (math.exp(m), cost, st)
        if abs(cost - budget) <= rtol * budget:
            break
        if cost > budget:
            a = m
        else:
            b = m
    return best


def theorem1_check(model, ds, attack_budget, ns, K=20, eta1=None, gamma_range=(1e-2, 1e3), iters=40,
                   rtol=1e-3, cost_mode="noisy", threads=1):
    """Noisy worst-case loss <= noiseless worst-case loss + 3 se at equal transport cost.

    Both attacks are Lagrangian ascents; gamma is tuned on each side by
    bisection until the measured mean transport cost equals
    ``attack_budget`` (noisy side: E_z ||x + z - x0||^2, clean side
    ||x - x0||^2). The ascent step is min(eta1, 0.5/gamma) (0.5/gamma when
    ``eta1`` is None). A noiseless attack whose loss saturates before it
    spends the budget is used at the smallest gamma: its distribution is
    still feasible, so it still lower-bounds the noiseless worst case.
    ``cost_mode`` picks the ascent's cost gradient, while
    the matched costs are always measured as above. With a zero budget neither side moves and the check
    compares E_z loss(x0 + z) against loss(x0).
    """
    lm = as_loss_model(model)
    clean_ns = NoiseSpec(0.0, 1, ns.seed)
    if attack_budget < 0:
        raise ParameterError("attack budget must be >= 0")
    if attack_budget == 0:
        return theorem1_zero_budget(lm, ds, ns, threads)
    floor = ds.d * ns.sigma**2
    if floor > attack_budget:
        raise MatchingError(f"budget {attack_budget:.6g} is below the noise floor d*sigma^2 = {floor:.6g}")

    def side(noise):
        def cost_of(g):
            step = 0.5 / g if eta1 is None else min(eta1, 0.5 / g)
            st = population_stats(lm, ds, SurrogateSpec(gamma=g, K=K, eta1=step, cost_mode=cost_mode), noise, threads)
            cost = float(st.rho.mean()) if noise.sigma > 0 else float(st.shift.mean())
            return cost, st
        return cost_of

    g_n, c_n, st_n = _match(side(ns), attack_budget, *gamma_range, iters, rtol)
    g_c, c_c, st_c = _match(side(clean_ns), attack_budget, *gamma_range, iters, rtol, allow_under=True)
    nl, se, cl = float(st_n.loss.mean()), _se(st_n.loss), float(st_c.loss.mean())
    return EqualBudgetResult(nl <= cl + 3 * se, nl, se, cl, c_n, c_c, g_n, g_c)


def theorem1_zero_budget(model, ds, ns, threads=1):
    """The degenerate zero-budget comparison: E_z loss(x0 + z) vs loss(x0)."""
    lm = as_loss_model(model)
    noisy = population_stats(lm, ds, SurrogateSpec(gamma=1.0, K=0), ns, threads)
    clean = population_stats(lm, ds, SurrogateSpec(gamma=1.0, K=0), NoiseSpec(0.0, 1, ns.seed), threads)
    nl, se, cl = float(noisy.loss.mean()), _se(noisy.loss), float(clean.loss.mean())
    return EqualBudgetResult(nl <= cl + 3 * se, nl, se, cl, float(noisy.rho.mean()), 0.0, None, None)
