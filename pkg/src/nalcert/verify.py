"""Numerical checks shared by ``nalcert verify`` and the acceptance tests.

Every check returns a :class:`CheckResult`; none of them raises on a failed
comparison, so a report always covers the whole suite.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracles
from .adversary import AttackSpec, SurrogateSpec, inner_maximize_batch, pgd_attack, wrm_inner
from .bounds import theorem1_check
from .certifier import certified_radius, clopper_pearson_lower, clopper_pearson_upper, inv_phi
from .data import blob_centroids, make_blobs
from .nn import backward_ce, cross_entropy, forward, init_network, parse_arch
from .smoothing import NoiseSpec
from .tensor import RngStream
from .trainers import TrainSpec, train


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail, data = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0, data)


# ---- 1: gradients --------------------------------------------------------------


def _rel_err(a, b, floor=1e-6):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_gradients(nets=20, seed=0, tol=1e-4):
    """Analytic d(loss)/d(theta) and d(loss)/dx against central differences."""

    def run():
        root = RngStream(seed)
        worst = 0.0
        for i in range(nets):
            gen = root.child("gradnet", i).generator()
            dims = [int(gen.integers(2, 6))] + [int(v) for v in gen.integers(3, 7, size=int(gen.integers(1, 3)))]
            dims.append(int(gen.integers(2, 5)))
            act = ("relu", "elu")[i % 2]
            net = init_network(parse_arch("-".join(map(str, dims)), act), root.child("gradinit", i))
            X = gen.standard_normal((3, dims[0]))
            y = gen.integers(0, dims[-1], size=3)

            def total(n=net, x=X):
                return float(np.sum(cross_entropy(forward(n, x)[0], y)))

            _, trace = forward(net, X)
            gp = backward_ce(net, trace, y, reduction="sum")
            worst = max(worst, _rel_err(gp.grad_x, oracles.finite_diff_grad(lambda x: total(x=x), X)))
            for li, (gw, gb) in enumerate(gp.grad_theta):
                for arr, g in ((net.weights[li], gw), (net.biases[li], gb)):
                    def f(v, arr=arr):
                        old = arr.copy()
                        arr[...] = v
                        out = total()
                        arr[...] = old
                        return out
                    worst = max(worst, _rel_err(g, oracles.finite_diff_grad(f, arr.copy())))
        return worst <= tol, f"{nets} nets, max relative error {worst:.2e} (limit {tol:g})", {"max_rel_err": worst}

    return _timed("gradient fidelity", run)


# ---- 2: smoothness of the smoothed bounded loss ------------------------------------


def check_smoothness(sigmas=(0.5, 1.0), pairs=500, M=1.0, seed=0):
    """Gradient-Lipschitz ratio of the quadrature-smoothed bump never exceeds 2M/sigma^2."""

    def run():
        toy = oracles.ToyLoss("bounded-bump", center=np.zeros(1), scale=0.5, M=M)
        gen = RngStream(seed).child("smoothness").generator()
        violations, ratios = 0, {}
        for s in sigmas:
            x = gen.uniform(-3, 3, size=(pairs, 1))
            xp = gen.uniform(-3, 3, size=(pairs, 1))
            gx = oracles.quadrature_smoothed(lambda p: toy.grad(p)[:, 0], x, s, order=80)
            gxp = oracles.quadrature_smoothed(lambda p: toy.grad(p)[:, 0], xp, s, order=80)
            ratio = np.abs(gx - gxp) / np.abs(x[:, 0] - xp[:, 0])
            bound = 2 * M / s**2
            violations += int(np.sum(ratio > bound))
            ratios[s] = (float(ratio.max()), bound)
        detail = ", ".join(f"sigma={s}: max ratio {r:.4f} <= {b:g}" for s, (r, b) in ratios.items())
        return violations == 0, f"{violations} violations; {detail}", {"ratios": ratios}

    return _timed("smoothness of the smoothed loss", run)


# ---- 3: strong concavity ------------------------------------------------------------


def check_concavity(points=50, M=1.0, seed=0, tol=0.05):
    """Finite-difference Hessian of E_z[loss - gamma c] at gamma = 2M/sigma^2 + 1 is <= -1 + tol."""

    def run():
        gen = RngStream(seed).child("concavity").generator()
        worst = -math.inf
        for d in (1, 2):
            for s in (0.5, 1.0):
                gamma = 2 * M / s**2 + 1
                for kind, scale in (("bounded-bump", 0.5), ("bounded-bump", 1.0)):
                    toy = oracles.ToyLoss(kind, center=np.zeros(d), scale=scale, M=M)
                    for _ in range(points):
                        x0 = gen.uniform(-1, 1, size=d)
                        x = x0 + gen.uniform(-1, 1, size=d)

                        def f(v, x0=x0, toy=toy, s=s, gamma=gamma):
                            ell = oracles.quadrature_smoothed(toy.value, v, s, order=40)
                            return ell - gamma * (float(np.sum((v - x0) ** 2)) + v.size * s * s)

                        H = oracles.finite_diff_hessian(f, x, h=1e-3)
                        worst = max(worst, float(np.linalg.eigvalsh(H).max()))
        ok = worst <= -1 + tol
        return ok, f"max Hessian eigenvalue {worst:.4f} (limit {-1 + tol:g})", {"max_eig": worst}

    return _timed("strong concavity above the threshold", run)


# ---- 5: smoothing lowers the surrogate ---------------------------------------------------


def _toy_instances(n, d, seed, tag):
    gen = RngStream(seed).child(tag).generator()
    return gen.uniform(-1, 1, size=(n, d))


def check_surrogate_ordering(instances=50, sigma=0.5, M=1.0, seed=0):
    """Quadrature-smoothed surrogate <= noiseless (WRM) surrogate, per instance and on average."""

    def run():
        gamma = 2 * M / sigma**2 + 1
        toy = oracles.ToyLoss("bounded-bump", center=np.zeros(2), scale=0.5, M=M)
        X0 = _toy_instances(instances, 2, seed, "ordering")
        nal, wrm = [], []
        for i, x0 in enumerate(X0):
            def smoothed(pts, x0=x0):
                ell = oracles.quadrature_smoothed(toy.value, pts, sigma, order=20)
                return ell - gamma * (np.sum((pts - x0) ** 2, axis=1) + 2 * sigma**2)
            nal.append(oracles.grid_maximize(smoothed, x0, 0.5, resolution=100)[1])
            wrm.append(wrm_inner(toy, x0, 0, gamma, K=200, eta1=0.5 / gamma, instance=i).phi_estimate)
        nal, wrm = np.array(nal), np.array(wrm)
        viol = int(np.sum(nal > wrm + 1e-12))
        ok = viol == 0 and nal.mean() <= wrm.mean()
        return ok, (f"{viol} violations in {instances}; mean smoothed {nal.mean():.5f} <= "
                    f"mean noiseless {wrm.mean():.5f}"), {"nal": nal, "wrm": wrm}

    return _timed("smoothed surrogate below noiseless surrogate", run)


# ---- 6: noise does not raise the worst case at equal transport cost --------------------


def theorem1_setup(seed):
    """Blob data, per-class bump loss and noise spec used by the equal-budget check."""
    ds = make_blobs(200, 2, 2, 0.4, RngStream(seed).child("t1-blobs"))
    toy = oracles.ToyLoss("bounded-bump", center=blob_centroids(2, 2, 0.4)[::-1], scale=0.3, M=1.0)
    return ds, toy, NoiseSpec(0.1, 16, seed)


def check_noise_ordering(seeds=range(20), budget=0.05):
    def run():
        rows, fails = [], []
        for s in seeds:
            ds, toy, ns = theorem1_setup(s)
            try:
                res = theorem1_check(toy, ds, budget, ns, K=60, eta1=0.03, gamma_range=(1e-3, 1e2))
                ok = res.flag
                rows.append(res.as_dict())
            except Exception as e:  # a matching failure counts as a failed seed
                ok = False
                rows.append({"error": str(e)})
            if not ok:
                fails.append(s)
        n = len(list(seeds))
        return not fails, f"{n - len(fails)}/{n} seeds pass" + (f" (failed: {fails})" if fails else ""), \
            {"rows": rows}

    return _timed("noisy vs noiseless worst case at equal budget", run)


# ---- 7: inner maximizer vs grid search ------------------------------------------------


def check_inner_maximizer(instances=50, sigma=0.5, M=1.0, r=20000, K=40, seed=0, tol=0.05):
    def run():
        gamma = 2 * M / sigma**2 + 1
        toy = oracles.ToyLoss("bounded-bump", center=np.zeros(2), scale=0.5, M=M)
        X0 = _toy_instances(instances, 2, seed, "inner-oracle")
        ss = SurrogateSpec(gamma=gamma, K=K, eta1=0.5 / gamma)
        res = inner_maximize_batch(toy, X0, np.zeros(instances, dtype=np.int64), ss, NoiseSpec(sigma, r, seed))
        errs = []
        for i, x0 in enumerate(X0):
            def smoothed(pts, x0=x0):
                ell = oracles.quadrature_smoothed(toy.value, pts, sigma, order=20)
                return ell - gamma * (np.sum((pts - x0) ** 2, axis=1) + 2 * sigma**2)
            ref = oracles.grid_maximize(smoothed, x0, 0.5, resolution=100)[1]
            errs.append(abs(res.phi[i] - ref) / abs(ref))
        worst = float(max(errs))
        return worst <= tol, f"{instances} instances, max relative error {worst:.2e} (limit {tol:g})", \
            {"rel_err": errs}

    return _timed("inner maximizer vs grid oracle", run)


# ---- 8: certification numerics ----------------------------------------------------------


def check_cert_numerics(max_n=50, probs=1000, seed=0):
    def run():
        cp = 0.0
        for alpha in (0.001, 0.05):
            for n in range(1, max_n + 1):
                for k in range(0, n + 1):
                    cp = max(cp, abs(clopper_pearson_lower(k, n, alpha) - oracles.binomial_lower_brute(k, n, alpha)))
                    cp = max(cp, abs(clopper_pearson_upper(k, n, alpha) - oracles.binomial_upper_brute(k, n, alpha)))
        gen = RngStream(seed).child("inv-phi").generator()
        ps = np.concatenate([gen.uniform(0, 1, probs - 8), [1e-10, 1e-6, 1e-3, 0.5, 0.999, 1 - 1e-6, 0.025, 0.975]])
        iq = max(abs(inv_phi(p) - oracles.inv_phi_bisect(p)) for p in ps)
        rad = certified_radius(0.999, 0.001, 0.1)
        rad_err = abs(rad - 0.3090232)
        ok = cp <= 1e-9 and iq <= 1e-9 and rad_err <= 1e-6
        return ok, (f"Clopper-Pearson max error {cp:.1e}, inv_phi max error {iq:.1e}, "
                    f"radius {rad:.7f} (expected 0.3090232)"), {"cp": cp, "inv_phi": iq, "radius": rad}

    return _timed("certification numerics", run)


# ---- 9: degeneracy chain ----------------------------------------------------------------


def check_degeneracy(seed=0):
    def run():
        ds = make_blobs(96, 2, 3, 0.4, RngStream(seed).child("degen"))
        net0 = init_network(parse_arch("2-8-3", "elu"), RngStream(seed).child("degen-net"))
        common = dict(epochs=2, eta2=0.5, batch_size=32, seed=seed)
        nal_wrm, _ = train(net0, ds, TrainSpec("nal", gamma=1.5, K=3, noise=NoiseSpec(0.0, 1, seed), **common))
        wrm, _ = train(net0, ds, TrainSpec("wrm", gamma=1.5, K=3, **common))
        nal_nat, _ = train(net0, ds, TrainSpec("nal", gamma=1.5, K=0, noise=NoiseSpec(0.0, 4, seed), **common))
        nat, _ = train(net0, ds, TrainSpec("natural", **common))
        a = nal_wrm.equals(wrm)
        b = nal_nat.equals(nat)
        moved = not nat.equals(net0)
        X, y = ds.inputs, ds.labels
        c = all(np.array_equal(pgd_attack(net0, X, y, AttackSpec(eps, 20)), X) for eps in (1e-30, 1e-100, 1e-300))
        shrink = [float(np.max(np.linalg.norm(pgd_attack(net0, X, y, AttackSpec(eps, 20)) - X, axis=1)))
                  for eps in (1e-1, 1e-3, 1e-6)]
        # rounding of x0 + delta can overshoot by about one ulp of x0
        d = all(s <= e + 1e-15 for s, e in zip(shrink, (1e-1, 1e-3, 1e-6)))
        ok = a and b and c and d and moved
        return ok, (f"nal(sigma=0,r=1)==wrm: {a}; nal(K=0,sigma=0)==natural: {b}; "
                    f"PGD eps->0 returns x0: {c and d}"), {}

    return _timed("degeneracy chain (bitwise)", run)


# ---- desk-scale pipeline checks (4, 10, 11, 12) ----------------------------------------------


def check_bounds(bound_rows):
    """Certificate rows from :func:`nalcert.cli.cmd_bound` runs: (model, gamma, report)."""

    def run():
        bad = [(m, rep.gamma) for m, rep in bound_rows if not rep.holds(3.0)]
        lines = [f"{m} gamma={rep.gamma:g}: wcl {rep.worst_case_loss:.4f} vs bound {rep.bound(rep.rho_test):.4f} "
                 f"(+3se {3 * rep.combined_se:.4f})" for m, rep in bound_rows]
        return not bad, f"{len(bound_rows) - len(bad)}/{len(bound_rows)} (model, gamma) pairs hold" + \
            (f"; failing {bad}" if bad else ""), {"lines": lines}

    return _timed("certificate inequality", run)


def check_mnist_ordering(acc):
    """``acc``: {method: {"clean_acc", "robust_acc"}} from the desk-scale MNIST runs."""

    def run():
        nal, nat, noise = acc["nal"], acc["natural"], acc["noise"]
        c1 = nal["robust_acc"] > nat["robust_acc"] + 0.20
        c2 = nal["robust_acc"] >= noise["robust_acc"]
        c3 = nal["clean_acc"] >= 0.90
        detail = (f"robust nal {nal['robust_acc']:.3f} vs natural {nat['robust_acc']:.3f} + 0.20 [{c1}]; "
                  f"vs noise {noise['robust_acc']:.3f} [{c2}]; clean nal {nal['clean_acc']:.3f} >= 0.90 [{c3}]")
        return c1 and c2 and c3, detail, {"clauses": (c1, c2, c3)}

    return _timed("desk-scale MNIST ordering", run)


def check_certificate_csv(run_dirs, slack_se=3.0):
    """Every bound run emitted a schema-valid certificate CSV whose bound at rho_test covers the loss.

    The bound at rho_test is read back from the CSV itself (linear
    interpolation along the rho grid of each gamma); the Monte-Carlo slack uses
    the combined standard error recorded in ``bound.json``.
    """
    import csv
    import json

    from .schemas import check_csv

    def run():
        problems, below, raw_below, pairs = [], [], 0, 0
        for d in run_dirs:
            path = Path(d) / "certificate.csv"
            if not path.exists():
                problems.append(f"{path}: missing")
                continue
            problems.extend(check_csv(path))
            se = {rep["gamma"]: rep["combined_se"] for rep in json.loads((Path(d) / "bound.json").read_text())}
            by_gamma = {}
            for row in csv.DictReader(open(path)):
                by_gamma.setdefault(float(row["gamma"]), []).append(row)
            for g, rows in by_gamma.items():
                pairs += 1
                rho = [float(r["rho"]) for r in rows]
                b = [float(r["bound"]) for r in rows]
                rho_test, wcl = float(rows[0]["rho_test"]), float(rows[0]["worst_case_loss"])
                at = float(np.interp(rho_test, rho, b))
                raw_below += at < wcl
                if at + slack_se * se[g] < wcl:
                    below.append(f"{Path(d).name} gamma={g:g}")
        ok = not problems and not below
        detail = (f"{len(run_dirs)} certificate CSVs, {len(problems)} schema problems; bound at rho_test covers "
                  f"the loss within {slack_se:g} se for {pairs - len(below)}/{pairs} (model, gamma) pairs "
                  f"({pairs - raw_below}/{pairs} without slack)")
        return ok, detail + (f"; failing {below}" if below else ""), {"problems": problems, "below": below}

    return _timed("certificate CSV emitted, schema-valid and covering", run)


def check_determinism(configs, threads=(1, 4), workdir=None):
    """Run train then certify twice per thread count and compare all CSV bytes.

    ``configs``: list of ``(train_cfg, certify_cfg, overrides)``.
    """
    from .cli import run_command

    def run():
        base = Path(workdir or tempfile.mkdtemp(prefix="nalcert-det-"))
        mismatches, compared = [], 0
        for ci, (tcfg, ccfg, extra) in enumerate(configs):
            digests = {}
            for t in threads:
                for rep in range(2):
                    out = base / f"c{ci}-t{t}-r{rep}"
                    run_command("train", tcfg, [*extra, f"run.threads={t}"], out / "train")
                    run_command("certify", ccfg, [*extra, f"run.threads={t}", f"model.path={out / 'train' / 'model.nalm'}"],
                                out / "certify")
                    digests[(t, rep)] = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}
            ref_key = (threads[0], 0)
            ref = digests[ref_key]
            for key, dig in digests.items():
                compared += 1
                if dig != ref:
                    diff = sorted(k for k in set(ref) | set(dig) if ref.get(k) != dig.get(k))
                    mismatches.append((ci, key, diff))
        return not mismatches, f"{compared} runs over threads {list(threads)}, {len(mismatches)} mismatching" + \
            (f": {mismatches}" if mismatches else ""), {"workdir": str(base)}

    return _timed("byte-identical CSVs across runs and thread counts", run)


QUICK = (check_gradients, check_smoothness, check_concavity, check_surrogate_ordering, check_inner_maximizer,
         check_cert_numerics, check_degeneracy)
