import math

import numpy as np
import pytest

from nalcert.adversary import SurrogateSpec
from nalcert.bounds import (BoundReport, bound_report, certificate_curve, epsilon_equivalence, lower_envelope,
                            population_stats, rho_and_worst_case, surrogate_population, theorem1_check)
from nalcert.data import blob_centroids, make_blobs
from nalcert.errors import MatchingError, ParameterError
from nalcert.nn import cross_entropy, forward, init_network, parse_arch
from nalcert.oracles import ToyLoss, grid_maximize, quadrature_smoothed
from nalcert.smoothing import NoiseSpec
from nalcert.tensor import RngStream
from nalcert.trainers import TrainSpec, train
from nalcert.verify import theorem1_setup


@pytest.fixture(scope="module")
def model_and_data():
    tr = make_blobs(200, 2, 2, 0.5, RngStream(0).child("tr"))
    te = make_blobs(100, 2, 2, 0.5, RngStream(0).child("te"))
    net, _ = train(init_network(parse_arch("2-16-2", "elu"), RngStream(0)), tr,
                   TrainSpec("natural", epochs=15, eta2=0.5, batch_size=32))
    return net, te


def _bump():
    return ToyLoss("bounded-bump", center=blob_centroids(2, 2, 0.5)[::-1], scale=0.4)


def test_no_ascent_no_noise_gives_clean_loss(model_and_data):
    net, te = model_and_data
    clean = float(cross_entropy(forward(net, te.inputs)[0], te.labels).mean())
    ss, ns = SurrogateSpec(gamma=1.0, K=0), NoiseSpec(0.0, 4)
    mean_phi, _ = surrogate_population(net, te, ss, ns)
    assert mean_phi == pytest.approx(clean, rel=1e-12)
    rho, wcl = rho_and_worst_case(net, te, ss, ns)
    assert rho == 0.0 and wcl == pytest.approx(clean, rel=1e-12)


def test_no_ascent_noise_floor(model_and_data):
    net, te = model_and_data
    sigma = 0.3
    st = population_stats(net, te, SurrogateSpec(gamma=1.0, K=0), NoiseSpec(sigma, 16, 2))
    se = st.rho.std(ddof=1) / math.sqrt(st.n)
    assert abs(st.rho.mean() - 2 * sigma**2) <= 3 * se


def test_rho_grows_with_noise(model_and_data):
    net, te = model_and_data
    ss = SurrogateSpec(gamma=1.5, K=4)
    lo = rho_and_worst_case(net, te, ss, NoiseSpec(0.05, 4, 0))[0]
    hi = rho_and_worst_case(net, te, ss, NoiseSpec(0.2, 4, 0))[0]
    assert hi > lo


def test_population_mean_vs_grid():
    ds = make_blobs(40, 2, 2, 0.5, RngStream(5))
    toy = _bump()
    gamma = 2 / 0.4**2 + 1
    mean_phi, _ = surrogate_population(toy, ds, SurrogateSpec(gamma=gamma, K=200, eta1=0.5 / gamma), NoiseSpec(0.0))
    ref = np.mean([grid_maximize(lambda X, x0=x0, y=y: toy.value(X, np.full(len(X), y))
                                 - gamma * np.sum((X - x0) ** 2, axis=1), x0, 0.5, 200)[1]
                   for x0, y in zip(ds.inputs, ds.labels)])
    assert abs(mean_phi - ref) <= 0.05 * abs(ref)


def test_surrogate_shrinks_as_penalty_grows(model_and_data):
    net, te = model_and_data
    vals = [surrogate_population(net, te, SurrogateSpec(gamma=g, K=50, eta1=0.1 / g), NoiseSpec(0.0))[0]
            for g in (0.5, 1.0, 2.0, 4.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_report_geometry(model_and_data):
    net, te = model_and_data
    reps = certificate_curve(net, te, (0.5, 2.0), ns=NoiseSpec(0.1, 4, 1), K=4)
    for rep in reps:
        slope = np.diff(rep.bound_values) / np.diff(rep.rho_grid)
        assert np.allclose(slope, rep.gamma, rtol=1e-9)
        assert rep.epsilon_equiv == math.sqrt(rep.rho_test) and rep.rho_test >= 0
        assert len(rep.rho_grid) == 20 and rep.rho_grid[-1] == pytest.approx(2 * rep.rho_test)
    a, b = reps
    cross = (a.mean_phi - b.mean_phi) / (b.gamma - a.gamma)
    assert a.bound(cross) == pytest.approx(b.bound(cross), rel=1e-12)
    grid = np.linspace(0, 3, 7)
    env = lower_envelope(reps, grid)
    assert all(v == min(a.bound(r), b.bound(r)) for r, v in env)


def test_flat_bound_without_penalty(model_and_data):
    net, te = model_and_data
    # gamma = 0 with exact (noise-free) evaluation: the bound is the mean loss at the ascent point
    (rep,) = certificate_curve(net, te, (0.0,), ns=NoiseSpec(0.0), K=5, eta1=0.05)
    assert len(set(rep.bound_values)) == 1
    assert rep.bound(rep.rho_test) == pytest.approx(rep.worst_case_loss, rel=1e-12)
    assert abs(rep.gap) <= 1e-12


def test_report_holds_on_trained_model(model_and_data):
    net, te = model_and_data
    for rep in certificate_curve(net, te, (0.25, 1.5, 3.0), ns=NoiseSpec(0.25, 4, 0), K=4):
        assert rep.holds(3.0)


def test_holds_uses_slack():
    st = type("S", (), {})()
    st.phi, st.rho, st.loss = np.array([1.0, 1.2]), np.array([0.1, 0.1]), np.array([1.3, 1.2])
    rep = bound_report(1.0, st)
    assert isinstance(rep, BoundReport)
    assert rep.gap == pytest.approx(1.0 * 0.1 + 1.1 - 1.25)
    assert rep.holds(3.0)


def test_exact_certificate_for_feasible_points():
    # with quadrature and a grid sup, gamma * E c(x + z, x0) + phi(x0) >= E loss(x + z) for every x
    toy = ToyLoss("bounded-bump", center=[0.2, -0.1], scale=0.5)
    sigma, gamma = 0.5, 2 / 0.5**2 + 1
    gen = np.random.default_rng(0)
    for _ in range(10):
        x0 = gen.uniform(-0.5, 0.5, 2)

        def pen(X, x0=x0):
            return quadrature_smoothed(toy.value, X, sigma, 20) - gamma * (np.sum((X - x0) ** 2, axis=1) + 2 * sigma**2)

        _, phi = grid_maximize(pen, x0, 0.8, 150)
        x = x0 + gen.uniform(-0.5, 0.5, 2)
        loss = quadrature_smoothed(toy.value, x, sigma, 20)
        rho = float(np.sum((x - x0) ** 2)) + 2 * sigma**2
        assert loss <= gamma * rho + phi + 1e-12


def test_epsilon_equivalence(model_and_data):
    net, te = model_and_data
    assert epsilon_equivalence(net, te, 1.5, NoiseSpec(0.0), K=0) == 0.0
    eps = epsilon_equivalence(net, te, 1.5, NoiseSpec(0.1, 4, 0), K=15)
    assert eps >= math.sqrt(2 * 0.1**2) * 0.9
    with pytest.raises(ParameterError):
        epsilon_equivalence(net, te, 0.0, NoiseSpec(0.0))


def test_zero_budget_is_jensen_on_concave_loss():
    ds = make_blobs(60, 2, 2, 0.5, RngStream(1))
    quad = ToyLoss("concave-quadratic", center=[0.5, 0.5], scale=1.0)
    res = theorem1_check(quad, ds, 0.0, NoiseSpec(0.3, 16, 0))
    assert res.flag and res.noisy_loss < res.clean_loss


@pytest.mark.parametrize("seed", [0, 1])
def test_equal_budget_check_passes(seed):
    ds, toy, ns = theorem1_setup(seed)
    res = theorem1_check(toy, ds.take(range(100)), 0.05, ns, K=60, eta1=0.03, gamma_range=(1e-3, 1e2))
    assert res.flag
    assert abs(res.noisy_cost - 0.05) <= 1e-3 * 0.05 * 1.01
    assert res.clean_cost <= 0.05 * (1 + 1e-3)


@pytest.mark.parametrize("seed", [0, 1])
def test_equal_budget_check_with_unit_noise(seed):
    ds = make_blobs(100, 2, 2, 0.4, RngStream(seed).child("t1-blobs"))
    toy = ToyLoss("bounded-bump", center=blob_centroids(2, 2, 0.4)[::-1], scale=1.0)
    res = theorem1_check(toy, ds, 2.1, NoiseSpec(1.0, 256, seed), K=60, eta1=0.5, gamma_range=(1e-3, 1e2))
    assert res.flag


def test_budget_below_noise_floor():
    ds, toy, _ = theorem1_setup(0)
    with pytest.raises(MatchingError):
        theorem1_check(toy, ds, 0.01, NoiseSpec(0.1, 4, 0))
    with pytest.raises(ParameterError):
        theorem1_check(toy, ds, -1.0, NoiseSpec(0.1, 4, 0))


def test_report_dict_round_trip(model_and_data):
    net, te = model_and_data
    (rep,) = certificate_curve(net, te, (1.5,), ns=NoiseSpec(0.1, 4, 0), K=2)
    again = BoundReport.from_dict(rep.as_dict())
    assert again == rep and again.holds() == rep.holds()
