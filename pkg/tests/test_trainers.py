import numpy as np
import pytest

from nalcert.adversary import AttackSpec
from nalcert.data import make_blobs
from nalcert.errors import ParameterError, TrainingDivergedError
from nalcert.nn import LayerSpec, Network, init_network, parse_arch
from nalcert.smoothing import NoiseSpec
from nalcert.tensor import RngStream
from nalcert.trainers import METHODS, TrainSpec, evaluate, train


def _spec(method, **kw):
    base = dict(epochs=2, eta2=0.3, batch_size=32, gamma=1.5, K=3, noise=NoiseSpec(0.2, 3, 0), attack_eps=0.2,
                k_pgd=5, seed=0)
    base.update(kw)
    return TrainSpec(method, **base)


def test_spec_validation():
    with pytest.raises(ParameterError):
        TrainSpec("sgd")
    with pytest.raises(ParameterError):
        TrainSpec("nal", gamma=None)
    with pytest.raises(ParameterError):
        TrainSpec("wrm", gamma=0.0)
    with pytest.raises(ParameterError):
        TrainSpec("pgd_at")
    with pytest.raises(ParameterError):
        TrainSpec("natural", eta2=0.0)
    with pytest.raises(ParameterError):
        TrainSpec("natural", epochs=0)


def test_no_ascent_no_noise_equals_natural(blobs, blob_net):
    a, ha = train(blob_net, blobs, _spec("nal", K=0, noise=NoiseSpec(0.0, 4, 0)))
    b, hb = train(blob_net, blobs, _spec("natural"))
    assert a.equals(b)
    assert ha.surrogate_loss == hb.surrogate_loss


def test_noise_free_nal_equals_wrm(blobs, blob_net):
    a, ha = train(blob_net, blobs, _spec("nal", noise=NoiseSpec(0.0, 1, 0)))
    b, hb = train(blob_net, blobs, _spec("wrm"))
    assert a.equals(b)
    assert ha.surrogate_loss == hb.surrogate_loss


@pytest.mark.parametrize("method", METHODS)
def test_reproducible_and_thread_invariant(blobs, blob_net, method):
    ts = _spec(method)
    a, ha = train(blob_net, blobs, ts)
    b, _ = train(blob_net, blobs, ts)
    c, hc = train(blob_net, blobs, ts, threads=4)
    assert a.equals(b) and a.equals(c)
    assert ha.surrogate_loss == hc.surrogate_loss
    assert len(ha.surrogate_loss) == len(ha.clean_loss) == len(ha.wall_time) == ts.epochs


@pytest.mark.parametrize("method", METHODS)
def test_objective_decreases_on_blobs(method):
    tr = make_blobs(200, 2, 2, 0.5, RngStream(0).child("tr"))
    net0 = init_network(parse_arch("2-32-32-2"), RngStream(0).child("m"))
    ts = _spec(method, epochs=15, eta2=0.2, K=4, noise=NoiseSpec(0.25, 4, 0), attack_eps=0.25, k_pgd=10)
    _, hist = train(net0, tr, ts)
    assert hist.surrogate_loss[-1] < hist.surrogate_loss[0]


def test_divergence_is_typed(blobs, blob_net):
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as ei:
        train(blob_net, blobs, _spec("natural", eta2=1e300))
    assert ei.value.epoch == 1 and ei.value.batch >= 1


def test_evaluate_separable_net():
    ds = make_blobs(100, 1, 2, 0.6, RngStream(0), spread=0.05)
    net = Network((LayerSpec(1, 2, "none"),), [np.array([[-50.0, 50.0]])], [np.array([25.0, -25.0])])
    res = evaluate(net, ds)
    assert res["clean_acc"] == 1.0 and res["robust_acc"] is None
    res = evaluate(net, ds, AttackSpec(0.1, 10), noise_at_test=NoiseSpec(0.01, 5, 1))
    assert res["robust_acc"] <= res["clean_acc"] == 1.0


@pytest.mark.parametrize("eps", [0.05, 0.3, 1.0])
def test_robust_never_exceeds_clean(blobs, blob_net, eps):
    res = evaluate(blob_net, blobs, AttackSpec(eps, 7))
    assert res["robust_acc"] <= res["clean_acc"]


@pytest.mark.parametrize("seed", range(3))
def test_blobs_natural_and_noisy_training(seed):
    # Pilot (scripts/pilot_blobs.py) fixed this setup: separation 0.5, 2-32-32-2, eta2 0.2, 50 epochs.
    tr = make_blobs(200, 2, 2, 0.5, RngStream(seed).child("tr"))
    te = make_blobs(200, 2, 2, 0.5, RngStream(seed).child("te"))
    net0 = init_network(parse_arch("2-32-32-2"), RngStream(seed).child("m"))
    attack = AttackSpec(0.25, 20)
    nat, _ = train(net0, tr, TrainSpec("natural", epochs=50, eta2=0.2, batch_size=32, seed=seed))
    nal, _ = train(net0, tr, TrainSpec("nal", epochs=50, eta2=0.2, batch_size=32, gamma=1.5, K=4,
                                       noise=NoiseSpec(0.25, 4, seed), seed=seed))
    r_nat, r_nal = evaluate(nat, te, attack), evaluate(nal, te, attack)
    assert r_nat["clean_acc"] >= 0.95
    assert r_nal["clean_acc"] >= 0.90
    assert r_nal["robust_acc"] > r_nat["robust_acc"]
