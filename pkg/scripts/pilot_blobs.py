"""Pilot for the blobs example configs: natural vs nal accuracy and PGD-20 robustness over 3 seeds.

Usage: python3 scripts/pilot_blobs.py --sep 0.5 --arch 2-32-32-2 --epochs 50 --eta2 0.2

Output with the defaults (the setting shipped in configs/blobs-*.cfg):
  seed 0: natural clean 0.975 robust 0.445 | nal clean 0.995 robust 0.475
  seed 1: natural clean 0.975 robust 0.410 | nal clean 0.990 robust 0.445
  seed 2: natural clean 0.995 robust 0.445 | nal clean 0.985 robust 0.455
"""

import argparse

from nalcert.adversary import AttackSpec
from nalcert.data import make_blobs
from nalcert.nn import init_network, parse_arch
from nalcert.smoothing import NoiseSpec
from nalcert.tensor import RngStream
from nalcert.trainers import TrainSpec, evaluate, train

ap = argparse.ArgumentParser()
ap.add_argument("--sep", type=float, default=0.5)
ap.add_argument("--arch", default="2-32-32-2")
ap.add_argument("--epochs", type=int, default=50)
ap.add_argument("--eta2", type=float, default=0.2)
ap.add_argument("--sigma", type=float, default=0.25)
ap.add_argument("--eps", type=float, default=0.25)
ap.add_argument("--seeds", type=int, default=3)
args = ap.parse_args()

for seed in range(args.seeds):
    tr = make_blobs(200, 2, 2, args.sep, RngStream(seed).child("tr"))
    te = make_blobs(200, 2, 2, args.sep, RngStream(seed).child("te"))
    net0 = init_network(parse_arch(args.arch), RngStream(seed).child("m"))
    out = []
    for ts in (TrainSpec("natural", epochs=args.epochs, eta2=args.eta2, batch_size=32, seed=seed),
               TrainSpec("nal", epochs=args.epochs, eta2=args.eta2, batch_size=32, gamma=1.5, K=4,
                         noise=NoiseSpec(args.sigma, 4, seed), seed=seed)):
        net, h = train(net0, tr, ts)
        r = evaluate(net, te, AttackSpec(args.eps, 20))
        out.append(f"{ts.method}: clean {r['clean_acc']:.3f} robust {r['robust_acc']:.3f} "
                   f"objective {h.surrogate_loss[0]:.3f} -> {h.surrogate_loss[-1]:.3f}")
    print(f"seed {seed}: " + " | ".join(out))
