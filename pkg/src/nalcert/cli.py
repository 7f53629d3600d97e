"""Command-line entry point: ``nalcert <command> [--config PATH] [--set key=value ...]``.

Each command validates its whole configuration, does its work and writes a
run directory holding CSV artifacts, optional PNG figures and a
``manifest.json``. Output directory precedence: ``--out``, then the
``run.out`` key, then ``$NALCERT_OUT/<run.name or command>`` (``./runs`` when
the variable is unset). Model paths starting with ``@`` are resolved under
that same output root, so shipped configs can chain runs.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import AttackSpec, transfer_eval
from .bounds import certificate_curve, lower_envelope
from .certifier import CertifySpec, certify_dataset, curve_from_results
from .config import load_config, schema_text
from .data import load_builtin, load_csv, load_idx, make_blobs, save_csv, save_idx, train_test_split
from .errors import ConfigError, DimensionError, NalcertError, ParameterError
from .nn import init_network, load_network, parse_arch, save_network
from .schemas import check_run_dir, write_csv
from .smoothing import NoiseSpec
from .tensor import PRNG_ID, RngStream
from .trainers import TrainSpec, evaluate, train

COMMANDS = ("gen-data", "train", "attack", "certify", "bound", "transfer", "verify", "schema-check")
TIE_BREAK = "argmax ties go to the lowest class index"


def output_root():
    return Path(os.environ.get("NALCERT_OUT") or "runs")


def packaged_configs():
    root = resources.files("nalcert") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config(path):
    """A file path, or the name of a shipped config (``mnist-nal``)."""
    if path is None or Path(path).is_file():
        return path
    name = Path(path).name
    name = name[:-4] if name.endswith(".cfg") else name
    if name in packaged_configs():
        return str(resources.files("nalcert") / "configs" / f"{name}.cfg")
    raise ConfigError(f"config file not found: {path} (shipped configs: {', '.join(packaged_configs())})")


def resolve_path(p):
    p = str(p)
    return output_root() / p[1:] if p.startswith("@") else Path(p)


# ---- data and models --------------------------------------------------------------


def _check_inputs(cfg, command):
    """File and cross-key checks that must pass before any work starts."""
    src = cfg["data.source"]
    if src.startswith("builtin:"):
        from .data import BUILTIN
        if src[8:] not in BUILTIN:
            raise ConfigError(f"unknown builtin dataset {src[8:]!r}", "data.source")
    elif src == "idx":
        for key in ("data.images", "data.labels"):
            if not cfg[key] or not Path(cfg[key]).is_file():
                raise ConfigError(f"file not found: {cfg[key]!r}", key)
    elif src == "csv":
        for key in ("data.train_csv", "data.test_csv"):
            if not cfg[key] or not Path(cfg[key]).is_file():
                raise ConfigError(f"file not found: {cfg[key]!r}", key)
    elif src != "blobs":
        raise ConfigError("expected builtin:<name>, idx, csv or blobs", "data.source")
    if command == "train":
        # shape check up front when the data shape is known without loading it
        shape = {"blobs": (cfg["data.blobs.d"], cfg["data.blobs.classes"]), "builtin:mnist5k": (784, 10)}.get(src)
        try:
            specs = parse_arch(cfg["model.arch"], cfg["model.activation"])
        except ParameterError as e:
            raise ConfigError(str(e), "model.arch") from None
        if shape and (specs[0].in_dim, specs[-1].out_dim) != shape:
            raise ConfigError(f"architecture {cfg['model.arch']} does not fit data with d={shape[0]} and "
                              f"{shape[1]} classes", "model.arch")
    if command in ("attack", "certify", "bound"):
        if not cfg["model.path"]:
            raise ConfigError(f"{command} needs a model file", "model.path")
        if not resolve_path(cfg["model.path"]).is_file():
            raise ConfigError(f"model file not found: {resolve_path(cfg['model.path'])}", "model.path")
    if command == "transfer":
        models = cfg["transfer.models"]
        if len(models) < 1:
            raise ConfigError("transfer needs at least one model", "transfer.models")
        for m in models:
            if not resolve_path(m).is_file():
                raise ConfigError(f"model file not found: {resolve_path(m)}", "transfer.models")
        if cfg["transfer.names"] and len(cfg["transfer.names"]) != len(models):
            raise ConfigError("need one name per model", "transfer.names")


def load_data(cfg):
    """``(train, test)`` datasets described by the ``data.*`` keys."""
    src = cfg["data.source"]
    root = RngStream(cfg["data.seed"])
    if src == "blobs":
        args = (cfg["data.blobs.d"], cfg["data.blobs.classes"], cfg["data.blobs.separation"])
        tr = make_blobs(cfg["data.train_n"], *args, root.child("blobs-train"), spread=cfg["data.blobs.spread"])
        te = make_blobs(cfg["data.test_n"], *args, root.child("blobs-test"), spread=cfg["data.blobs.spread"])
        return tr, te
    if src == "csv":
        tr = load_csv(cfg["data.train_csv"])
        te = load_csv(cfg["data.test_csv"], num_classes=tr.num_classes)
        return tr, te
    pool = load_builtin(src[8:]) if src.startswith("builtin:") else load_idx(cfg["data.images"], cfg["data.labels"])
    return train_test_split(pool, cfg["data.train_n"], cfg["data.test_n"], root.child("split"))


def _dataset_meta(**sets):
    return {k: {"name": ds.name, "n": ds.n, "d": ds.d, "classes": ds.num_classes, "sha256": ds.checksum()}
            for k, ds in sets.items()}


def _load_model(path, ds):
    net = load_network(resolve_path(path))
    if net.input_dim != ds.d:
        raise DimensionError(f"model expects inputs of length {net.input_dim}, data has {ds.d}")
    if net.num_classes != ds.num_classes:
        raise DimensionError(f"model has {net.num_classes} classes, data has {ds.num_classes}")
    return net


def _head(ds, n):
    return ds if not n or n >= ds.n else ds.take(np.arange(n), f"{ds.name}[:{n}]")


def _eta1(v):
    return None if v == 0 else v


def train_spec(cfg):
    return TrainSpec(
        method=cfg["train.method"], epochs=cfg["train.epochs"], eta2=cfg["train.eta2"],
        batch_size=cfg["train.batch_size"], gamma=cfg["surrogate.gamma"],
        noise=NoiseSpec(cfg["noise.sigma"], cfg["noise.r"], cfg["run.seed"]), K=cfg["surrogate.K"],
        eta1=_eta1(cfg["surrogate.eta1"]), cost_mode=cfg["surrogate.cost_mode"], attack_eps=cfg["train.attack_eps"],
        k_pgd=cfg["train.k_pgd"], seed=cfg["run.seed"],
    )


# ---- commands -----------------------------------------------------------------------
# Each returns (artifact paths relative to out, extra manifest fields).


def cmd_gen_data(cfg, out, log):
    tr, te = load_data(cfg)
    if tr.d == 784:
        names = ["train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                 "test-images-idx3-ubyte.gz", "test-labels-idx1-ubyte.gz"]
        save_idx(tr, out / names[0], out / names[1])
        save_idx(te, out / names[2], out / names[3])
    else:
        names = ["train.csv", "test.csv"]
        save_csv(tr, out / names[0])
        save_csv(te, out / names[1])
    log(f"wrote {tr.n} training and {te.n} test rows")
    return names, {"datasets": _dataset_meta(train=tr, test=te)}


def cmd_train(cfg, out, log):
    ts = train_spec(cfg)
    tr, te = load_data(cfg)
    specs = parse_arch(cfg["model.arch"], cfg["model.activation"])
    if specs[0].in_dim != tr.d or specs[-1].out_dim != tr.num_classes:
        raise ConfigError(f"architecture {cfg['model.arch']} does not fit data with d={tr.d} and "
                          f"{tr.num_classes} classes", "model.arch")
    net0 = init_network(specs, RngStream(cfg["run.seed"]).child("model"))
    net, hist = train(net0, tr, ts, threads=cfg["run.threads"], log=log)
    save_network(net, out / "model.nalm")
    rows = [(e, s, c) for e, s, c, _ in hist.rows()]
    write_csv(out / "history.csv", "history.csv", rows)
    arts = ["model.nalm", "history.csv"]
    if cfg["run.plot"]:
        from .plotting import plot_history
        plot_history(rows, out / "history.png", f"{ts.method} training")
        arts.append("history.png")
    acc = evaluate(net, te, threads=cfg["run.threads"])["clean_acc"]
    log(f"clean test accuracy {acc:.4f}")
    extra = {"train_spec": ts.as_dict(), "history": [list(r) for r in hist.rows()],
             "epoch_wall_time_s": hist.wall_time, "clean_test_acc": acc,
             "datasets": _dataset_meta(train=tr, test=te)}
    return arts, extra


def cmd_attack(cfg, out, log):
    _, te = load_data(cfg)
    net = _load_model(cfg["model.path"], te)
    sig = cfg["attack.test_sigma"]
    draws = cfg["attack.test_draws"] or cfg["noise.r"]
    nat = NoiseSpec(sig, draws, cfg["run.seed"]) if sig > 0 else None
    rows = []
    for eps in cfg["attack.epsilons"]:
        res = evaluate(net, te, AttackSpec(eps, cfg["attack.k_pgd"]), nat, threads=cfg["run.threads"])
        rows.append((eps, cfg["attack.k_pgd"], sig, draws if nat else 0, te.n, res["clean_acc"], res["robust_acc"]))
        log(f"eps={eps:g}: clean {res['clean_acc']:.4f}, robust {res['robust_acc']:.4f}")
    write_csv(out / "robustness.csv", "robustness.csv", rows)
    arts = ["robustness.csv"]
    if cfg["run.plot"] and len(rows) > 1:
        from .plotting import plot_robustness
        plot_robustness(rows, out / "robustness.png")
        arts.append("robustness.png")
    note = (f"test-time noise sigma={sig:g} with {draws}-draw majority vote; the attack targets the base network"
            if nat else "no test-time noise; deterministic argmax of the base network")
    return arts, {"test_time_prediction": note, "datasets": _dataset_meta(test=te)}


def cmd_certify(cfg, out, log):
    cs = CertifySpec(cfg["certify.sigma"], cfg["certify.n0"], cfg["certify.n"], cfg["certify.alpha"],
                     cfg["certify.mode"])
    _, te = load_data(cfg)
    te = _head(te, cfg["certify.max_points"])
    net = _load_model(cfg["model.path"], te)
    results = certify_dataset(net, te, cs, seed=cfg["run.seed"], threads=cfg["run.threads"])
    rows = [(i, int(y), r.c_hat, r.pA_lower, r.pB_upper, r.radius, r.abstain, (not r.abstain) and r.c_hat == y)
            for i, (r, y) in enumerate(zip(results, te.labels))]
    write_csv(out / "certification.csv", "certification.csv", rows)
    curve = curve_from_results(results, te.labels, cfg["certify.radii"])
    write_csv(out / "curve.csv", "curve.csv", curve)
    summary = {"radii": [c[0] for c in curve], "certified_accuracy": [c[1] for c in curve],
               "abstain_rate": float(np.mean([r.abstain for r in results])), "spec": cs.__dict__}
    (out / "certify.json").write_text(json.dumps(summary, indent=2) + "\n")
    arts = ["certification.csv", "curve.csv", "certify.json"]
    if cfg["run.plot"]:
        from .plotting import plot_curve
        plot_curve({Path(cfg["model.path"]).parent.name or "model": curve}, out / "curve.png")
        arts.append("curve.png")
    log(f"certified accuracy at radius 0: {curve[0][1]:.4f}" if curve else "no radii requested")
    note = "n0, n and alpha are conventional defaults; compare models only under an identical CertifySpec"
    return arts, {"certify_note": note, "datasets": _dataset_meta(test=te)}


def cmd_bound(cfg, out, log):
    tr, te = load_data(cfg)
    ds = _head(te if cfg["bound.split"] == "test" else tr, cfg["bound.max_points"])
    net = _load_model(cfg["model.path"], ds)
    ns = NoiseSpec(cfg["noise.sigma"], cfg["noise.r"], cfg["run.seed"])
    reports = certificate_curve(net, ds, cfg["bound.gammas"], None, ns, cfg["bound.K"], _eta1(cfg["bound.eta1"]),
                                cfg["bound.cost_mode"], cfg["run.threads"], cfg["bound.points"])
    rows = [(rep.gamma, rho, b, rep.rho_test, rep.worst_case_loss)
            for rep in reports for rho, b in zip(rep.rho_grid, rep.bound_values)]
    write_csv(out / "certificate.csv", "certificate.csv", rows)
    top = max(max(rep.rho_grid) for rep in reports)
    grid = [float(v) for v in np.linspace(0.0, top, cfg["bound.points"])]
    env = lower_envelope(reports, grid)
    write_csv(out / "envelope.csv", "envelope.csv", env)
    (out / "bound.json").write_text(json.dumps([rep.as_dict() for rep in reports], indent=2) + "\n")
    arts = ["certificate.csv", "envelope.csv", "bound.json"]
    if cfg["run.plot"]:
        from .plotting import plot_certificate
        plot_certificate(reports, env, out / "certificate.png")
        arts.append("certificate.png")
    for rep in reports:
        log(f"gamma={rep.gamma:g}: rho_test {rep.rho_test:.4f}, worst-case loss {rep.worst_case_loss:.4f}, "
            f"bound {rep.bound(rep.rho_test):.4f} (3 se {3 * rep.combined_se:.4f}), holds: {rep.holds()}")
    return arts, {"reports": [rep.as_dict() for rep in reports], "datasets": _dataset_meta(eval=ds)}


def cmd_transfer(cfg, out, log):
    _, te = load_data(cfg)
    paths = cfg["transfer.models"]
    names = list(cfg["transfer.names"]) or [resolve_path(p).parent.name or resolve_path(p).stem for p in paths]
    nets = [_load_model(p, te) for p in paths]
    attack = AttackSpec(cfg["transfer.epsilon"], cfg["transfer.k_pgd"])
    rows, mat = [], np.zeros((len(nets), len(nets)))
    for i, src in enumerate(nets):
        for j, tgt in enumerate(nets):
            mat[i, j] = transfer_eval(src, tgt, te, attack)
            rows.append((names[i], names[j], float(mat[i, j])))
            log(f"{names[i]} -> {names[j]}: {mat[i, j]:.4f}")
    write_csv(out / "transfer.csv", "transfer.csv", rows)
    arts = ["transfer.csv"]
    if cfg["run.plot"]:
        from .plotting import plot_transfer
        plot_transfer(names, mat, out / "transfer.png")
        arts.append("transfer.png")
    return arts, {"datasets": _dataset_meta(test=te)}


def cmd_verify(level, out, log):
    from . import verify
    checks = list(verify.QUICK)
    if level == "full":
        checks.append(verify.check_noise_ordering)
    results = []
    for fn in checks:
        res = fn()
        log(res.line())
        results.append(res)
    report = [{"name": r.name, "passed": r.passed, "detail": r.detail, "seconds": r.seconds} for r in results]
    (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    return ["verify.json"], {"level": level, "passed": all(r.passed for r in results)}


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "attack": cmd_attack, "certify": cmd_certify,
            "bound": cmd_bound, "transfer": cmd_transfer}


def _write_manifest(out, command, cfg, arts, extra, started, wall):
    man = {
        "command": command,
        "version": __version__,
        "config": cfg.echo() if cfg is not None else None,
        "seed": cfg["run.seed"] if cfg is not None else None,
        "prng": PRNG_ID,
        "tie_break": TIE_BREAK,
        "started_utc": started,
        "wall_time_s": wall,
        "artifacts": arts,
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(man, indent=2, default=str) + "\n")
    return man


def run_command(command, config=None, overrides=(), out=None, log=None):
    """Programmatic entry: validate, run one command, write the manifest; returns it."""
    log = log or (lambda msg: None)
    cfg = load_config(resolve_config(config), overrides)
    _check_inputs(cfg, command)
    if command in ("train",):
        train_spec(cfg)
    if command == "certify":
        CertifySpec(cfg["certify.sigma"], cfg["certify.n0"], cfg["certify.n"], cfg["certify.alpha"],
                    cfg["certify.mode"])
    out = Path(out or cfg["run.out"] or output_root() / (cfg["run.name"] or command))
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    arts, extra = HANDLERS[command](cfg, out, log)
    return _write_manifest(out, command, cfg, arts, extra, started, time.perf_counter() - t0)


def build_parser():
    ap = argparse.ArgumentParser(prog="nalcert", description="Noisy adversarial learning and smoothing certificates.")
    ap.add_argument("--version", action="version", version=f"nalcert {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file or shipped config name")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a key (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
        p.add_argument("--threads", type=int, help="shorthand for --set run.threads=N")
        p.add_argument("--plot", dest="plot", action="store_true", default=None, help="render PNG figures")
        p.add_argument("--no-plot", dest="plot", action="store_false", help="CSV and JSON only")
        p.add_argument("-q", "--quiet", action="store_true")

    for name, text in (("gen-data", "write the train/test split to files"), ("train", "train a model"),
                       ("attack", "PGD robustness of a model"), ("certify", "randomized-smoothing certification"),
                       ("bound", "certificate vs measured worst-case loss"),
                       ("transfer", "transfer-attack accuracy matrix")):
        common(sub.add_parser(name, help=text))
    v = sub.add_parser("verify", help="run the numerical property suite")
    v.add_argument("level", nargs="?", choices=("quick", "full"), default="quick")
    v.add_argument("--out", help="output directory")
    v.add_argument("-q", "--quiet", action="store_true")
    s = sub.add_parser("schema-check", help="validate every CSV in a run directory")
    s.add_argument("dir", help="run directory (searched recursively)")
    sub.add_parser("config-keys", help="list every config key with its default")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    log = (lambda msg: None) if getattr(args, "quiet", False) else (lambda msg: print(msg, flush=True))
    try:
        if args.command == "config-keys":
            print(schema_text())
            return 0
        if args.command == "schema-check":
            checked, problems = check_run_dir(args.dir)
            for p in problems:
                print(p)
            print(f"{len(checked)} CSV files checked, {len(problems)} problems")
            return 1 if problems or not checked else 0
        if args.command == "verify":
            out = Path(args.out or output_root() / "verify")
            out.mkdir(parents=True, exist_ok=True)
            started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
            t0 = time.perf_counter()
            arts, extra = cmd_verify(args.level, out, log)
            _write_manifest(out, "verify", None, arts, extra, started, time.perf_counter() - t0)
            log("all checks passed" if extra["passed"] else "some checks FAILED")
            return 0 if extra["passed"] else 1
        overrides = []
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        if args.plot is not None:
            overrides.append(f"run.plot={'true' if args.plot else 'false'}")
        man = run_command(args.command, args.config, overrides + args.set, args.out, log)
        log(f"wrote {', '.join(man['artifacts'])} and manifest.json")
        return 0
    except NalcertError as e:
        print(f"nalcert: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"nalcert: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
