"""Flat ``dotted.key = value`` run configuration.

A config file is a list of ``key = value`` lines; ``#`` starts a comment.
Every key must be declared in :data:`SCHEMA`; values are parsed and
validated before any command starts work. ``--set key=value`` overrides are
applied last. Errors name the offending key and, for file input, the line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    kind: str  # int | float | str | bool | floats | strs | choice
    default: object
    help: str
    choices: tuple = ()
    lo: float | None = None  # inclusive lower bound for numbers (and each list element)
    lo_open: bool = False  # when True the bound is exclusive


def _k(kind, default, help, choices=(), lo=None, lo_open=False):
    return Key(kind, default, help, tuple(choices), lo, lo_open)


SCHEMA = {
    # run
    "run.name": _k("str", "", "run directory name under the output root (default: the command)"),
    "run.seed": _k("int", 0, "master seed for every random stream", lo=0),
    "run.threads": _k("int", 1, "worker threads; outputs do not depend on it", lo=1),
    "run.out": _k("str", "", "output directory (overridden by --out)"),
    "run.plot": _k("bool", True, "also render PNG figures next to the CSV artifacts"),
    # data
    "data.source": _k("str", "builtin:mnist5k", "builtin:<name> | idx | csv | blobs"),
    "data.images": _k("str", "", "IDX image file (data.source = idx)"),
    "data.labels": _k("str", "", "IDX label file (data.source = idx)"),
    "data.train_csv": _k("str", "", "training CSV (data.source = csv)"),
    "data.test_csv": _k("str", "", "test CSV (data.source = csv)"),
    "data.train_n": _k("int", 4000, "stratified training subset size", lo=1),
    "data.test_n": _k("int", 1000, "stratified test subset size (disjoint from training)", lo=1),
    "data.seed": _k("int", 0, "seed for the train/test split and synthetic data (kept apart from run.seed)", lo=0),
    "data.blobs.d": _k("int", 2, "blob dimension (1 or 2)", lo=1),
    "data.blobs.classes": _k("int", 2, "number of blob classes", lo=1),
    "data.blobs.separation": _k("float", 0.5, "distance between adjacent blob centroids", lo=0, lo_open=True),
    "data.blobs.spread": _k("float", 0.1, "per-coordinate std-dev of each blob", lo=0, lo_open=True),
    # model
    "model.arch": _k("str", "784-256-256-10", "layer widths, input first"),
    "model.activation": _k("choice", "relu", "hidden activation", ("relu", "elu")),
    "model.path": _k("str", "", "model file to load (attack, certify, bound)"),
    # training
    "train.method": _k("choice", "nal", "training method", ("nal", "wrm", "noise", "pgd_at", "natural")),
    "train.epochs": _k("int", 10, "epochs", lo=1),
    "train.eta2": _k("float", 0.1, "outer SGD step", lo=0, lo_open=True),
    "train.batch_size": _k("int", 128, "minibatch size", lo=1),
    "train.attack_eps": _k("float", 0.34, "l2 radius for pgd_at", lo=0, lo_open=True),
    "train.k_pgd": _k("int", 10, "PGD steps for pgd_at", lo=1),
    # inner maximization
    "surrogate.gamma": _k("float", 1.5, "penalty gamma", lo=0, lo_open=True),
    "surrogate.K": _k("int", 4, "ascent iterations", lo=0),
    "surrogate.eta1": _k("float", 0.0, "ascent step; 0 means 0.5/gamma", lo=0),
    "surrogate.cost_mode": _k("choice", "noisy", "cost inside the ascent", ("noisy", "clean")),
    # smoothing noise
    "noise.sigma": _k("float", 0.1, "Gaussian noise std-dev", lo=0),
    "noise.r": _k("int", 4, "noise draws per estimate", lo=1),
    # evaluation attack
    "attack.epsilons": _k("floats", (0.34,), "l2 radii to attack at", lo=0, lo_open=True),
    "attack.k_pgd": _k("int", 20, "PGD steps", lo=1),
    "attack.test_sigma": _k("float", 0.0, "noise added at test time (0 = none)", lo=0),
    "attack.test_draws": _k("int", 0, "majority-vote draws when test_sigma > 0 (0 = noise.r)", lo=0),
    # certification
    "certify.sigma": _k("float", 0.1, "smoothing std-dev", lo=0, lo_open=True),
    "certify.n0": _k("int", 100, "selection samples", lo=1),
    "certify.n": _k("int", 1000, "estimation samples", lo=1),
    "certify.alpha": _k("float", 0.001, "failure probability", lo=0, lo_open=True),
    "certify.mode": _k("choice", "one-sided", "bound mode", ("one-sided", "two-class")),
    "certify.radii": _k("floats", (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5), "curve radii", lo=0),
    "certify.max_points": _k("int", 0, "certify only the first N test points (0 = all)", lo=0),
    # certificate
    "bound.gammas": _k("floats", (0.25, 1.5, 3.0), "penalties to evaluate", lo=0, lo_open=True),
    "bound.K": _k("int", 4, "ascent iterations", lo=0),
    "bound.eta1": _k("float", 0.0, "ascent step; 0 means 0.5/gamma", lo=0),
    "bound.cost_mode": _k("choice", "noisy", "cost inside the ascent", ("noisy", "clean")),
    "bound.points": _k("int", 20, "rho grid points (0 .. 2 rho_test)", lo=2),
    "bound.max_points": _k("int", 0, "use only the first N test points (0 = all)", lo=0),
    "bound.split": _k("choice", "test", "data split to evaluate on", ("test", "train")),
    # transfer
    "transfer.models": _k("strs", (), "model files, one per heatmap row/column"),
    "transfer.names": _k("strs", (), "display names (default: file stems)"),
    "transfer.epsilon": _k("float", 0.34, "l2 radius", lo=0, lo_open=True),
    "transfer.k_pgd": _k("int", 20, "PGD steps", lo=1),
}


def _parse_value(key, raw, line):
    spec = SCHEMA[key]
    raw = raw.strip()
    try:
        if spec.kind == "int":
            val = int(raw)
        elif spec.kind == "float":
            val = float(raw)
        elif spec.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected a boolean, got {raw!r}")
            val = low in ("true", "1", "yes")
        elif spec.kind == "floats":
            val = tuple(float(v) for v in raw.split(",") if v.strip()) if raw else ()
        elif spec.kind == "strs":
            val = tuple(v.strip() for v in raw.split(",") if v.strip())
        elif spec.kind == "choice":
            if raw not in spec.choices:
                raise ValueError(f"expected one of {', '.join(spec.choices)}, got {raw!r}")
            val = raw
        else:
            val = raw
    except ValueError as e:
        raise ConfigError(str(e).replace("invalid literal for int() with base 10", "not an integer")
                          .replace("could not convert string to float", "not a number"), key, line) from None
    if spec.lo is not None:
        items = val if isinstance(val, tuple) else (val,)
        for v in items:
            if v < spec.lo or (spec.lo_open and v == spec.lo):
                op = ">" if spec.lo_open else ">="
                raise ConfigError(f"value {v} must be {op} {spec.lo}", key, line)
    if val != val:  # NaN
        raise ConfigError("NaN is not allowed", key, line)
    return val


class RunConfig:
    """Validated configuration: defaults, then file values, then overrides."""

    def __init__(self, values=None, sources=None):
        self.values = {k: s.default for k, s in SCHEMA.items()}
        self.sources = {k: "default" for k in SCHEMA}
        for k, v in (values or {}).items():
            self.values[k] = v
            self.sources[k] = (sources or {}).get(k, "api")

    def __getitem__(self, key):
        if key not in SCHEMA:
            raise ConfigError("unknown key", key)
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def set(self, key, raw, line=None, source="--set"):
        if key not in SCHEMA:
            raise ConfigError("unknown key", key, line)
        self.values[key] = _parse_value(key, raw, line)
        self.sources[key] = source

    def echo(self):
        """Effective config, JSON-friendly."""
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}

    def to_text(self):
        lines = []
        for k, v in sorted(self.values.items()):
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_text(text, origin="<config>", cfg=None):
    cfg = cfg or RunConfig()
    seen = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value' in {origin}", None, no)
        key, raw = (p.strip() for p in body.split("=", 1))
        if not key:
            raise ConfigError(f"empty key in {origin}", None, no)
        if key not in SCHEMA:
            raise ConfigError(f"unknown key in {origin}", key, no)
        if key in seen:
            raise ConfigError(f"duplicate key in {origin} (first set on line {seen[key]})", key, no)
        seen[key] = no
        cfg.set(key, raw, no, source=f"{origin}:{no}")
    return cfg


def load_config(path=None, overrides=()):
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        parse_text(p.read_text(), str(p), cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw, None, "--set")
    return cfg


def schema_text():
    out = []
    for k, s in SCHEMA.items():
        d = s.default
        if isinstance(d, tuple):
            d = ",".join(str(x) for x in d)
        extra = f" [{'|'.join(s.choices)}]" if s.choices else ""
        out.append(f"{k:26s} {s.kind:6s} default={d!s:14s} {s.help}{extra}")
    return "\n".join(out)
