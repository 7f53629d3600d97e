"""CSV artifact schemas, a deterministic writer and a run-directory validator.

Floats are written with ``repr`` (shortest round-trip form), so identical
values always produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import NalcertError


class SchemaError(NalcertError, ValueError):
    pass


def _int(v):
    int(v)


def _float(v):
    float(v)


def _prob(v):
    p = float(v)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{v} outside [0, 1]")


def _nonneg(v):
    if not float(v) >= 0:
        raise ValueError(f"{v} is negative")


def _flag(v):
    if v not in ("0", "1"):
        raise ValueError(f"{v!r} is not 0 or 1")


def _text(v):
    if not v:
        raise ValueError("empty field")


# file name -> ordered (column, validator) pairs
SCHEMAS = {
    "certification.csv": (("index", _int), ("label", _int), ("predicted", _int), ("pA_lower", _prob),
                          ("pB_upper", _prob), ("radius", _nonneg), ("abstain", _flag), ("correct", _flag)),
    "curve.csv": (("radius", _nonneg), ("certified_accuracy", _prob)),
    "certificate.csv": (("gamma", _nonneg), ("rho", _nonneg), ("bound", _float), ("rho_test", _nonneg),
                        ("worst_case_loss", _float)),
    "envelope.csv": (("rho", _nonneg), ("bound", _float)),
    "transfer.csv": (("source", _text), ("target", _text), ("accuracy", _prob)),
    "history.csv": (("epoch", _int), ("train_objective", _float), ("clean_loss", _float)),
    "robustness.csv": (("epsilon", _nonneg), ("k_pgd", _int), ("test_sigma", _nonneg), ("test_draws", _int),
                       ("n", _int), ("clean_acc", _prob), ("robust_acc", _prob)),
}

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, name, rows):
    """Write ``rows`` under the header of schema ``name``; returns the path."""
    cols = [c for c, _ in SCHEMAS[name]]
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            if len(row) != len(cols):
                raise SchemaError(f"{path.name}: row has {len(row)} fields, schema has {len(cols)}")
            w.writerow([fmt(v) for v in row])
    return path


def schema_for(path):
    name = Path(path).name
    if name in SCHEMAS:
        return name
    # curve files may carry a prefix, e.g. nal-curve.csv
    for key in SCHEMAS:
        if name.endswith("-" + key):
            return key
    return None


MAX_PROBLEMS = 20  # per file; the rest are summarized


def check_csv(path):
    """Return a list of problems with one CSV (empty when valid)."""
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        return [f"{path.name}: empty file"]
    header, body = rows[0], rows[1:]
    key = schema_for(path)
    problems = []
    if key is None:
        # dataset CSV: x0..x{d-1},label
        d = len(header) - 1
        if d < 1 or header != [f"x{i}" for i in range(d)] + ["label"]:
            return [f"{path.name}: no schema matches header {','.join(header)}"]
        checks = [_float] * d + [_int]
    else:
        cols = [c for c, _ in SCHEMAS[key]]
        if header != cols:
            return [f"{path.name}: header {','.join(header)} != {','.join(cols)}"]
        checks = [fn for _, fn in SCHEMAS[key]]
    for no, row in enumerate(body, start=2):
        if len(row) != len(checks):
            problems.append(f"{path.name}:{no}: {len(row)} fields, expected {len(checks)}")
            continue
        for col, (v, fn) in enumerate(zip(row, checks)):
            try:
                fn(v)
                if fn in (_float, _nonneg, _prob) and not math.isfinite(float(v)):
                    raise ValueError("non-finite value")
            except ValueError as e:
                problems.append(f"{path.name}:{no}: column {header[col]}: {e}")
    if key == "certification.csv":
        for no, row in enumerate(body, start=2):
            if len(row) == len(checks) and row[6] == "1" and row[5] != "0.0":
                problems.append(f"{path.name}:{no}: abstained row with nonzero radius")
    if len(problems) > MAX_PROBLEMS:
        problems = problems[:MAX_PROBLEMS] + [f"{path.name}: {len(problems) - MAX_PROBLEMS} more problems"]
    return problems


def check_run_dir(root):
    """Validate every CSV under ``root`` and the manifest's artifact list.

    Returns ``(checked_files, problems)``.
    """
    root = Path(root)
    if not root.is_dir():
        raise SchemaError(f"{root}: not a directory")
    problems, checked = [], []
    for path in sorted(root.rglob("*.csv")):
        checked.append(path)
        problems.extend(check_csv(path))
    for man in sorted(root.rglob("manifest.json")):
        try:
            meta = json.loads(man.read_text())
        except json.JSONDecodeError as e:
            problems.append(f"{man}: invalid JSON ({e})")
            continue
        for art in meta.get("artifacts", []):
            if not (man.parent / art).exists():
                problems.append(f"{man}: listed artifact {art} is missing")
    return checked, problems
