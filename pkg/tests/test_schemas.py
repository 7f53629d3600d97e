import json

import numpy as np
import pytest

from nalcert.schemas import MAX_PROBLEMS, SchemaError, check_csv, check_run_dir, fmt, schema_for, write_csv


def test_fmt_is_round_trip():
    assert fmt(0.1) == "0.1" and fmt(np.float64(1 / 3)) == repr(1 / 3)
    assert fmt(True) == "1" and fmt(np.int64(4)) == "4"
    assert float(fmt(1e-300)) == 1e-300


def test_write_then_check(tmp_path):
    p = write_csv(tmp_path / "curve.csv", "curve.csv", [(0.0, 0.9), (0.1, 0.8)])
    assert p.read_text() == "radius,certified_accuracy\n0.0,0.9\n0.1,0.8\n"
    assert check_csv(p) == []
    with pytest.raises(SchemaError):
        write_csv(tmp_path / "curve.csv", "curve.csv", [(0.0,)])


def test_prefixed_names():
    assert schema_for("nal-curve.csv") == "curve.csv"
    assert schema_for("weird.csv") is None


def test_bad_header_and_values(tmp_path):
    p = tmp_path / "curve.csv"
    p.write_text("r,acc\n0,1\n")
    assert "header" in check_csv(p)[0]
    p.write_text("radius,certified_accuracy\n-1,1.5\n0.1\n0.2,nan\n")
    probs = check_csv(p)
    assert len(probs) == 4


def test_abstain_needs_zero_radius(tmp_path):
    p = tmp_path / "certification.csv"
    write_csv(p, "certification.csv", [(0, 1, -1, 0.4, 0.6, 0.3, True, False)])
    assert any("abstained" in s for s in check_csv(p))


def test_problem_cap(tmp_path):
    p = tmp_path / "curve.csv"
    p.write_text("radius,certified_accuracy\n" + "x,y\n" * 50)
    probs = check_csv(p)
    assert len(probs) == MAX_PROBLEMS + 1 and "more problems" in probs[-1]


def test_dataset_csv(tmp_path):
    p = tmp_path / "train.csv"
    p.write_text("x0,x1,label\n0.1,0.2,1\n")
    assert check_csv(p) == []
    p.write_text("a,b\n1,2\n")
    assert check_csv(p)


def test_run_dir_manifest(tmp_path):
    write_csv(tmp_path / "curve.csv", "curve.csv", [(0.0, 1.0)])
    (tmp_path / "manifest.json").write_text(json.dumps({"artifacts": ["curve.csv", "gone.png"]}))
    checked, probs = check_run_dir(tmp_path)
    assert len(checked) == 1 and len(probs) == 1 and "gone.png" in probs[0]
    (tmp_path / "manifest.json").write_text("{")
    assert "invalid JSON" in check_run_dir(tmp_path)[1][0]
    with pytest.raises(SchemaError):
        check_run_dir(tmp_path / "nope")
