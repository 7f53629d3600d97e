import csv
import json
import subprocess
import sys

import pytest

from nalcert.cli import main, packaged_configs, resolve_config, run_command
from nalcert.errors import ConfigError
from nalcert.nn import load_network

FAST = ["train.epochs=3"]


@pytest.fixture
def blobs_model(out_root):
    man = run_command("train", "blobs-nal", FAST)
    return out_root / "blobs-nal", man


def test_shipped_configs_parse():
    names = packaged_configs()
    assert {"blobs-nal", "mnist-nal", "mnist-certify", "mnist-bound"} <= set(names)
    for n in names:
        assert resolve_config(n).endswith(f"{n}.cfg")
    with pytest.raises(ConfigError):
        resolve_config("no-such-config")


def test_train_manifest_and_history(blobs_model):
    out, man = blobs_model
    for k in ("config", "seed", "prng", "wall_time_s", "artifacts", "datasets", "started_utc"):
        assert k in man
    assert man["config"]["train.epochs"] == 3 and man["config"]["surrogate.gamma"] == 1.5
    assert len(man["datasets"]["train"]["sha256"]) == 64
    with open(out / "history.csv") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert (out / "history.png").is_file() and "history.png" in man["artifacts"]
    assert load_network(out / "model.nalm").layers[0].in_dim == 2
    assert json.loads((out / "manifest.json").read_text())["artifacts"] == man["artifacts"]


def test_no_plot_flag(out_root):
    assert main(["train", "--config", "blobs-natural", "--set", "train.epochs=1", "--no-plot", "-q"]) == 0
    out = out_root / "blobs-natural"
    assert not (out / "history.png").exists() and (out / "history.csv").is_file()


def test_downstream_commands(blobs_model, out_root):
    out, _ = blobs_model
    cert = run_command("certify", "blobs-certify", ["certify.max_points=20", "certify.n=200"])
    assert "curve.png" in cert["artifacts"]
    bound = run_command("bound", "blobs-bound", ["bound.max_points=40"])
    assert len(bound["reports"]) == 3 and (out_root / "blobs-bound-nal" / "certificate.png").is_file()
    att = run_command("attack", None, ["data.source=blobs", "data.test_n=50", "model.path=@blobs-nal/model.nalm",
                                       "attack.epsilons=0.1,0.3", "attack.k_pgd=5", "run.name=att"])
    with open(out_root / "att" / "robustness.csv") as f:
        rows = list(csv.DictReader(f))
    assert float(rows[1]["robust_acc"]) <= float(rows[0]["robust_acc"]) <= float(rows[0]["clean_acc"])
    tr = run_command("transfer", None, ["data.source=blobs", "data.test_n=30", "transfer.k_pgd=3",
                                        "transfer.models=@blobs-nal/model.nalm,@blobs-nal/model.nalm",
                                        "transfer.names=a,b", "run.name=tr"])
    assert "transfer.png" in tr["artifacts"]
    assert main(["schema-check", str(out_root)]) == 0


def test_gen_data(out_root):
    run_command("gen-data", "blobs-nal", ["run.name=gd"])
    assert main(["schema-check", str(out_root / "gd")]) == 0


def test_schema_check_flags_bad_file(tmp_path, capsys):
    (tmp_path / "curve.csv").write_text("radius,certified_accuracy\n0.0,2.0\n")
    assert main(["schema-check", str(tmp_path)]) == 1
    assert "curve.csv:2" in capsys.readouterr().out
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["schema-check", str(empty)]) == 1


def test_config_errors_exit_2(out_root, capsys):
    assert main(["train", "--config", "blobs-nal", "--set", "surrogate.gama=2"]) == 2
    assert "surrogate.gama" in capsys.readouterr().err
    assert main(["certify", "--set", "model.path=@missing/model.nalm"]) == 2
    assert "model.path" in capsys.readouterr().err
    assert main(["train", "--set", "data.source=blobs"]) == 2  # 784-input arch on 2-D data
    assert "model.arch" in capsys.readouterr().err
    assert not any(out_root.iterdir()) if out_root.exists() else True


def test_config_keys(capsys):
    assert main(["config-keys"]) == 0
    assert "surrogate.gamma" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nalcert", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("nalcert")


def test_mnist_train_smoke(out_root):
    man = run_command("train", "mnist-nal", ["train.epochs=1", "data.train_n=200", "data.test_n=100",
                                             "run.plot=false"])
    assert man["datasets"]["train"]["d"] == 784 and len(man["history"]) == 1


def test_bad_arch_string_names_key(out_root, capsys):
    assert main(["train", "--set", "model.arch=784-x-10"]) == 2
    assert "model.arch" in capsys.readouterr().err
