import numpy as np
import pytest

from nalcert.data import make_blobs
from nalcert.nn import LayerSpec, init_network, parse_arch
from nalcert.tensor import RngStream

# One line per acceptance criterion, filled by test_acceptance.py and printed
# in the terminal summary so the report shows without ``-s``.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(f"{key:>3} {ACCEPTANCE_LINES[key]}")


@pytest.fixture
def small_net():
    return init_network([LayerSpec(3, 5, "relu"), LayerSpec(5, 4, "elu"), LayerSpec(4, 3, "none")], RngStream(7))


@pytest.fixture
def blobs():
    return make_blobs(200, 2, 2, 0.5, RngStream(3), spread=0.1)


@pytest.fixture
def blob_net():
    return init_network(parse_arch("2-8-2", "elu"), RngStream(1))


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("NALCERT_OUT", str(tmp_path / "runs"))
    return tmp_path / "runs"


def random_net(seed, dims, act="relu"):
    return init_network(parse_arch("-".join(map(str, dims)), act), RngStream(seed))


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
