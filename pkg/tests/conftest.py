import numpy as np
import pytest

from hemorom.config import Config
from hemorom.fom import SnapshotDatabase, run_fom
from hemorom.mesh import StructuredMesh

# a short, coarse run for tests that need a database but not Case-1 accuracy
SMALL_FOM = {
    "mesh.nx": 12, "mesh.ny": 4, "time.T": 0.2, "time.dt": 2e-3, "time.stride": 5,
    "nn.epochs": 300,
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mesh16():
    return StructuredMesh(16, 8, 0.30, 0.02, 1)


@pytest.fixture(scope="session")
def case1_fom_dir(tmp_path_factory):
    """Case-1 desk database (40x8 cells, 50 snapshots over (0, 1] s)."""
    out = tmp_path_factory.mktemp("case1") / "fom_db"
    run_fom(Config(), out_dir=out)
    return out


@pytest.fixture(scope="session")
def case1_db(case1_fom_dir):
    return SnapshotDatabase.load(case1_fom_dir)


@pytest.fixture(scope="session")
def small_fom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("small") / "fom_db"
    run_fom(Config(SMALL_FOM), out_dir=out)
    return out


@pytest.fixture(scope="session")
def small_db(small_fom_dir):
    return SnapshotDatabase.load(small_fom_dir)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {text}")
