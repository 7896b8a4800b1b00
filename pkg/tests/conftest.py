import numpy as np
import pytest

from eqreg.data import make_synthetic
from eqreg.linops import decompose, kernel_projector, make_inpainting
from eqreg.regularizers import make_subspace_reg

_criteria = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_setup():
    """8x8 images with the first two rows masked and an 8-dim signal subspace."""
    A = make_inpainting((8, 8), range(2))
    decomp = decompose(A)
    pker = kernel_projector(decomp)
    ds, pv = make_synthetic(64, 8, 60, seed=7)
    g = make_subspace_reg(pker, pv)
    return {"A": A, "decomp": decomp, "pker": pker, "data": ds, "pv": pv, "G": g}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    entry = _criteria.setdefault(num, {"status": None, "secs": 0.0})
    entry["secs"] += report.duration
    if report.skipped:
        entry["status"] = "SKIP"
    elif report.failed:
        entry["status"] = "FAIL"
    elif report.when == "call" and entry["status"] is None:
        entry["status"] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        entry = _criteria[num]
        status = entry["status"] or "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {status}  ({entry['secs']:.2f} s)")
