import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from poolforge import make_synthetic_pool, write_artifacts


@pytest.fixture(scope="session")
def small_pool():
    """200-sample 4-component pool with texts and oracle labels."""
    return make_synthetic_pool(7, classes=4, per_class=50, d=16)


@pytest.fixture(scope="session")
def acceptance_pool():
    """The pinned 4x500 d=16 pool used by the acceptance scenarios."""
    return make_synthetic_pool(2024, classes=4, per_class=500, d=16)


@pytest.fixture()
def pool_dir(tmp_path, small_pool):
    path = tmp_path / "pool"
    write_artifacts(small_pool, path)
    return path


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criteria verdicts after capture ends."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
