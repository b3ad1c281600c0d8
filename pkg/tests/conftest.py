import os
import sys
from datetime import date
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dwd_synth import write_kl_file  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (status, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def kl_file(tmp_path_factory) -> Path:
    """Synthetic KL product: 2000-01-01..2022-12-31 with 15 incomplete days, plus a pre-2000 tail."""
    path = tmp_path_factory.mktemp("dwd") / "produkt_klima_tag_synthetic.txt"
    write_kl_file(path, date(1998, 11, 1), date(2022, 12, 31), missing=15, seed=2667)
    return path


@pytest.fixture(scope="session")
def small_kl_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("dwd_small") / "produkt_klima_tag_small.txt"
    write_kl_file(path, date(2000, 1, 1), date(2000, 12, 31), missing=4, seed=5)
    return path


@pytest.fixture(scope="session")
def zugspitze_file():
    p = os.environ.get("AAQS_ZUGSPITZE")
    if not p or not Path(p).exists():
        pytest.skip("set AAQS_ZUGSPITZE to the DWD Zugspitze KL product to run this check")
    return Path(p)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status:4s} {detail}")
