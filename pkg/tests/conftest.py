from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# criterion id -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def configs_dir():
    return CONFIGS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<5} {'PASS' if ok else 'FAIL'}  {detail}")
