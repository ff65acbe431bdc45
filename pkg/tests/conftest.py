import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from cimtune.hwmodel import AcceleratorConfig, KB, load_coeffs, load_config, load_macro

EXAMPLES = Path(__file__).resolve().parent.parent / "docs" / "examples"

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def example(name: str) -> str:
    return str(EXAMPLES / name)


@pytest.fixture(scope="session")
def proto():
    return load_macro(example("macro_prototype.json"))


@pytest.fixture(scope="session")
def coeffs():
    return load_coeffs(example("coeffs_default.json"))


@pytest.fixture(scope="session")
def small_cfg(proto):
    return AcceleratorConfig(proto, 2, 2, 128, 16 * KB, 16 * KB)


@pytest.fixture(scope="session")
def tradeoff_cfg(proto):
    return load_config(example("config_tradeoff.json"), proto)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
