from __future__ import annotations

import json

import pytest
from hypothesis import settings

from edgesim.kernels import available_backends

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

BACKENDS = available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Each importable kernel module in turn."""
    return BACKENDS[request.param]


@pytest.fixture
def write_json(tmp_path):
    def _write(doc, name="scenario.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2))
        return path
    return _write


ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _verdict(num, name, ok, detail):
        line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line
    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
