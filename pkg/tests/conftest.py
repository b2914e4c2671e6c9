import sys

import pytest

import desk


@pytest.fixture(scope="session")
def desk_model():
    """Train (or load from cache) a named desk recipe once per session."""
    trained = {}

    def get(name: str) -> desk.DeskModel:
        if name not in trained:
            trained[name] = desk.train(name)
        return trained[name]

    return get


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
