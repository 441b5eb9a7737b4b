from __future__ import annotations

import socket

import pytest

from helpers import make_task
from taskforge.templates import FAMILIES


@pytest.fixture(scope="session")
def family_tasks():
    """Two offline template tasks per family."""
    return {f: [make_task(f, s) for s in (0, 1)] for f in FAMILIES}


@pytest.fixture
def no_network(monkeypatch):
    """Fail any attempt to open a socket."""

    def guard(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket, "socket", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
    monkeypatch.setattr(socket, "getaddrinfo", guard)


_criteria: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    n, name = mark
    ok = _criteria.get(n, (name, True))[1] and not (report.failed or report.skipped)
    _criteria[n] = (name, ok)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        name, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}")
