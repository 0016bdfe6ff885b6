"""Shared fixtures and the run-wide certificate recorder.

Every ``optimal`` solution produced by the interior-point solver during the
session is re-verified with ``check_solution``; the acceptance test for
solver certificates inspects the record at the end of the run.
"""
from importlib.resources import files

import numpy as np
import pytest

import miqcqp.sdp.solver as solver_mod
from miqcqp.io import parse_matpower, parse_uc_json

CERTIFICATES = {"checked": 0, "failures": []}
VERDICTS: dict[int, str] = {}

_hsde = solver_mod._hsde


def _recording_hsde(problem, sf, plan, settings):
    sol = _hsde(problem, sf, plan, settings)
    if sol.status == "optimal":
        CERTIFICATES["checked"] += 1
        errs = solver_mod.check_solution(problem, sol)
        if errs:
            CERTIFICATES["failures"].append(errs[:3])
    return sol


solver_mod._hsde = _recording_hsde


def pytest_collection_modifyitems(session, config, items):
    # the certificate audit must see every solve of the run
    last = [it for it in items if "certificate_audit" in it.name]
    rest = [it for it in items if "certificate_audit" not in it.name]
    items[:] = rest + last


def record_verdict(number: int, ok: bool, detail: str) -> None:
    """Print and keep the one-line verdict of an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])


def load_bundled(name: str, uc_name: str | None = None):
    d = files("miqcqp.data")
    case = parse_matpower(d.joinpath(name + ".m").read_text(), name)
    if uc_name is None:
        return case, None
    return case, parse_uc_json(d.joinpath(uc_name + ".json").read_text(), case)


@pytest.fixture(scope="session")
def case6():
    return load_bundled("case6ww", "uc6")


@pytest.fixture(scope="session")
def case118():
    return load_bundled("case118", "uc118")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
