import json

import numpy as np
import pytest

from klsession.catalog import Catalog, fit_global_model
from klsession.simulator import synth_catalog


@pytest.fixture
def tiny_catalog():
    """Four items over color x size, written out by hand."""
    return Catalog.from_dict(
        {
            "properties": {"color": ["red", "blue"], "size": ["s", "m", "l"]},
            "items": [
                {"id": "a", "props": {"color": "red", "size": "s"}},
                {"id": "b", "props": {"color": "red", "size": "m"}},
                {"id": "c", "props": {"color": "blue", "size": "m"}},
                {"id": "d", "props": {"color": "blue", "size": "l"}},
            ],
        }
    )


@pytest.fixture
def tiny_global(tiny_catalog):
    return fit_global_model(tiny_catalog)


@pytest.fixture(scope="session")
def random_catalog():
    return synth_catalog(200, {"color": 6, "brand": 9, "size": 4}, seed=13)


@pytest.fixture
def write_json(tmp_path):
    def write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; a test that dies before recording counts as FAIL."""
    results = request.config.stash.setdefault(_CRITERIA, {})
    recorded = []

    def record(number, title, passed, detail=""):
        results[number] = (title, bool(passed), detail)
        recorded.append(number)
        return passed

    yield record
    if not recorded:
        results[request.node.name] = (request.node.name, False, "did not complete")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results, key=str):
        title, passed, detail = results[number]
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
