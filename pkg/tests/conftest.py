import copy
import json

import pytest

from sdivn import S, bundled_scenario, load_topology, run


def scenario_doc(name: str) -> dict:
    return json.loads(bundled_scenario(name).read_text())


def diamond_doc(**overrides) -> dict:
    doc = scenario_doc("sdivn_diamond.json")
    doc.update(copy.deepcopy(overrides))
    return doc


@pytest.fixture(scope="session")
def diamond():
    return load_topology(bundled_scenario("sdivn_diamond.json"))


@pytest.fixture(scope="session")
def diamond_failure(diamond):
    return run(diamond)


@pytest.fixture(scope="session")
def diamond_normal(diamond):
    return run(diamond, failures=[])


@pytest.fixture(scope="session")
def livn_severed():
    return run(load_topology(bundled_scenario("livn_bus.json")))


@pytest.fixture(scope="session")
def livn_ring():
    return run(load_topology(bundled_scenario("livn_ring.json")))


@pytest.fixture(scope="session")
def livn_chain():
    return run(load_topology(bundled_scenario("livn_chain.json")))


# acceptance verdicts, printed once at the end of the session
VERDICTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
