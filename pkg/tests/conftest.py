from importlib import resources

import pytest

from tfqkd.ledger import read_ledger_csv


def data_path(name: str):
    return resources.files("tfqkd") / "data" / name


def column(name: str, km: float):
    return next(l for l in read_ledger_csv(data_path(name)) if abs(l.fibre_length_km - km) < 1e-3)


@pytest.fixture
def sns_ledger():
    return read_ledger_csv(data_path("sns_asymptotic.csv"))[0]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.result_line(n))
