import pytest

_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.failed):
        for key in report.keywords:
            if key.startswith("criterion_"):
                _RESULTS[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(k.split("_")[1])):
        status = "PASS" if _RESULTS[key] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status} criterion {key.split('_')[1]}: {_TITLES.get(key, '')}")


_TITLES = {
    "criterion_1": "Bellman operator laws",
    "criterion_2": "fixed-point identity by enumeration",
    "criterion_3": "surrogate domination",
    "criterion_4": "strong duality",
    "criterion_5": "algorithm convergence",
    "criterion_6": "safety guarantee",
    "criterion_7": "performance sandwich",
    "criterion_8": "zero-error collapse",
    "criterion_9": "determinism",
}


def pytest_configure(config):
    for key in _TITLES:
        config.addinivalue_line("markers", f"{key}: acceptance criterion {key.split('_')[1]}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
