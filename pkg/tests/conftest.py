import os
from collections import defaultdict

import pytest

_OUTCOMES = defaultdict(list)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="also run benchmarks marked slow (or set GPBARRIER_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("GPBARRIER_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow benchmark; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.failed or rep.skipped)):
        _OUTCOMES[mark.args[0]].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        results = _OUTCOMES[n]
        if any(o == "failed" for _, o in results):
            status = "FAIL"
        elif all(o == "skipped" for _, o in results):
            status = "SKIPPED"
        else:
            status = "PASS"
        names = ", ".join(f"{name} {o}" for name, o in results)
        terminalreporter.write_line(f"criterion {n}: {status} ({names})")
