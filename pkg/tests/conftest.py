import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    key = f"{num}:{item.name}"
    if report.when == "call" or report.failed:
        status = "PASS" if report.passed else "FAIL"
        detail = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in item.user_properties)
        if report.failed:
            detail = str(report.longrepr).strip().splitlines()[-1][:120]
        if _ACCEPTANCE.get(key, ("PASS",))[0] != "FAIL":
            suffix = f" [{item.callspec.id}]" if hasattr(item, "callspec") else ""
            _ACCEPTANCE[key] = (status, f"{num} {title}{suffix}", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        status, label, detail = _ACCEPTANCE[key]
        line = f"{status}  criterion {label}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
