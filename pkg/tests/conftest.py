import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int(str(k).split(".")[0]), str(k))):
        status, desc, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{status}] {key}: {desc} {detail}".rstrip())


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ILPBINOM_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended run; set ILPBINOM_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)
