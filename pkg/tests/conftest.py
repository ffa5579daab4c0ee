import json
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from layoutprior.layout import page_from_dict

DATA = Path(__file__).parent / "data"

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def c3_page():
    return page_from_dict(json.loads((DATA / "c3_detections.json").read_text()))


@pytest.fixture
def c3_prompt():
    return (DATA / "c3_prompt.txt").read_text()


@pytest.fixture
def c3_fragment(c3_prompt):
    """The ten element lines without instruction or wrapper."""
    return "\n".join(c3_prompt.splitlines()[2:-1])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
