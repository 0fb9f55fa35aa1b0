import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def az_report():
    from kppfront.analysis import validate_az

    return validate_az(delta=0.01)


@pytest.fixture(scope="session")
def az_solution():
    from kppfront.charroots import ModelParams
    from kppfront.pipeline import solve

    return solve(ModelParams.from_epsilon(0.0, 0.24), keep=4)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Recorder printing one ``ACCEPTANCE n: PASS|FAIL`` line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(label, ok, detail):
        line = f"ACCEPTANCE {label}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
