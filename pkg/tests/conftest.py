import numpy as np
import pytest
from hypothesis import settings, strategies as st

from marm.kinematics import Configuration
from marm.model import DesignParams, build_model, make_template
from marm.spatial import quat_from_rotvec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

TEMPLATES = [(6, "offset"), (6, "inline"), (7, "offset")]


@pytest.fixture(scope="session")
def template():
    return make_template(6, "offset")


@pytest.fixture(scope="session")
def model(template):
    return build_model(template, DesignParams(0.5, 0.5))


def random_configuration(model, rng, spread=1.0):
    """Random base pose and in-limit joints."""
    lo, hi = model.lower, model.upper
    mid, half = (lo + hi) / 2, (hi - lo) / 2 * spread
    joints = rng.uniform(mid - half, mid + half)
    quat = quat_from_rotvec(rng.normal(size=3))
    return Configuration(rng.normal(scale=0.5, size=3) + [0, 0, 0.8], quat, joints)


lengths = st.floats(0.15, 0.8, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
