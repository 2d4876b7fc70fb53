import random

import numpy as np
import pytest

from privlogit import paillier
from privlogit.core import Dataset, sigmoid

# acceptance outcomes, printed once at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def make_data(n, p, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = rng.uniform(-scale, scale, p)
    y = (rng.random(n) < sigmoid(x @ beta)).astype(float)
    return Dataset(x, y)


@pytest.fixture(scope="session")
def keypair():
    """One 1024-bit test key for the whole run (seeded)."""
    return paillier.keygen(1024, random.Random(20240607))
