import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zkagg import he  # noqa: E402
from zkagg.harness import fixtures as fxm  # noqa: E402


@pytest.fixture(scope="session")
def small_key():
    """256-bit toy key; fast enough for exhaustive tests."""
    return he.keygen(256, 1, b"tests-small", allow_small=True)


@pytest.fixture(scope="session")
def key1024():
    return he.keygen(1024, 1, b"tests-1024")


@pytest.fixture(scope="session")
def fixtures0():
    return fxm.make_fixtures(0)


@pytest.fixture(scope="session")
def toy_spec(fixtures0):
    return fxm.circuit_for(fixtures0, fxm.toy_validation(fixtures0, 16))


@pytest.fixture(scope="session")
def full_spec(fixtures0):
    return fxm.circuit_for(fixtures0)
