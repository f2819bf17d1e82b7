import random

import pytest

from epic.crypto import GroupParams, MockBackend, get_backend
from epic.system import SystemConfig, provision

# Backends under test.  A real pairing backend registered via
# epic.crypto.register_backend is picked up automatically.
BACKEND_NAMES = ["mock", "mock-small"]


@pytest.fixture(scope="session")
def backend():
    """Compat-parameter mock backend (full-size primes)."""
    return get_backend("mock")


@pytest.fixture(scope="session")
def small_backend():
    return get_backend("mock-small")


@pytest.fixture(params=BACKEND_NAMES, scope="session")
def any_backend(request):
    return get_backend(request.param)


@pytest.fixture
def rng():
    return random.Random(0xEB1C)


def make_system(n_meters=5, lam=2, seed=1, **kw):
    kw.setdefault("slots_per_day", 8)
    kw.setdefault("periods_per_day", 2)
    cfg = SystemConfig(n_meters=n_meters, proxies_per_meter=lam, **kw)
    return provision(cfg, seed=seed)


@pytest.fixture
def small_system():
    return make_system()
