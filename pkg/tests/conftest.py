import pytest

from shapey.engine import available_backends
from shapey.store import normalize
from shapey.synth import SyntheticConfig, generate


def pytest_addoption(parser):
    parser.addoption(
        "--skip-fullscale",
        action="store_true",
        default=False,
        help="skip the full-scale determinism/performance acceptance criterion",
    )


@pytest.fixture(params=available_backends())
def backend(request):
    """Run numeric tests under every built kernel backend."""
    return request.param


@pytest.fixture(scope="session")
def tiny_random():
    """4 categories x 3 objects, dim 16, both variants, random rows."""
    store, manifest = generate(SyntheticConfig(mode="random", seed=123))
    return normalize(store), manifest


@pytest.fixture(scope="session")
def tiny_ideal():
    store, manifest = generate(SyntheticConfig(mode="ideal", seed=42))
    return normalize(store), manifest


@pytest.fixture(scope="session")
def tiny_planted():
    config = SyntheticConfig(mode="planted-distractor", seed=7, planted_distance=3)
    store, manifest = generate(config)
    return normalize(store), manifest, config
