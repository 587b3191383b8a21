import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from viewforge.backends import BackendDescriptor, TraceLog, make_stub_backend
from viewforge.config import stub_config
from viewforge.images import save_png

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def vehicle_raster(seed: int = 0, size: int = 96) -> np.ndarray:
    """Deterministic RGB test photo: bright body on flat background.

    The uniform border lets the stub segmenter find the foreground.
    """
    rng = np.random.default_rng(seed)
    img = np.full((size, size, 3), 40, dtype=np.uint8)
    h0, h1 = size // 3, 2 * size // 3
    w0, w1 = size // 5, 4 * size // 5
    body = rng.integers(120, 250, size=3)
    img[h0:h1, w0:w1] = body
    img[h0 - size // 12 : h0, size // 3 : 2 * size // 3] = body // 2
    return img


@pytest.fixture
def car_raster():
    return vehicle_raster()


@pytest.fixture
def car_path(tmp_path, car_raster):
    path = tmp_path / "car.png"
    save_png(path, car_raster)
    return path


@pytest.fixture
def make_config(tmp_path):
    """Factory for stub-backed configs with a fresh cache dir each call."""
    counter = [0]

    def factory(**overrides):
        counter[0] += 1
        cache = tmp_path / f"cache{counter[0]}"
        return stub_config(cache, **overrides)

    return factory


@pytest.fixture
def stub_cfg(make_config):
    return make_config()


def stub_backend(kind: str, trace: TraceLog | None = None):
    return make_stub_backend(BackendDescriptor(kind=kind), trace=trace)


@pytest.fixture
def stub_for():
    """backend_for callable resolving every descriptor to a plain stub."""
    return lambda d: make_stub_backend(d)
