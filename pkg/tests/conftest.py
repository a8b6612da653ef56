import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from froq.backend import load_model
from froq.synthetic import bundled_model_path, write_calibration_set

_ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    """Record one acceptance criterion outcome for the terminal summary."""

    def record(cid, ok, detail=""):
        _ACCEPTANCE.append((cid, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {cid}: {detail}")


class MockSession:
    """Stand-in backend: the embedding is the 4x4 block-mean of the image."""

    def __init__(self, side=112, model_identity="mock-model"):
        self.input_size = (side, side)
        self.model_identity = model_identity
        self.pass_counter = 0

    def preprocess(self, image):
        return np.asarray(image, dtype=np.float64)

    def run(self, x):
        self.pass_counter += 1
        h, w, _ = x.shape
        k = 4 if h % 4 == 0 else 1
        emb = x.reshape(h // k, k, w // k, k, 3).mean(axis=(1, 3)).ravel()
        return emb, {}

    def embed(self, image):
        return self.run(self.preprocess(image))[0]


class ConstantSession(MockSession):
    """Embedding ignores the input entirely."""

    def run(self, x):
        self.pass_counter += 1
        return np.array([1.0, 2.0, 3.0]), {}


@pytest.fixture
def mock_session():
    return MockSession()


@pytest.fixture(scope="session")
def tiny_model():
    return bundled_model_path()


@pytest.fixture
def session(tiny_model):
    return load_model(tiny_model)


@pytest.fixture(scope="session")
def calib_set(tmp_path_factory):
    """The 30-image synthetic calibration set plus its pairs file."""
    root = tmp_path_factory.mktemp("calib")
    paths, pairs = write_calibration_set(root)
    return [str(p) for p in paths], pairs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, side=112):
    return rng.random((side, side, 3))


def symmetric_image(rng, side=112):
    half = rng.random((side, side // 2, 3))
    return np.concatenate([half, half[:, ::-1]], axis=1)
