import numpy as np
import pytest

from nettdsr.regnet import build_network, tiny_unet
from nettdsr.sampling import SamplerSpec
from nettdsr.scenes import SceneSpec, build_dataset, generate_scenes
from nettdsr.trainer import TrainConfig, train


@pytest.fixture(scope="session")
def small_scenes():
    return generate_scenes(SceneSpec(), 20, master_seed=7)


@pytest.fixture(scope="session")
def trained_s2(small_scenes):
    """A tiny-unet briefly trained under scheme 2; good enough to be non-trivial."""
    recs = build_dataset(small_scenes, 2, SamplerSpec(), 32, 32, 0.5, seed=0)
    cfg = TrainConfig(scheme=2, epochs=2, batch_size=16, seed=0)
    weights, _ = train(recs, tiny_unet(final_skip=True), cfg)
    return weights


@pytest.fixture(scope="session")
def random_net():
    # final skip with a random (non-zero) head so the map is far from identity
    w = build_network(tiny_unet(final_skip=True), seed=3)
    w.params["head.weight"][:] = np.random.default_rng(3).normal(0, 0.3, w.params["head.weight"].shape)
    return w


# --- acceptance reporting ---------------------------------------------------------

_ACCEPTANCE: list[str] = []


class _Criterion:
    def __init__(self, key, title):
        self.key, self.title, self.detail = key, title, ""

    def __call__(self, detail):
        self.detail = detail

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.key}: {status} - {self.title}"
        if self.detail:
            line += f" [{self.detail}]"
        _ACCEPTANCE.append(line)
        print(line)
        return False


@pytest.fixture
def acceptance():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
