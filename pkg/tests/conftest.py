import numpy as np
import pytest

from beamprior.codebook import dft_codebook
from beamprior.dataset import build_dataset, split_dataset
from beamprior.scene import SceneConfig, generate_scene

SMALL_SCENE = SceneConfig(x_range=(5.0, 45.0), y_range=(-20.0, 20.0), grid_step=2.0)


@pytest.fixture(scope="session")
def default_scene():
    return generate_scene(SceneConfig(), seed=7)


@pytest.fixture(scope="session")
def default_dataset(default_scene):
    ds = build_dataset(default_scene, dft_codebook(32, 8))
    return split_dataset(ds, 0.9, seed=0)


@pytest.fixture(scope="session")
def small_dataset():
    scene = generate_scene(SMALL_SCENE, seed=7)
    return split_dataset(build_dataset(scene, dft_codebook(32, 8)), 0.9, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
