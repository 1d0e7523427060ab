import numpy as np
import pytest

from hocsearch.synth import SceneSpec, gen_database, gen_scene


@pytest.fixture(scope="session")
def small_db():
    return gen_database(count=12, seed=0)


@pytest.fixture(scope="session")
def clean_scene(small_db):
    return gen_scene(small_db, SceneSpec(gt_shape=3, seed=1), name="clean")


@pytest.fixture(scope="session")
def noisy_scene(small_db):
    spec = SceneSpec(gt_shape=7, seed=2, sigma=0.01, dropout=0.2, occluders=0.2)
    return gen_scene(small_db, spec, name="noisy")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
