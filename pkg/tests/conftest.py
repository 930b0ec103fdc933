import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_membrane_dataset():
    from contactgnn.harness.scenes import SceneSpec, load_generated_dataset

    return load_generated_dataset(SceneSpec("undulating-membranes", n_sims=10, n_steps=4, resolution=5))
