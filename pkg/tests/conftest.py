import numpy as np
import pytest
import torch

from scorevae.diffproc import SdeSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(20240607)


@pytest.fixture
def spec():
    return SdeSpec(0.1, 20.0, 1.0, 1)


def pytest_configure(config):
    torch.set_num_threads(1)


TINY = {
    "data.n_train": 400, "data.n_test": 16,
    "nets.prior_hidden": (16, 16), "nets.encoder_hidden": (16,), "nets.corrector_hidden": (16,),
    "nets.decoder_hidden": (16,), "nets.diffdecoder_hidden": (16,), "nets.time_features": 2,
    "optim.batch_size": 32, "optim.learning_rate": 1e-3,
    "optim.prior_iters": 30, "optim.encoder_iters": 30, "optim.corrector_iters": 20,
    "optim.vae_iters": 30, "optim.diffdecoder_iters": 30,
    "sampler.n_steps": 40,
}


@pytest.fixture
def tiny_cfg():
    from scorevae.harness.config import ExperimentConfig

    return ExperimentConfig().replace(**TINY)
