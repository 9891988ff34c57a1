import numpy as np
import pytest
import torch


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def torch_gen() -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(12345)
    return g
