import numpy as np
import pytest
import torch

from dlsr.data_pipeline import SRDataset, synthetic_images
from dlsr.search_space import SupernetConfig

FIXTURES = "fixtures"


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(1234)


@pytest.fixture
def tiny_cfg() -> SupernetConfig:
    return SupernetConfig(channels=8, num_cells=2, scale=2)


@pytest.fixture(scope="session")
def toy_dataset() -> SRDataset:
    images = synthetic_images(8, size=48, seed=7)
    return SRDataset.from_arrays(images, scale=2, patch_size=16)


def random_image(rng: np.random.Generator, h: int, w: int, channels: int = 3):
    shape = (h, w) if channels == 1 else (h, w, channels)
    return rng.random(shape)
