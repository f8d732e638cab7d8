import os

os.environ.setdefault("POLYPSEG_PROGRESS", "false")
os.environ.setdefault("POLYPSEG_LOG_LEVEL", "WARNING")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
import torch  # noqa: E402

from polypseg.schemas.model import ModelConfig  # noqa: E402
from polypseg.schemas.training import DataConfig, TrainConfig  # noqa: E402
from polypseg.services.data_pipeline import synth_dataset  # noqa: E402


@pytest.fixture(autouse=True)
def seeded():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def desk_config():
    return ModelConfig.desk()


@pytest.fixture
def desk_data(tmp_path):
    return DataConfig(root=tmp_path / "data", train_dataset="synthetic",
                      test_datasets=["synthetic"], image_size=64)


@pytest.fixture
def desk_train():
    return TrainConfig(lr=1e-3, epochs=1, batch=4, image_size=64, scales=[1.0],
                       max_iterations=2, val_fraction=0.0)


@pytest.fixture
def synthetic(tmp_path):
    """Eight 64×64 blob images under tmp_path/data/synthetic"""
    return synth_dataset(8, seed=0, root=tmp_path / "data", size=64)


@pytest.fixture
def binary_pair(rng):
    gt = np.zeros((16, 16))
    gt[4:10, 5:12] = 1.0
    pred = np.clip(gt * 0.8 + rng.uniform(0, 0.3, size=gt.shape), 0, 1)
    return pred, gt
