import pytest

from inkwell.synthetic import make_reviews
from inkwell.trainer import TrainConfig, train


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small planted-keyword corpus shared by tests that only need shape."""
    return make_reviews(n_train=40, n_val=16, n_test=16, seed=11)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_dataset):
    """A cheap trained model; quality is incidental, determinism is not."""
    config = TrainConfig(epochs=2, seed=3, embed_dim=12, hidden_dim=12)
    return train(tiny_dataset, config)
