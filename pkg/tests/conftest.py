import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Small architecture used by unit tests that exercise wiring, not capacity.
TINY_MODEL = dict(
    flow_feature_dim=8,
    key_channels=16,
    flow_channels=32,
    chosen_channels=24,
    fused_channels=24,
    semantic_channels=16,
    unet_widths=(16, 24, 32),
)


@pytest.fixture
def tiny_overrides():
    return dict(TINY_MODEL)
