import numpy as np
import pytest

from planeprompt.config import BackboneConfig, SceneConfig
from planeprompt.data import generate_synthetic_scene

TINY = BackboneConfig(
    image_size=32, patch_size=8, embed_dim=32, blocks=2, heads=2, cnn_channels=4
)

SMALL = BackboneConfig(
    image_size=64, patch_size=8, embed_dim=64, blocks=4, heads=2, cnn_channels=8
)


@pytest.fixture
def tiny_cfg():
    return BackboneConfig(**TINY.__dict__)


@pytest.fixture
def small_cfg():
    return BackboneConfig(**SMALL.__dict__)


@pytest.fixture
def tiny_scene_cfg():
    return SceneConfig(size=32, planes_min=2, planes_max=3)


@pytest.fixture
def scene64():
    cfg = SceneConfig(size=64, planes_min=2, planes_max=4)
    return generate_synthetic_scene(42, cfg)


@pytest.fixture
def dataset64():
    cfg = SceneConfig(size=64, planes_min=2, planes_max=4)
    return [generate_synthetic_scene(200 + i, cfg) for i in range(4)]


def random_partition(rng: np.random.Generator, shape=(8, 8), max_labels=4) -> np.ndarray:
    return rng.integers(0, max_labels, size=shape).astype(np.int64)
