import numpy as np
import pytest

from boxseg.model import ModelConfig
from boxseg.scene import BACKGROUND, Instance, Scene, SceneConfig, generate_scene

TINY_SCENE = SceneConfig(k_range=(2, 3), points_per_instance=(6, 8), background_points=4,
                         room_extent=(2.0, 2.0, 1.0), overlap_range=(0.05, 0.95),
                         sigma_range=(0.15, 0.3), attach_prob=1.0, max_retries=200)
TINY_MODEL = ModelConfig(feature_dim=8, decoder_layers=2, num_queries=6, attention_heads=2,
                         ffn_dim=16, num_classes=4, fourier_freqs=2)


def tiny_scene(seed=0):
    return generate_scene(TINY_SCENE, seed)


@pytest.fixture
def scene30():
    s = tiny_scene(3)
    assert s.num_points <= 30
    return s


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def hand_scene():
    """Three boxes; box 0 alone on the left, boxes 1 and 2 share x in [2, 3]."""
    inst = [Instance(np.array([0.0, 0, 0]), np.array([1.0, 1, 1]), 0),
            Instance(np.array([1.5, 0, 0]), np.array([3.0, 1, 1]), 1),
            Instance(np.array([2.0, 0, 0]), np.array([4.0, 1, 1]), 2)]
    xyz = np.array([[0.5, 0.5, 0.5],    # single(0)
                    [2.5, 0.5, 0.5],    # overlap {1, 2}
                    [5.0, 5.0, 5.0],    # background
                    [1.5, 0.0, 0.0],    # on box 1's corner: single(1), inclusive
                    [3.0, 1.0, 1.0]])   # on box 1's max corner and inside box 2
    gt = np.array([0, 2, BACKGROUND, 1, 1])
    pts = np.concatenate([xyz, np.full((5, 3), 0.5)], axis=1)
    return Scene(pts, gt, inst)
