import numpy as np
import pytest

from models import Detection, LossConfig, ScenarioSpec, TrackerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def loss_cfg():
    return LossConfig()


@pytest.fixture
def tracker_cfg():
    return TrackerConfig()


@pytest.fixture
def noise_free_spec():
    return ScenarioSpec(seed=7, num_identities=20, num_frames=100, embed_noise=0.0)


@pytest.fixture
def make_detection():
    """Factory for a detection with a one-hot (or given) embedding."""

    def _make(box=(10.0, 10.0, 8.0, 16.0), frame=0, embedding=None, confidence=0.9, dim=8, hot=0):
        if embedding is None:
            embedding = np.zeros(dim)
            embedding[hot] = 1.0
        return Detection(frame=frame, box=box, confidence=confidence, embedding=embedding)

    return _make


@pytest.fixture
def unit_columns():
    """Factory for a D x n matrix with unit columns drawn from a seeded generator."""

    def _make(dim, count, seed=0):
        data = np.random.default_rng(seed).standard_normal((dim, count))
        return data / np.linalg.norm(data, axis=0)

    return _make
