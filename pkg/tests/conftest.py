import sys
import os
# Add project root to path to ensure modules can be imported during testing
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
import numpy as np
import pytest

from core.config import GenConfig, RunConfig
from core.streams_fusion import FeatureStream, StageBoundaries, StreamId, make_sample
from etl.synthdata import generate


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "slow: multi-seed training experiments (deselect with -m 'not slow')")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_gen_cfg() -> GenConfig:
    """
    Small benchmark: T=5 snippets, D=8 features, 24 train / 12 test pairs.
    Big enough for every code path, small enough to train in a second.
    """
    return GenConfig(seed=0, n_train=24, n_test=12, snippets=5, feature_dim=8, mask_dim=3)


@pytest.fixture
def tiny_data(tiny_gen_cfg: GenConfig):
    return generate(tiny_gen_cfg)


@pytest.fixture
def tiny_run_cfg(tiny_gen_cfg: GenConfig) -> RunConfig:
    return RunConfig(variant="full", epochs=2, batch_size=4, seed=0, data=tiny_gen_cfg)


@pytest.fixture
def sample_factory():
    """Builds a random but valid sample; any field can be overridden."""

    def build(rng: np.random.Generator, snippets: int = 5, dim: int = 4, mask_dim: int = 2, **overrides):
        streams = {s: FeatureStream(s, rng.standard_normal((snippets, dim))) for s in StreamId}
        kwargs = dict(
            streams=streams,
            boundaries=StageBoundaries(1, snippets - 2) if snippets > 3 else StageBoundaries(1, 2),
            mask_targets=(rng.uniform(size=(snippets, mask_dim)) > 0.5).astype(float),
            y_query=float(rng.uniform(0, 100)),
            y_exemplar=float(rng.uniform(0, 100)),
        )
        kwargs.update(overrides)
        return make_sample(**kwargs)

    return build
