import numpy as np
import pytest

from agegrad.data import gen_synthetic
from agegrad.model import ModelSpec


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A small deterministic synthetic dataset shared across tests."""
    d = tmp_path_factory.mktemp("synth")
    gen_synthetic(64, seed=123, out_dir=str(d))
    return d


@pytest.fixture(scope="session")
def synth_manifest(synth_dir):
    return str(synth_dir / "manifest.csv")


def tiny_hybrid_spec(**overrides) -> ModelSpec:
    """Smallest hybrid that exercises every architectural piece."""
    base = dict(
        variant="hybrid",
        input_size=32,
        stage_depths=(1, 1, 1, 1),
        stage_dims=(8, 16, 32, 64),
        encoder_blocks=2,
        token_dim=16,
        token_count=4,
        num_heads=2,
        head_layers=1,
    )
    base.update(overrides)
    return ModelSpec(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
