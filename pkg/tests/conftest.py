import numpy as np
import pytest

from sonoshadow.network import ArchConfig
from sonoshadow.phantom import build_corpus, default_spec


@pytest.fixture
def make_corpus(tmp_path):
    """Factory writing a small phantom corpus under the test's tmp dir."""

    def build(n_train=12, n_eval=4, size=16, seed=5, name="corpus", spec=None):
        spec = spec if spec is not None else default_spec(size, size)
        out = tmp_path / name
        return build_corpus(spec, n_train, n_eval, seed, out)

    return build


@pytest.fixture
def small_arch():
    """16x16 two-layer stack: cheap enough for gradient and trainer tests."""
    return ArchConfig(input_size=(16, 16), enc_channels=(8, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
