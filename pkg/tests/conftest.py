import pytest

from greencast.minicube import ForecastConfig
from greencast.synthgen import GeneratorConfig, generate_minicube


@pytest.fixture
def small_gen_cfg():
    return GeneratorConfig(seed=11, H=16, W=16, n=6, k=3, season_length=12,
                           nonveg_fraction=0.2, p_cloud=0.2)


@pytest.fixture
def small_cube(small_gen_cfg):
    return generate_minicube(small_gen_cfg, 0)


@pytest.fixture
def small_cfg():
    return ForecastConfig(n=6, k=3, H=16, W=16, hidden_channels=4, seed=3)


@pytest.fixture
def make_cube():
    def build(**overrides):
        defaults = dict(seed=5, H=16, W=16, n=6, k=3, season_length=12)
        defaults.update(overrides)
        return generate_minicube(GeneratorConfig(**defaults), 0)
    return build
