import pytest

from hopsim.cli import SimulationConfig, resolve_config


def make_config(model="arctangent", **overrides):
    """Resolved run config with model defaults plus test overrides."""
    cfg = resolve_config(SimulationConfig(model=model))
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture
def config_factory():
    return make_config
