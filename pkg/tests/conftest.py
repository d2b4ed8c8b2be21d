import numpy as np
import pytest

from proxistrata.data import validate_dataset
from proxistrata.simulation import DgpConfig, generate


@pytest.fixture(scope="session")
def tiny_dataset():
    """Four units covering all (z, s) cells."""
    return validate_dataset(
        z=[0, 0, 1, 1],
        s=[0, 1, 0, 1],
        y=[0.1, 0.7, -0.2, 1.3],
        a=[0.5, -0.3, 0.2, 0.9],
        w=[1.0, 0.4, 0.8, 1.5],
        c=[[0.1], [-0.4], [0.0], [0.6]],
    )


@pytest.fixture(scope="session")
def bench_config():
    """Benchmark generator settings, moderate confounding."""
    return DgpConfig(n=5000, zeta_u=0.2, seed=11)


@pytest.fixture(scope="session")
def bench_latent(bench_config):
    return generate(bench_config)


@pytest.fixture(scope="session")
def big_latent():
    """One large draw shared by the consistency-style tests."""
    return generate(DgpConfig(n=50_000, zeta_u=0.2, seed=7))
