"""Shared fixtures: small dense and FIJL systems and a few seeded instances."""

import numpy as np
import pytest

from app.config import Settings
from app.models.schemas import OperatorSpec, RunConfig
from app.services.operators import FijlSpec, build_dense, build_fijl
from app.services.oracle import make_instance


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dense_op():
    """n=256, m=64, kappa=10: materializable and well enough conditioned for exact checks."""
    return build_dense(256, 64, 10.0, seed=3)


@pytest.fixture(scope="session")
def fijl_op():
    return build_fijl(FijlSpec(n=1024, m=256, kappa=100.0, seed=5))


@pytest.fixture(scope="session")
def dense_instance(dense_op):
    return make_instance(dense_op, sparsity=0.1, snr_db=40.0, seed=0)


@pytest.fixture(scope="session")
def small_instance():
    """n=2048, delta=0.5, kappa=10 FIJL system at 30 dB."""
    op = build_fijl(FijlSpec(n=2048, m=1024, kappa=10.0, seed=11))
    return make_instance(op, sparsity=0.1, snr_db=30.0, seed=7)


@pytest.fixture
def small_config(small_instance):
    op = small_instance.operator
    return RunConfig(
        operator=OperatorSpec(kind="fijl", n=op.n, m=op.m, kappa=10.0, seed=op.seed),
        snr_db=30.0,
        t_max=5,
        seed=7,
    )


@pytest.fixture
def settings(tmp_path):
    return Settings(signal_dim=1024, delta=0.25, kappa=10.0, t_max=3, output_dir=str(tmp_path))
