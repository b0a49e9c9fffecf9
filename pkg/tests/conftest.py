import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparsegain.ingest import SynthConfig, synth_generate
from sparsegain.tensor import PerfTensor

settings.register_profile("ci", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=15, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def small_tensor():
    # 2 learners x 2 questions x 3 attempts, hand written
    nan = np.nan
    v = np.array([
        [[1, 0, nan], [nan, 1, 1]],
        [[0, nan, nan], [1, 1, nan]],
    ], dtype=float)
    return PerfTensor(v, ("a", "b"), ("q1", "q2"))


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(SynthConfig(u_count=24, n_count=5, m_count=4, seed=3))


def rank2_tensor(U=50, N=10, M=5, seed=0):
    """Noiseless rank-2 CP tensor with entries in [0, 1]."""
    rng = np.random.default_rng(seed)
    A, B, C = rng.uniform(0.2, 1.0, (U, 2)), rng.uniform(0.2, 1.0, (N, 2)), rng.uniform(0.2, 1.0, (M, 2))
    X = np.einsum("uk,ik,mk->uim", A, B, C)
    return X / X.max()
