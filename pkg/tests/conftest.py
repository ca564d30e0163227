import numpy as np
import pytest

from gazeforge import CohortSpec, generate_synthetic_cohort


@pytest.fixture(scope="session")
def small_cohort():
    """20 participants, no class effect, short recordings."""
    spec = CohortSpec(n_participants=20, duration_ms=8000.0, seed=101)
    return generate_synthetic_cohort(spec)


@pytest.fixture(scope="session")
def signal_cohort():
    """20 participants with a strong fixation-speed class effect."""
    spec = CohortSpec(
        n_participants=20,
        duration_ms=8000.0,
        seed=202,
        class_effect={"M": {"fixation_speed": 8.0}},
    )
    return generate_synthetic_cohort(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
