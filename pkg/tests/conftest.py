import numpy as np
import pytest

from edapipe import acquisition
from edapipe.features import assemble_dataset
from edapipe.signal import process_session


@pytest.fixture(scope="session")
def cohort4():
    """Small simulated cohort shared by pipeline-level tests."""
    records = acquisition.simulate_cohort(4, seed=11)
    processed = [process_session(r) for r in records]
    return records, processed, assemble_dataset(processed)


@pytest.fixture(scope="session")
def cohort15_dataset():
    """The default-size cohort's dataset (simulation is cheap, models are not)."""
    records = acquisition.simulate_cohort(15, seed=7)
    return assemble_dataset([process_session(r) for r in records])


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
