import numpy as np
import pytest

from rastercast.corpus import to_geo_message
from rastercast.raster import derive_labels
from rastercast.synth import ScenarioSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20170830)


@pytest.fixture(scope="session")
def small_scenario():
    """A 30x30 scenario: heights, labels, raw and preprocessed messages."""
    spec = ScenarioSpec(n_rows=30, n_cols=30, n_messages=900, seed=3)
    scenario = generate(spec)
    geo = [to_geo_message(m, spec.start_date) for m in scenario.messages]
    return scenario, derive_labels(scenario.heights), geo
