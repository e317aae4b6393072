import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fixture_paths():
    return DATA / "fixture_consultations.csv", DATA / "fixture_physicians.csv"


@pytest.fixture
def fixture_data(fixture_paths):
    from refnet.ingest import load_consultations, load_physicians

    cons, phys = fixture_paths
    table, report = load_consultations(cons)
    profiles, census = load_physicians(phys)
    return table, profiles
