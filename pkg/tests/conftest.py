import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_config():
    from platoon_edca.config import ScenarioConfig

    return ScenarioConfig()
