import pytest

from cascadeid.bench import default_model


@pytest.fixture(scope="session")
def model():
    """The built-in benchmark cascade (noise variances 2 and 3)."""
    return default_model()


@pytest.fixture(scope="session")
def theta_true(model):
    return model.theta()
