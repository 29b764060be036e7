import pytest

from gazesnn import tensor as tn


@pytest.fixture(autouse=True)
def clean_tape():
    """Each test starts and ends with an empty gradient tape."""
    tn.active_tape().clear()
    yield
    tn.active_tape().clear()
