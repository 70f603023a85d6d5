import pytest

from tandemtail import ModelParams, validate

SET_A = ModelParams(lam=(1.0, 0.5, 0.5), c=(2.0, 3.0, 4.0), sigma=(1.0, 1.0, 1.0))
SET_B = ModelParams(lam=(1.0, 0.5, 0.5), c=(2.0, 3.0, 3.6), sigma=(1.0, 1.0, 3.0))
# tangency in the third coordinate: c3 chosen so the fixed point meets the branch point
SET_T = ModelParams(lam=(1.0, 0.5, 0.5), c=(2.0, 3.0, 4.5), sigma=(1.0, 1.0, 3.0))


@pytest.fixture(scope="session")
def model_a():
    return validate(SET_A)


@pytest.fixture(scope="session")
def model_b():
    return validate(SET_B)


@pytest.fixture(scope="session")
def model_t():
    return validate(SET_T)
