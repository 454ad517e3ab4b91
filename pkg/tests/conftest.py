import numpy as np
import pytest

from twoscale.model import linear_test_model


@pytest.fixture
def lin8():
    return linear_test_model(N=8)


@pytest.fixture
def e1_8():
    return np.eye(8)[0]


def zero_model(N=8, **kw):
    """Linear catalog model with every reaction and noise term switched off."""
    params = dict(b1_slow=0.0, b1_fast=0.0, b2_slow=0.0, b2_fast=0.0, g1_const=0.0, g2_const=0.0)
    params.update(kw)
    return linear_test_model(N=N, **params)
