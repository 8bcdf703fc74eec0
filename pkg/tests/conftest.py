import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _reset_dtype():
    # each test starts and ends in float32 mode regardless of failures
    from tain import autograd as ag

    ag.set_default_dtype(np.float32)
    yield
    ag.set_default_dtype(np.float32)
