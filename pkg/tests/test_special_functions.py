import math

import numpy as np
import pytest
from scipy.special import gammaln

from toda_cft.core.errors import InputError
from toda_cft.core.special_functions import gamma, log_gamma


@pytest.mark.parametrize("n", range(1, 15))
def test_gamma_at_integers(n):
    assert gamma(n) == pytest.approx(math.factorial(n - 1), rel=1e-13)


def test_gamma_at_half_integers():
    assert gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)
    assert gamma(2.5) == pytest.approx(0.75 * math.sqrt(math.pi), rel=1e-13)


def test_log_gamma_against_scipy():
    x = np.concatenate([np.linspace(1e-3, 0.5, 50), np.linspace(0.5, 200.0, 400)])
    np.testing.assert_allclose(log_gamma(x), gammaln(x), rtol=1e-12, atol=1e-13)


def test_log_gamma_returns_float_for_scalars():
    assert isinstance(log_gamma(3.0), float)


@pytest.mark.parametrize("x", [0.0, -1.5, float("nan")])
def test_log_gamma_rejects_nonpositive(x):
    with pytest.raises(InputError):
        log_gamma(x)
