import numpy as np

from toda_cft.core.errors import InputError

# Lanczos approximation, g = 7, nine terms; relative error near 1e-15 on the
# positive real axis.
_LANCZOS_G = 7.0
_LANCZOS_COEFFICIENTS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)


def _log_gamma_right(x):
    # valid for x >= 0.5
    z = x - 1.0
    series = np.full_like(z, _LANCZOS_COEFFICIENTS[0])
    for i, coefficient in enumerate(_LANCZOS_COEFFICIENTS[1:], start=1):
        series = series + coefficient / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_TWO_PI + (z + 0.5) * np.log(t) - t + np.log(series)


def log_gamma(x):
    """ln Gamma(x) for real x > 0, scalar or array."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise InputError("log_gamma is only defined here for positive arguments")
    # reflection keeps the series on its accurate half-line
    small = arr < 0.5
    safe = np.where(small, 1.0 - arr, arr)
    result = _log_gamma_right(safe)
    reflected = np.log(np.pi) - np.log(np.sin(np.pi * arr)) - result
    result = np.where(small, reflected, result)
    return float(result) if np.ndim(x) == 0 else result


def gamma(x):
    """Gamma(x) for real x > 0."""
    return np.exp(log_gamma(x))
