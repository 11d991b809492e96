"""Digamma/trigamma for compiled kernels.

scipy's ufuncs cannot be called from numba code, and ``scipy.special.zeta``
is slow for the trigamma case, so both are implemented here by upward
recurrence to x >= 12 followed by the asymptotic series (|rel err| < 1e-13
for x > 0, see tests).
"""
import math

import numba
import numpy as np


@numba.njit(cache=True)
def digamma_scalar(x):
    if not x > 0.0:
        return np.nan
    acc = 0.0
    while x < 12.0:
        acc -= 1.0 / x
        x += 1.0
    ix2 = 1.0 / (x * x)
    series = ix2 * (1.0 / 12.0 - ix2 * (1.0 / 120.0 - ix2 * (
        1.0 / 252.0 - ix2 * (1.0 / 240.0 - ix2 / 132.0))))
    return acc + math.log(x) - 0.5 / x - series


@numba.njit(cache=True)
def trigamma_scalar(x):
    if not x > 0.0:
        return np.nan
    acc = 0.0
    while x < 12.0:
        acc += 1.0 / (x * x)
        x += 1.0
    ix2 = 1.0 / (x * x)
    series = (1.0 / 6.0 - ix2 * (1.0 / 30.0 - ix2 * (1.0 / 42.0 - ix2 * (
        1.0 / 30.0 - ix2 * 5.0 / 66.0)))) * ix2 / x
    return acc + 1.0 / x + 0.5 * ix2 + series


@numba.vectorize(["float64(float64)"], cache=True)
def trigamma(x):
    return trigamma_scalar(x)


@numba.vectorize(["float64(float64)"], cache=True)
def digamma(x):
    return digamma_scalar(x)


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@numba.njit(cache=True)
def gamma_family(x):
    """``(lgamma(x), digamma(x), trigamma(x))`` from one shared recurrence."""
    if not x > 0.0:
        return np.nan, np.nan, np.nan
    dg = 0.0
    tg = 0.0
    log_prod = 0.0
    prod = 1.0
    while x < 12.0:
        ix = 1.0 / x
        dg -= ix
        tg += ix * ix
        prod *= x
        if prod < 1e-250:
            log_prod += math.log(prod)
            prod = 1.0
        x += 1.0
    log_prod += math.log(prod)
    lx = math.log(x)
    ix = 1.0 / x
    ix2 = ix * ix
    lg = (x - 0.5) * lx - x + _HALF_LOG_2PI + ix * (1.0 / 12.0 - ix2 * (
        1.0 / 360.0 - ix2 * (1.0 / 1260.0 - ix2 * (1.0 / 1680.0 - ix2 / 1188.0))))
    dg += lx - 0.5 * ix - ix2 * (1.0 / 12.0 - ix2 * (1.0 / 120.0 - ix2 * (
        1.0 / 252.0 - ix2 * (1.0 / 240.0 - ix2 / 132.0))))
    tg += ix + 0.5 * ix2 + (1.0 / 6.0 - ix2 * (1.0 / 30.0 - ix2 * (1.0 / 42.0 - ix2 * (
        1.0 / 30.0 - ix2 * 5.0 / 66.0)))) * ix2 * ix
    return lg - log_prod, dg, tg
