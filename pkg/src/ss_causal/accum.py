"""Compensated accumulation helpers.

All population-level averages and variances in the estimators are computed
through these functions so that results are bit-stable regardless of how the
surrounding work is parallelized. ``math.fsum`` performs exact compensated
summation (Shewchuk's algorithm), which is strictly stronger than plain Kahan
accumulation and, being exactly rounded, is independent of summation order.
"""

import math

import numpy as np


def csum(values) -> float:
    """Exactly rounded sum of a 1-d array or iterable of floats."""
    return math.fsum(np.asarray(values, dtype=float).ravel())


def cmean(values) -> float:
    """Compensated arithmetic mean."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("mean of empty sequence")
    return math.fsum(arr) / arr.size


def cvar(values) -> float:
    """Divide-by-n variance, E(g^2) - (E g)^2, compensated.

    Computed around the mean for numerical safety; algebraically identical to
    the moment form and clipped at zero against roundoff.
    """
    arr = np.asarray(values, dtype=float).ravel()
    m = cmean(arr)
    v = math.fsum((arr - m) ** 2) / arr.size
    return max(v, 0.0)
