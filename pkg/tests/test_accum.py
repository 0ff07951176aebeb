import math

import numpy as np
import pytest

from ss_causal.accum import cmean, csum, cvar


def test_csum_matches_fsum_on_adversarial_magnitudes():
    values = [1e16, 1.0, -1e16, 1.0, 3.14, -2.71] * 100
    assert csum(values) == math.fsum(values)


def test_csum_is_order_independent():
    rng = np.random.default_rng(7)
    values = rng.standard_normal(1000) * 10.0 ** rng.integers(-8, 8, size=1000)
    shuffled = values.copy()
    rng.shuffle(shuffled)
    assert csum(values) == csum(shuffled)


def test_cmean_simple():
    assert cmean([1.0, 2.0, 3.0]) == 2.0


def test_cmean_empty_raises():
    with pytest.raises(ValueError):
        cmean([])


def test_cvar_matches_moment_formula():
    rng = np.random.default_rng(3)
    g = rng.standard_normal(500)
    expected = float(np.mean(g**2) - np.mean(g) ** 2)
    assert cvar(g) == pytest.approx(expected, abs=1e-12)


def test_cvar_constant_is_zero():
    assert cvar([4.0] * 50) == 0.0


def test_cvar_never_negative_under_roundoff():
    assert cvar(np.full(100, 1e8 + 0.1)) >= 0.0
