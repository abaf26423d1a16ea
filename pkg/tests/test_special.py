import math
from fractions import Fraction

import pytest
import scipy.special
from hypothesis import given, settings, strategies as st

from enzlink.special import betainc


def _tail_exact(n, p, xi):
    # Pr(N >= xi) for N ~ Bin(n, p), summed in rationals
    p = Fraction(p)
    return float(sum(math.comb(n, w) * p**w * (1 - p) ** (n - w) for w in range(xi, n + 1)))


@pytest.mark.parametrize("n", [1, 2, 5, 13, 30])
@pytest.mark.parametrize("p", [1e-4, 0.03, 0.37, 0.5, 0.91])
def test_binomial_tail_matches_enumeration(n, p):
    for xi in range(1, n + 1):
        assert abs(betainc(xi, n - xi + 1, p) - _tail_exact(n, p, xi)) < 1e-12


@settings(max_examples=300)
@given(st.floats(0.05, 200), st.floats(0.05, 200), st.floats(0, 1))
def test_agrees_with_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), rel=1e-9, abs=1e-13)


@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0.001, 0.999))
def test_symmetry(a, b, x):
    assert betainc(a, b, x) + betainc(b, a, 1 - x) == pytest.approx(1.0, abs=1e-11)


@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_x(a, b, x1, x2):
    lo, hi = sorted((x1, x2))
    assert betainc(a, b, lo) <= betainc(a, b, hi) + 1e-14


def test_endpoints_and_errors():
    assert betainc(2, 3, 0.0) == 0.0
    assert betainc(2, 3, 1.0) == 1.0
    with pytest.raises(ValueError):
        betainc(0, 1, 0.5)
    with pytest.raises(ValueError):
        betainc(1, 1, 1.5)
