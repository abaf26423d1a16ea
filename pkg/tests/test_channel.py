import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from enzlink.channel import (
    ChannelModel,
    DecayMethod,
    DecayQuery,
    decay_curve,
    decay_time,
    expected_observed,
    impulse_concentration,
    peak_time,
)


def test_point_source_integrates_to_survivors(system1):
    # integral of the concentration over all space = N_em exp(-kc t)
    m = ChannelModel(system1)
    t = 20e-6
    r = np.linspace(0, 3e-6, 200001)
    c = np.array([impulse_concentration(x, t, m) for x in r[::100]])
    total = np.trapezoid(4 * math.pi * r[::100] ** 2 * c, r[::100])
    assert total == pytest.approx(system1.n_emit * math.exp(-m.decay_rate * t), rel=1e-6)


@pytest.mark.parametrize("active", [True, False])
def test_peak_time_matches_numeric_maximum(system1, active):
    m = ChannelModel(system1, active)
    res = optimize.minimize_scalar(lambda us: -expected_observed(us * 1e-6, m),
                                   bounds=(1, 200), method="bounded",
                                   options={"xatol": 1e-9})
    assert m.t_max * 1e6 == pytest.approx(res.x, rel=1e-6)
    assert m.n_max == pytest.approx(-res.fun, rel=1e-10)


def test_no_enzyme_peak_is_classical_value(system1):
    m = ChannelModel(system1, False)
    assert m.t_max == pytest.approx(system1.rx_distance**2 / (6 * system1.d_a), rel=1e-14)


@given(st.floats(0, 1e7))
def test_peak_time_decreases_with_decay_rate(kc):
    from enzlink.physchem import load_config
    base = load_config("system1")
    slow = replace(base, k1=kc / base.c_etot)
    fast = replace(base, k1=(kc + 1e4) / base.c_etot)
    assert peak_time(ChannelModel(fast)) < peak_time(ChannelModel(slow))


@given(st.floats(1e-7, 1e-3))
def test_enzyme_curve_below_free_curve(system1, t):
    assert expected_observed(t, ChannelModel(system1)) <= expected_observed(t, ChannelModel(system1, False))


def test_nonpositive_time_rejected(system1):
    with pytest.raises(ValueError):
        impulse_concentration(1e-7, 0.0, ChannelModel(system1))


@pytest.mark.parametrize("active", [True, False])
@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.9])
def test_numeric_decay_matches_root(system1, active, alpha):
    m = ChannelModel(system1, active)
    root = optimize.brentq(lambda t: expected_observed(t, m) - alpha * m.n_max, m.t_max, 1.0, xtol=1e-15)
    t = decay_time(m, DecayQuery(alpha))
    assert t == pytest.approx(root, rel=1e-12)


@pytest.mark.parametrize("active", [True, False])
def test_closed_form_bound_exceeds_numeric(system1, active):
    m = ChannelModel(system1, active)
    alphas = np.linspace(0.1, 0.9, 33)
    num = decay_curve(m, alphas, DecayMethod.NUMERIC_SCAN)
    bound = decay_curve(m, alphas, DecayMethod.CLOSED_FORM_BOUND)
    assert all(b >= n for b, n in zip(bound, num))


def test_decay_monotone_in_alpha(system1):
    m = ChannelModel(system1)
    ts = decay_curve(m, [0.9, 0.6, 0.3, 0.1], DecayMethod.NUMERIC_SCAN)
    assert ts == sorted(ts)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ValueError):
        DecayQuery(alpha)
