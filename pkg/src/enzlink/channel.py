"""Closed-form expected channel response and bit-interval selection.

With enzymes present, the information-molecule concentration obeys a coupled
reaction-diffusion system for A, E and EA.  Assuming fast degradation and
slow unbinding, the free-enzyme concentration stays at its total value and
the A equation decouples into diffusion with first-order loss at rate
``k1 * c_etot``.  The resulting point-source solution

    C_A(r, t) = N_em / (4 pi D_A t)^{3/2} * exp(-k1 c_etot t - r^2 / (4 D_A t))

is a lower bound on the true expected concentration (the real loss can never
exceed the all-enzymes-free rate).  Here it is used as the working model; the
gap is measured against the particle simulator.  No PDE solver is provided.

The receiver is treated as seeing a uniform concentration equal to the
value at its center, so the expected count is ``C_A(|r0|, t) * V_ob``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

from .physchem import SystemConfig

# relative grid step for the numeric decay-time scan
DECAY_SCAN_STEP = 1e-3
BISECT_ITER = 80


class DecayMethod(enum.Enum):
    NUMERIC_SCAN = "numeric"
    CLOSED_FORM_BOUND = "bound"


@dataclass(frozen=True)
class DecayQuery:
    alpha: float
    method: DecayMethod = DecayMethod.NUMERIC_SCAN

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class ChannelModel:
    cfg: SystemConfig
    enzymes_active: bool = True

    @property
    def c_etot(self) -> float:
        return self.cfg.c_etot if self.enzymes_active else 0.0

    @property
    def decay_rate(self) -> float:
        """First-order loss rate ``k1 * c_etot`` in 1/s."""
        return self.cfg.k1 * self.c_etot

    @cached_property
    def t_max(self) -> float:
        return peak_time(self)

    @cached_property
    def n_max(self) -> float:
        return expected_observed(self.t_max, self)

    def with_enzymes(self, active: bool) -> "ChannelModel":
        return ChannelModel(self.cfg, active)


def impulse_concentration(r: float, t: float, model: ChannelModel) -> float:
    """Expected A concentration (molecule/m^3) at distance r, time t after one emission."""
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    cfg = model.cfg
    d = cfg.d_a
    return cfg.n_emit / (4 * math.pi * d * t) ** 1.5 * math.exp(
        -model.decay_rate * t - r * r / (4 * d * t)
    )


def expected_observed(t: float, model: ChannelModel) -> float:
    return impulse_concentration(model.cfg.rx_distance, t, model) * model.cfg.v_ob


def peak_time(model: ChannelModel) -> float:
    """Time of the maximum expected receiver count after a single emission."""
    cfg = model.cfg
    r2 = cfg.rx_distance**2
    d = cfg.d_a
    kc = model.decay_rate
    # (-3 + sqrt(9 + 4 kc r^2 / D)) / (4 kc), rationalized so kc -> 0 is exact
    return r2 / (d * (3.0 + math.sqrt(9.0 + 4.0 * kc * r2 / d)))


def _closed_form_decay(model: ChannelModel, alpha: float) -> float:
    cfg = model.cfg
    d = cfg.d_a
    base = (cfg.v_ob * cfg.n_emit / (alpha * model.n_max)) ** (2.0 / 3.0) / (4 * math.pi * d)
    kc = model.decay_rate
    if kc == 0:
        return base
    # the exponential factor is at most exp(-|r0| sqrt(kc / D))
    return base * math.exp(-2.0 / 3.0 * cfg.rx_distance * math.sqrt(kc / d))


def decay_time(model: ChannelModel, q: DecayQuery) -> float:
    """Time after emission for the expected count to fall to ``alpha * n_max``.

    The numeric method scans forward from ``t_max`` in steps of
    ``DECAY_SCAN_STEP * t_max`` and then bisects inside the first step that
    crosses the target, so the result is the crossing itself rather than the
    grid point after it.
    """
    if q.method is DecayMethod.CLOSED_FORM_BOUND:
        return _closed_form_decay(model, q.alpha)
    t_max = model.t_max
    target = q.alpha * model.n_max
    n = 1
    while expected_observed(t_max * (1 + n * DECAY_SCAN_STEP), model) > target:
        n += 1
    lo = t_max * (1 + (n - 1) * DECAY_SCAN_STEP)
    hi = t_max * (1 + n * DECAY_SCAN_STEP)
    for _ in range(BISECT_ITER):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if expected_observed(mid, model) > target:
            lo = mid
        else:
            hi = mid
    return hi


def decay_curve(model: ChannelModel, alphas, method: DecayMethod) -> list[float]:
    return [decay_time(model, DecayQuery(a, method)) for a in alphas]
