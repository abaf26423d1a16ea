"""Receiver statistics and bit-error analysis for the threshold detector.

The receiver samples the free-molecule count at ``t_max`` into each bit
interval and decides 1 when the count reaches the threshold ``xi``.  Counts
from separate emissions are treated as independent, so the count in bit j
has mean ``N_em * sum_i W[i] P_ob((j - i) T_B + t_max)``; its distribution is
taken from the same family with that mean.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelModel, expected_observed
from .special import betainc

DEFAULT_SEQUENCES = 1000
DEFAULT_BITS = 50


class Family(enum.Enum):
    BINOMIAL = "binomial"
    POISSON = "poisson"
    GAUSSIAN = "gaussian"


class IsiMode(enum.Enum):
    NONE = "none"
    PREVIOUS_ONLY = "prev"
    FULL = "full"


@dataclass(frozen=True)
class ObservationProb:
    t: float
    p_ob: float


@dataclass(frozen=True)
class CountModel:
    """Distribution of the molecule count seen by the receiver.

    ``p_single`` is the per-molecule observation probability; it sets the
    binomial success probability and the Gaussian variance ``mean*(1-p)``.
    """

    family: Family
    mean: float
    p_single: float = 0.0
    n_trials: int = 0

    def __post_init__(self):
        if not self.mean >= 0:
            raise ValueError(f"mean must be nonnegative, got {self.mean}")
        if not 0 <= self.p_single <= 1:
            raise ValueError(f"p_single must lie in [0, 1], got {self.p_single}")

    @classmethod
    def binomial(cls, n_trials: int, p: float) -> "CountModel":
        return cls(Family.BINOMIAL, n_trials * p, p, n_trials)

    @classmethod
    def poisson(cls, mean: float) -> "CountModel":
        return cls(Family.POISSON, mean)

    @classmethod
    def gaussian(cls, mean: float, p_single: float) -> "CountModel":
        return cls(Family.GAUSSIAN, mean, p_single)


@dataclass(frozen=True)
class BitSequence:
    bits: tuple[int, ...]
    bit_interval: float

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if not self.bits:
            raise ValueError("bit sequence must be nonempty")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")
        if not self.bit_interval > 0:
            raise ValueError("bit interval must be positive")

    def __len__(self):
        return len(self.bits)


@dataclass
class ErrorReport:
    per_bit: list[float]
    mean_error: float
    threshold: int
    isi_mode: IsiMode
    family: Family = Family.POISSON
    sequences: np.ndarray | None = field(default=None, repr=False)


def sampling_time(model: ChannelModel, rounded: bool = False) -> float:
    """Detector sampling offset into the bit interval.

    ``rounded=True`` snaps ``t_max`` to the nearest multiple of the time step,
    which is what a stepped simulation can actually observe.
    """
    if not rounded:
        return model.t_max
    dt = model.cfg.dt
    return max(1, round(model.t_max / dt)) * dt


def observation_probability(t: float, model: ChannelModel) -> ObservationProb:
    p = expected_observed(t, model) / model.cfg.n_emit
    return ObservationProb(t, min(max(p, 0.0), 1.0))


def _p_ob(t: float, model: ChannelModel) -> float:
    return observation_probability(t, model).p_ob


# --- count distributions -------------------------------------------------

def _poisson_tail(mu, xi: int):
    mu = np.asarray(mu, dtype=float)
    term = np.exp(-mu)
    acc = np.zeros_like(mu)
    for w in range(xi):
        acc = acc + term
        term = term * mu / (w + 1)
    return np.clip(1.0 - acc, 0.0, 1.0)


def _gaussian_tail(mu, p, xi: int):
    mu = np.asarray(mu, dtype=float)
    var = mu * (1.0 - np.asarray(p, dtype=float))
    out = np.where(xi == 0, 1.0, 0.0) * np.ones_like(mu)
    ok = var > 0
    z = (xi - mu[ok]) / np.sqrt(2.0 * var[ok])
    out[ok] = 0.5 * (1.0 - _erf(z))
    return out


_erf = np.vectorize(math.erf, otypes=[float])


def _binomial_tail(n: int, p: float, xi: int) -> float:
    if xi <= 0:
        return 1.0
    if xi > n:
        return 0.0
    return betainc(xi, n - xi + 1, p)


def count_tail(model: CountModel, xi: int) -> float:
    """Pr(N >= xi)."""
    if xi < 0 or int(xi) != xi:
        raise ValueError(f"threshold must be a nonnegative integer, got {xi}")
    xi = int(xi)
    if xi == 0:
        return 1.0
    if model.family is Family.BINOMIAL:
        return _binomial_tail(model.n_trials, model.p_single, xi)
    if model.family is Family.POISSON:
        return float(_poisson_tail(model.mean, xi))
    return float(_gaussian_tail(np.array([model.mean]), model.p_single, xi)[0])


def count_pmf(model: CountModel, w: int) -> float:
    """Pr(N = w); the Gaussian family returns its density at w."""
    if w < 0 or int(w) != w:
        raise ValueError(f"count must be a nonnegative integer, got {w}")
    w = int(w)
    if model.family is Family.BINOMIAL:
        n, p = model.n_trials, model.p_single
        if w > n:
            return 0.0
        if w == 0:
            return 1.0 - _binomial_tail(n, p, 1)
        if w == n:
            return _binomial_tail(n, p, n)
        return betainc(w, n - w + 1, p) - betainc(w + 1, n - w, p)
    mu = model.mean
    if model.family is Family.POISSON:
        if mu == 0:
            return 1.0 if w == 0 else 0.0
        return math.exp(w * math.log(mu) - mu - math.lgamma(w + 1))
    var = mu * (1.0 - model.p_single)
    if var <= 0:
        return 1.0 if w == mu else 0.0
    return math.exp(-((w - mu) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


# --- sequences and ISI -----------------------------------------------------

def _contributing(j: int, mode: IsiMode) -> range:
    """1-based emission indices whose molecules are counted in bit j."""
    if mode is IsiMode.NONE:
        return range(j, j + 1)
    if mode is IsiMode.PREVIOUS_ONLY:
        return range(max(1, j - 1), j + 1)
    return range(1, j + 1)


def _check_index(j: int, seq: BitSequence):
    if not 1 <= j <= len(seq):
        raise IndexError(f"bit index {j} outside 1..{len(seq)}")


def isi_mean(j: int, seq: BitSequence, model: ChannelModel,
             isi_mode: IsiMode = IsiMode.FULL, t_sample: float | None = None) -> float:
    """Expected count at the sampling instant of bit j (1-based)."""
    _check_index(j, seq)
    ts = model.t_max if t_sample is None else t_sample
    total = 0.0
    for i in _contributing(j, isi_mode):
        if seq.bits[i - 1]:
            total += _p_ob((j - i) * seq.bit_interval + ts, model)
    return model.cfg.n_emit * total


def _count_model(mean: float, p_eff: float, family: Family, emissions: list[float],
                 n_emit: int) -> CountModel:
    if family is Family.POISSON:
        return CountModel.poisson(mean)
    if family is Family.GAUSSIAN:
        return CountModel.gaussian(mean, p_eff)
    if len(emissions) > 1:
        raise NotImplementedError(
            "binomial statistics are only supported when a single emission contributes; "
            "use the poisson or gaussian family with ISI"
        )
    p = emissions[0] if emissions else 0.0
    return CountModel.binomial(n_emit, p)


def bit_error_prob(j: int, seq: BitSequence, model: ChannelModel, xi: int,
                   family: Family = Family.POISSON, isi_mode: IsiMode = IsiMode.FULL,
                   t_sample: float | None = None) -> float:
    """Error probability of bit j given the realized sequence up to j."""
    _check_index(j, seq)
    ts = model.t_max if t_sample is None else t_sample
    n_emit = model.cfg.n_emit
    probs = [
        _p_ob((j - i) * seq.bit_interval + ts, model)
        for i in _contributing(j, isi_mode)
        if seq.bits[i - 1]
    ]
    mean = n_emit * sum(probs)
    p_eff = sum(probs) / len(probs) if probs else 0.0
    tail = count_tail(_count_model(mean, p_eff, family, probs, n_emit), xi)
    return 1.0 - tail if seq.bits[j - 1] else tail


def _sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=(index,))))


def draw_sequences(n_sequences: int, n_bits: int, p1: float, seed: int,
                   start: int = 0) -> np.ndarray:
    """Sequence k is drawn from its own stream so any partition gives the same bits."""
    out = np.empty((n_sequences, n_bits), dtype=np.int8)
    for k in range(n_sequences):
        out[k] = _sequence_rng(seed, start + k).random(n_bits) < p1
    return out


def _tail_array(mu: np.ndarray, p_eff: np.ndarray, xi: int, family: Family) -> np.ndarray:
    if xi == 0:
        return np.ones_like(mu)
    if family is Family.POISSON:
        return _poisson_tail(mu, xi)
    return _gaussian_tail(mu, p_eff, xi)


def _miss_and_false_alarm(bits: np.ndarray, lag_probs: np.ndarray, n_emit: int, xi: int,
                          family: Family, isi_mode: IsiMode) -> tuple[np.ndarray, np.ndarray]:
    """Per-bit miss and false-alarm probabilities given each sequence's prefix."""
    n_seq, n_bits = bits.shape
    w = bits.astype(float)
    max_lag = min(n_bits - 1, {IsiMode.NONE: 0, IsiMode.PREVIOUS_ONLY: 1, IsiMode.FULL: n_bits}[isi_mode])
    isi_p = np.zeros((n_seq, n_bits))
    isi_k = np.zeros((n_seq, n_bits))
    for lag in range(1, max_lag + 1):
        isi_p[:, lag:] += w[:, :-lag] * lag_probs[lag]
        isi_k[:, lag:] += w[:, :-lag]
    mu0 = n_emit * isi_p
    mu1 = n_emit * (isi_p + lag_probs[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        p0 = np.where(isi_k > 0, isi_p / np.maximum(isi_k, 1), 0.0)
    p1_eff = (isi_p + lag_probs[0]) / (isi_k + 1)
    miss = 1.0 - _tail_array(mu1, p1_eff, xi, family)
    false_alarm = _tail_array(mu0, p0, xi, family)
    return miss, false_alarm


def _sequence_errors(bits: np.ndarray, lag_probs: np.ndarray, n_emit: int, xi: int,
                     family: Family, isi_mode: IsiMode, p1: float) -> np.ndarray:
    """Per-bit expected error, conditioned on each drawn prefix, for a batch of sequences."""
    miss, false_alarm = _miss_and_false_alarm(bits, lag_probs, n_emit, xi, family, isi_mode)
    return p1 * miss + (1.0 - p1) * false_alarm


def lag_probabilities(model: ChannelModel, bit_interval: float, n_bits: int,
                      t_sample: float | None = None) -> np.ndarray:
    """P_ob at the sampling instant, for emissions 0..n_bits-1 intervals earlier."""
    ts = model.t_max if t_sample is None else t_sample
    return np.array([_p_ob(k * bit_interval + ts, model) for k in range(n_bits)])


def sequence_bit_errors(bits: np.ndarray, model: ChannelModel, bit_interval: float, xi: int,
                        family: Family = Family.POISSON, isi_mode: IsiMode = IsiMode.FULL,
                        t_sample: float | None = None) -> np.ndarray:
    """Error probability of every bit given the whole realized sequence, batched.

    ``bits`` has shape (n_sequences, n_bits); entry (k, j) equals
    ``bit_error_prob(j + 1, ...)`` for sequence k.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int8))
    n_bits = bits.shape[1]
    lag_probs = lag_probabilities(model, bit_interval, n_bits, t_sample)
    n_emit = model.cfg.n_emit
    if family is Family.BINOMIAL:
        if isi_mode is not IsiMode.NONE:
            raise NotImplementedError(
                "binomial statistics with ISI are not supported; use poisson or gaussian"
            )
        miss = 1.0 - _binomial_tail(n_emit, lag_probs[0], xi)
        false_alarm = 1.0 if xi == 0 else 0.0
        return np.where(bits == 1, miss, false_alarm)
    miss, false_alarm = _miss_and_false_alarm(bits, lag_probs, n_emit, xi, family, isi_mode)
    return np.where(bits == 1, miss, false_alarm)


def _binomial_single_errors(n_bits: int, lag0: float, n_emit: int, xi: int, p1: float) -> np.ndarray:
    miss = 1.0 - _binomial_tail(n_emit, lag0, xi)
    false_alarm = 1.0 if xi == 0 else 0.0
    return np.full(n_bits, p1 * miss + (1 - p1) * false_alarm)


def _chunk_errors(args):
    seed, start, count, n_bits, p1, lag_probs, n_emit, xi, family, isi_mode = args
    bits = draw_sequences(count, n_bits, p1, seed, start)
    return bits, _sequence_errors(bits, lag_probs, n_emit, xi, family, isi_mode, p1)


def mean_error_prob(model: ChannelModel, bit_interval: float, xi: int,
                    family: Family = Family.POISSON, isi_mode: IsiMode = IsiMode.FULL,
                    n_bits: int = DEFAULT_BITS, n_sequences: int = DEFAULT_SEQUENCES,
                    p1: float | None = None, rng_seed: int = 0,
                    t_sample: float | None = None, workers: int = 1) -> ErrorReport:
    """Expected error per bit averaged over random sequences.

    For every drawn sequence and bit j, the error is weighted over both values
    of the current bit with the drawn bits as the known prefix.  Each sequence
    has its own sub-seed, and the reduction runs over the assembled array in
    sequence order, so the result does not depend on ``workers``.
    """
    if n_bits < 1 or n_sequences < 1:
        raise ValueError("n_bits and n_sequences must be at least 1")
    p1 = model.cfg.p1 if p1 is None else p1
    lag_probs = lag_probabilities(model, bit_interval, n_bits, t_sample)
    n_emit = model.cfg.n_emit

    if family is Family.BINOMIAL:
        if isi_mode is not IsiMode.NONE:
            raise NotImplementedError(
                "binomial statistics with ISI are not supported; use poisson or gaussian"
            )
        bits = draw_sequences(n_sequences, n_bits, p1, rng_seed)
        per_seq = np.tile(_binomial_single_errors(n_bits, lag_probs[0], n_emit, xi, p1),
                          (n_sequences, 1))
    else:
        workers = max(1, int(workers))
        bounds = np.linspace(0, n_sequences, workers + 1).astype(int)
        jobs = [
            (rng_seed, int(a), int(b - a), n_bits, p1, lag_probs, n_emit, xi, family, isi_mode)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a
        ]
        if workers == 1:
            parts = [_chunk_errors(job) for job in jobs]
        else:
            with ProcessPoolExecutor(workers) as pool:
                parts = list(pool.map(_chunk_errors, jobs))
        bits = np.concatenate([p[0] for p in parts])
        per_seq = np.concatenate([p[1] for p in parts])

    per_bit = per_seq.mean(axis=0)
    return ErrorReport(
        per_bit=[float(v) for v in per_bit],
        mean_error=float(per_bit.mean()),
        threshold=int(xi),
        isi_mode=isi_mode,
        family=family,
        sequences=bits,
    )


def threshold_sweep(model: ChannelModel, bit_interval: float, thresholds: Sequence[int],
                    **kwargs) -> list[ErrorReport]:
    return [mean_error_prob(model, bit_interval, xi, **kwargs) for xi in thresholds]
