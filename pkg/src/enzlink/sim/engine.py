"""Particle-based stochastic simulation of the enzyme-assisted link.

World layout: transmitter at the origin, receiver sphere centred at
``(|r0|, 0, 0)``, enzymes confined to the cube ``[-s/2, s/2]^3``.  Free
information molecules diffuse without bounds.  An enzyme carrying a bound
information molecule is the intermediate EA; a bound A has no separate
position.  Degraded molecules are only counted.

One call to :func:`step` advances the world by ``dt`` in this order:

1. Gaussian displacement of every particle, per axis variance ``2 D dt``.
2. Reflection of E and EA at the cube faces.  An EA that crosses a face is
   forced to decompose instead: it degrades with probability
   ``k2 / (k_minus1 + k2)``, otherwise it unbinds; the enzyme is reflected
   inside and a released A is left on the face (the clipped proposal).
3. One uniform variate per remaining EA against (p_unbind, p_degrade).
   Unbinding leaves A and E at the same coordinates.
4. Every free A within r_B of a free E binds, closest pairs first, each
   molecule at most once.  The EA sits at the pair midpoint, clamped into
   the cube.  Molecules released in this step do not react until the next.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from ..physchem import ConfigError, Kind, SystemConfig, binding_radius
from . import kernels


def unimolecular_probs(cfg: SystemConfig) -> tuple[float, float]:
    """Per-step probabilities that an EA unbinds, or degrades, within ``dt``."""
    total = cfg.k_minus1 + cfg.k2
    if total == 0:
        return 0.0, 0.0
    fired = -math.expm1(-cfg.dt * total)
    return cfg.k_minus1 / total * fired, cfg.k2 / total * fired


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream for one trial; SFC64 has 256 bits of state."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index),))
    return np.random.Generator(np.random.SFC64(seq))


@lru_cache(maxsize=16)
def _lattice_points(n: int, spacing: float) -> np.ndarray:
    # enough shells to hold n points of a cubic lattice
    m = int(math.ceil((3 * n / (4 * math.pi)) ** (1 / 3))) + 2
    ax = np.arange(-m, m + 1)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    d2 = (g**2).sum(axis=1)
    order = np.lexsort((g[:, 2], g[:, 1], g[:, 0], d2))[:n]
    pts = g[order].astype(float) * spacing
    pts.setflags(write=False)
    return pts


def emission_cloud(n: int, radius_a: float) -> np.ndarray:
    """Lattice points with spacing ``2 * radius_a``, nearest to the origin first."""
    if n <= 0:
        return np.zeros((0, 3))
    return _lattice_points(int(n), 2.0 * radius_a).copy()


@dataclass
class Particle:
    kind: Kind
    position: tuple[float, float, float]
    alive: bool = True


@dataclass
class SimState:
    cfg: SystemConfig
    rng: np.random.Generator
    a_pos: np.ndarray
    e_pos: np.ndarray
    e_bound: np.ndarray
    clock: int = 0
    n_emitted: int = 0
    n_degraded: int = 0
    r_b: float = field(init=False)
    unimolecular_probs: tuple[float, float] = field(init=False)

    def __post_init__(self):
        self.r_b = binding_radius(self.cfg)[0]
        self.unimolecular_probs = unimolecular_probs(self.cfg)
        half = self.cfg.v_enz_side / 2
        self._sig = {
            Kind.A: math.sqrt(2 * self.cfg.d_a * self.cfg.dt),
            Kind.E: math.sqrt(2 * self.cfg.d_e * self.cfg.dt),
            Kind.EA: math.sqrt(2 * self.cfg.d_ea * self.cfg.dt),
        }
        self._half = half
        n_e = self.e_pos.shape[0]
        self._z_e = np.empty((n_e, 3))
        self._unfolded = np.empty((n_e, 3))
        self._hit = np.zeros(n_e, dtype=np.bool_)
        self._grid = kernels.PairGrid(half, self.r_b) if n_e and self.r_b > 0 else None

    @classmethod
    def new(cls, cfg: SystemConfig, rng: np.random.Generator,
            n_enzyme: int | None = None) -> "SimState":
        """Fresh world with enzymes drawn uniformly in the cube and no A."""
        n_e = cfg.n_enzyme if n_enzyme is None else n_enzyme
        half = cfg.v_enz_side / 2
        e_pos = rng.uniform(-half, half, size=(n_e, 3))
        return cls(cfg, rng, np.zeros((0, 3)), e_pos, np.zeros(n_e, dtype=np.bool_))

    @property
    def time(self) -> float:
        return self.clock * self.cfg.dt

    @property
    def n_free_a(self) -> int:
        return self.a_pos.shape[0]

    @property
    def n_ea(self) -> int:
        return int(self.e_bound.sum())

    @property
    def n_free_e(self) -> int:
        return self.e_pos.shape[0] - self.n_ea

    def particles(self) -> Iterator[Particle]:
        for p in self.a_pos:
            yield Particle(Kind.A, tuple(p))
        for p, b in zip(self.e_pos, self.e_bound):
            yield Particle(Kind.EA if b else Kind.E, tuple(p))


def emit(state: SimState) -> SimState:
    cloud = emission_cloud(state.cfg.n_emit, state.cfg.radius_a)
    state.a_pos = np.concatenate([state.a_pos, cloud]) if state.n_free_a else cloud
    state.n_emitted += cloud.shape[0]
    return state


def observe(state: SimState) -> int:
    """Free A with centre inside the receiver sphere."""
    cfg = state.cfg
    return int(kernels.count_in_sphere(state.a_pos, cfg.rx_distance, 0.0, 0.0, cfg.rx_radius))


def step(state: SimState) -> SimState:
    cfg = state.cfg
    rng = state.rng
    half = state._half
    p_unbind, p_degrade = state.unimolecular_probs
    n_a = state.n_free_a
    n_e = state.e_pos.shape[0]

    # 1-2: diffusion, reflection
    if n_a:
        state.a_pos += state._sig[Kind.A] * rng.standard_normal((n_a, 3))
    released = []
    e_fresh = None
    if n_e:
        rng.standard_normal(out=state._z_e)
        kernels.displace_enzymes(state.e_pos, state._z_e, state.e_bound,
                                 state._sig[Kind.E], state._sig[Kind.EA], half,
                                 state._hit, state._unfolded)
        e_fresh = np.zeros(n_e, dtype=np.bool_)
        forced = np.flatnonzero(state._hit)
        if forced.size:
            total = cfg.k_minus1 + cfg.k2
            q_degrade = cfg.k2 / total if total > 0 else 0.0
            degrade = rng.random(forced.size) < q_degrade
            unbind = forced[~degrade]
            released.append(np.clip(state._unfolded[unbind], -half, half))
            state.n_degraded += int(degrade.sum())
            state.e_bound[forced] = False
            e_fresh[forced] = True

        # 3: unimolecular reactions of the remaining intermediates
        ea = np.flatnonzero(state.e_bound)
        if ea.size:
            u = rng.random(ea.size)
            unbind = ea[u < p_unbind]
            degrade = ea[(u >= p_unbind) & (u < p_unbind + p_degrade)]
            released.append(state.e_pos[unbind].copy())
            state.n_degraded += degrade.size
            state.e_bound[unbind] = False
            state.e_bound[degrade] = False
            e_fresh[unbind] = True
            e_fresh[degrade] = True

    # 4: binding, closest pairs first
    if n_a and state._grid is not None:
        e_ok = ~state.e_bound & ~e_fresh
        g = state._grid
        pa, pe, pd = kernels.find_pairs(state.a_pos, state.e_pos, e_ok, half, state.r_b,
                                        g.cell, g.ncell, g.head, g.flag)
        if pa.size:
            order = np.lexsort((pe, pa, pd))
            used_a = set()
            used_e = set()
            take_a = []
            take_e = []
            for k in order:
                a, e = int(pa[k]), int(pe[k])
                if a in used_a or e in used_e:
                    continue
                used_a.add(a)
                used_e.add(e)
                take_a.append(a)
                take_e.append(e)
            take_a = np.array(take_a)
            take_e = np.array(take_e)
            mid = 0.5 * (state.a_pos[take_a] + state.e_pos[take_e])
            state.e_pos[take_e] = np.clip(mid, -half, half)
            state.e_bound[take_e] = True
            state.a_pos = np.delete(state.a_pos, take_a, axis=0)

    if released:
        state.a_pos = np.concatenate([state.a_pos] + released)
    state.clock += 1
    return state


# --- trials ------------------------------------------------------------------

@dataclass
class ObservationSeries:
    sample_times: list[float]
    counts: list[int]
    n_e: list[int] = field(default_factory=list)
    n_ea: list[int] = field(default_factory=list)
    n_a_alive: list[int] = field(default_factory=list)
    n_a_degraded: list[int] = field(default_factory=list)
    trial_id: int = 0

    def rows(self) -> Iterator[tuple]:
        for i, t in enumerate(self.sample_times):
            yield (self.trial_id, t * 1e6, self.counts[i], self.n_e[i], self.n_ea[i],
                   self.n_a_alive[i], self.n_a_degraded[i])


TRIAL_COLUMNS = ("trial_id", "t_us", "n_obs_free_A", "n_E", "n_EA", "n_A_alive", "n_A_degraded")


def schedule_steps(times: Sequence[float], dt: float) -> list[int]:
    """Convert sample times to step indices; each must be a multiple of dt."""
    steps = []
    for t in times:
        k = round(t / dt)
        if k < 0 or not math.isclose(k * dt, t, rel_tol=1e-9, abs_tol=dt * 1e-9):
            raise ConfigError(f"sample time {t!r} s is not a nonnegative multiple of dt={dt!r} s")
        steps.append(int(k))
    return steps


def emission_steps(bits: Sequence[int], bit_interval: float, dt: float) -> list[int]:
    return [int(round(i * bit_interval / dt)) for i, b in enumerate(bits) if b]


def run_trial(cfg: SystemConfig, bits: Sequence[int], sample_times: Sequence[float],
              seed: int, trial_id: int = 0) -> ObservationSeries:
    """Simulate one transmission of ``bits`` and record counts at ``sample_times``.

    The trial stream is derived from ``(seed, trial_id)``; enzymes are redrawn
    uniformly for every trial.
    """
    steps = schedule_steps(sample_times, cfg.dt)
    rng = trial_rng(seed, trial_id)
    state = SimState.new(cfg, rng)
    emits = set(emission_steps(bits, cfg.bit_interval, cfg.dt))
    wanted: dict[int, list[int]] = {}
    for idx, k in enumerate(steps):
        wanted.setdefault(k, []).append(idx)
    horizon = max(steps) if steps else 0
    n = len(steps)
    series = ObservationSeries(list(sample_times), [0] * n, [0] * n, [0] * n, [0] * n, [0] * n,
                               trial_id=trial_id)
    while True:
        if state.clock in emits:
            emit(state)
        if state.clock in wanted:
            obs = observe(state)
            n_ea = state.n_ea
            for idx in wanted[state.clock]:
                series.counts[idx] = obs
                series.n_e[idx] = state.e_pos.shape[0] - n_ea
                series.n_ea[idx] = n_ea
                series.n_a_alive[idx] = state.n_free_a
                series.n_a_degraded[idx] = state.n_degraded
        if state.clock >= horizon:
            break
        step(state)
    return series


def detection_steps(cfg: SystemConfig, n_bits: int, t_max: float) -> list[int]:
    """Step index of the decision sample in each bit interval."""
    offset = max(1, round(t_max / cfg.dt))
    return [int(round(j * cfg.bit_interval / cfg.dt)) + offset for j in range(n_bits)]


def decide(counts: Sequence[int], xi: int) -> list[int]:
    return [1 if c >= xi else 0 for c in counts]
