"""Experiment definitions, parallel trial execution and tabular results.

Every experiment yields a :class:`ResultTable` whose metadata holds the full
experiment spec, the config digest and the master seed, so any table can be
regenerated bit for bit with :func:`rerun`.  Simulated trials are keyed by
``(group, trial_id)`` and every reduction runs over the records sorted by
key, which makes results independent of worker count and shard order.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .channel import ChannelModel, DecayMethod, DecayQuery, decay_time, expected_observed
from .detection import (
    CountModel,
    Family,
    IsiMode,
    count_tail,
    draw_sequences,
    mean_error_prob,
    observation_probability,
    sampling_time,
    sequence_bit_errors,
)
from .physchem import ConfigError, SystemConfig, load_config
from .sim.engine import TRIAL_COLUMNS, ObservationSeries, run_trial

log = logging.getLogger(__name__)

# particle-steps allowed before an experiment is refused
DEFAULT_BUDGET = 1e11
DEFAULT_THRESHOLDS = tuple(range(1, 11))
DEFAULT_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
# trial count for full-scale runs
FULL_SCALE_TRIALS = 6000


class Mode(enum.Enum):
    IMPULSE_RESPONSE = "impulse"
    DECAY_INTERVAL = "decay"
    FIRST_BIT_DETECTION = "detect"
    KNOWN_SEQUENCE_ERROR = "ber"
    THRESHOLD_SWEEP = "sweep"


class BudgetError(RuntimeError):
    """The estimated simulation cost exceeds the allowed particle-step budget."""

    def __init__(self, estimate: float, budget: float, suggested_trials: int):
        self.estimate = estimate
        self.budget = budget
        self.suggested_trials = suggested_trials
        super().__init__(
            f"estimated {estimate:.3g} particle-steps exceeds the budget of {budget:.3g}; "
            f"try --trials {suggested_trials} or raise --budget"
        )


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    system: str = "system1"
    mode: Mode = Mode.IMPULSE_RESPONSE
    trials: int = 1000
    sequences: int = 1000
    n_bits: int = 50
    thresholds: tuple[int, ...] = DEFAULT_THRESHOLDS
    t_b_us: tuple[float, ...] = (120.0,)
    enzymes: bool = True
    master_seed: int = 0
    isi: IsiMode = IsiMode.FULL
    family: Family = Family.POISSON
    # None picks the mode default: simulate everything except decay and sweep
    simulate: bool | None = None
    # known transmitted sequence; random sequences per trial when None
    bits: tuple[int, ...] | None = None
    sample_every_us: float = 5.0
    t_end_us: float = 200.0
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    trial_offset: int = 0
    workers: int = 1
    budget: float = DEFAULT_BUDGET
    ea_uses_da: bool = False

    def __post_init__(self):
        for name in ("thresholds", "t_b_us", "alphas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.bits is not None:
            object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
            if not self.bits or any(b not in (0, 1) for b in self.bits):
                raise ConfigError("bits must be a nonempty sequence of 0/1")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "isi", IsiMode(self.isi))
        object.__setattr__(self, "family", Family(self.family))
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.sequences < 1 or self.n_bits < 1:
            raise ConfigError("sequences and n_bits must be at least 1")
        if self.mode in (Mode.THRESHOLD_SWEEP, Mode.FIRST_BIT_DETECTION,
                         Mode.KNOWN_SEQUENCE_ERROR) and not self.thresholds:
            raise ConfigError("thresholds must be nonempty for this mode")
        if any(int(x) != x or x < 0 for x in self.thresholds):
            raise ConfigError("thresholds must be nonnegative integers")
        object.__setattr__(self, "thresholds", tuple(int(x) for x in self.thresholds))
        if not self.t_b_us or any(not t > 0 for t in self.t_b_us):
            raise ConfigError("t_b_us must hold positive bit intervals")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.trial_offset < 0 or self.workers < 1:
            raise ConfigError("trial_offset must be >= 0 and workers >= 1")
        if not (self.sample_every_us > 0 and self.t_end_us >= self.sample_every_us):
            raise ConfigError("need 0 < sample_every_us <= t_end_us")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1)")

    @property
    def simulated(self) -> bool:
        if self.simulate is not None:
            return self.simulate
        return self.mode not in (Mode.DECAY_INTERVAL, Mode.THRESHOLD_SWEEP)

    def to_mapping(self) -> dict[str, Any]:
        out = asdict(self)
        out["mode"] = self.mode.value
        out["isi"] = self.isi.value
        out["family"] = self.family.value
        for k in ("thresholds", "t_b_us", "alphas", "bits"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> "ExperimentSpec":
        return cls(**raw)


@dataclass
class ResultTable:
    schema: tuple[str, ...]
    rows: list[tuple]
    metadata: dict[str, Any]
    # raw simulated records, kept so that shards can be merged exactly
    trial_data: dict[tuple[int, int], ObservationSeries] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        width = len(self.schema)
        for r in self.rows:
            if len(r) != width:
                raise SchemaError(f"row of width {len(r)} does not match schema of width {width}")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[self.schema.index(name)] for r in self.rows], dtype=float)

    def write_csv(self, path: str | os.PathLike) -> Path:
        """Write rows as CSV and the metadata to a ``.meta.json`` sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.schema)
            w.writerows(self.rows)
        meta = path.with_name(path.name + ".meta.json")
        meta.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path

    def write_trials(self, path: str | os.PathLike) -> list[Path]:
        """One row per (trial, sample time); a file per bit-interval group if several."""
        path = Path(path)
        groups = sorted({g for g, _ in self.trial_data})
        written = []
        for g in groups:
            target = path if len(groups) == 1 else path.with_name(f"{path.stem}_g{g}{path.suffix}")
            with open(target, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(TRIAL_COLUMNS)
                for key in sorted(k for k in self.trial_data if k[0] == g):
                    w.writerows(self.trial_data[key].rows())
            written.append(target)
        return written


# --- simulation plumbing --------------------------------------------------

@dataclass(frozen=True)
class _TrialJob:
    group: int
    trial_id: int
    seed: int
    bits: tuple[int, ...]
    sample_times: tuple[float, ...]


def group_seed(master_seed: int, group: int) -> int:
    """Seed for bit-interval group ``group``; group 0 uses the master seed itself."""
    if group == 0:
        return int(master_seed)
    state = np.random.SeedSequence(int(master_seed), spawn_key=(2**31 + group,)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def _run_chunk(args) -> list[tuple[tuple[int, int], ObservationSeries]]:
    cfg, jobs = args
    return [((j.group, j.trial_id), run_trial(cfg, j.bits, j.sample_times, j.seed, j.trial_id))
            for j in jobs]


def run_trials(cfg: SystemConfig, jobs: Sequence[_TrialJob],
               workers: int = 1) -> dict[tuple[int, int], ObservationSeries]:
    """Run independent trials on up to ``workers`` processes; results keyed by (group, trial)."""
    jobs = list(jobs)
    if not jobs:
        return {}
    if workers <= 1:
        return dict(_run_chunk((cfg, jobs)))
    n_chunks = min(len(jobs), workers * 4)
    bounds = np.linspace(0, len(jobs), n_chunks + 1).astype(int)
    chunks = [(cfg, jobs[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    out: dict[tuple[int, int], ObservationSeries] = {}
    with ProcessPoolExecutor(workers) as pool:
        for part in pool.map(_run_chunk, chunks):
            out.update(part)
    return out


def estimate_particle_steps(cfg: SystemConfig, jobs: Iterable[_TrialJob]) -> float:
    """Upper estimate: every enzyme plus every molecule emitted so far, each step."""
    total = 0.0
    for j in jobs:
        steps = round(max(j.sample_times) / cfg.dt) if j.sample_times else 0
        total += steps * (cfg.n_enzyme + cfg.n_emit * max(1, sum(j.bits)))
    return total


def _check_budget(spec: ExperimentSpec, cfg: SystemConfig, jobs: list[_TrialJob]) -> None:
    est = estimate_particle_steps(cfg, jobs)
    if est > spec.budget:
        per_trial = est / max(1, spec.trials)
        raise BudgetError(est, spec.budget, max(1, int(spec.budget // per_trial)))


def _time_grid(spec: ExperimentSpec, dt: float) -> tuple[float, ...]:
    step = spec.sample_every_us * 1e-6
    n = int(math.floor(spec.t_end_us / spec.sample_every_us + 1e-9))
    times = tuple(k * step for k in range(1, n + 1))
    ratio = step / dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"sample_every_us={spec.sample_every_us} is not a multiple of dt")
    return times


def _decision_times(cfg: SystemConfig, n_bits: int, bit_interval: float, t_max: float) -> tuple[float, ...]:
    offset = max(1, round(t_max / cfg.dt))
    return tuple((round(j * bit_interval / cfg.dt) + offset) * cfg.dt for j in range(n_bits))


def _trial_bits(spec: ExperimentSpec, cfg: SystemConfig, trial_id: int) -> tuple[int, ...]:
    if spec.bits is not None:
        return spec.bits
    return tuple(int(b) for b in draw_sequences(1, spec.n_bits, cfg.p1, spec.master_seed, trial_id)[0])


def _trial_ids(spec: ExperimentSpec) -> range:
    return range(spec.trial_offset, spec.trial_offset + spec.trials)


def _mean_stderr(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[0]
    mean = x.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.nan, dtype=float)
    return mean, x.std(axis=0, ddof=1) / math.sqrt(n)


def _proportion(hits: np.ndarray) -> tuple[float, float]:
    n = hits.size
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / n)


# --- experiment builders ----------------------------------------------------

def _models(spec: ExperimentSpec) -> tuple[SystemConfig, ChannelModel, ChannelModel, ChannelModel]:
    """(simulated config, enzyme model, no-enzyme model, model matching the simulation)."""
    cfg = load_config(spec.system)
    if spec.ea_uses_da:
        cfg = replace(cfg, ea_uses_da=True)
    lb = ChannelModel(cfg, True)
    free = ChannelModel(cfg, False)
    sim_cfg = cfg if spec.enzymes else cfg.without_enzymes()
    return sim_cfg, lb, free, (lb if spec.enzymes else free)


def _plan(spec: ExperimentSpec) -> list[_TrialJob]:
    if not spec.simulated or spec.mode is Mode.DECAY_INTERVAL:
        return []
    sim_cfg, _, _, matched = _models(spec)
    if spec.mode is Mode.IMPULSE_RESPONSE:
        times = _time_grid(spec, sim_cfg.dt)
        return [_TrialJob(0, k, spec.master_seed, (1,), times) for k in _trial_ids(spec)]
    if spec.mode is Mode.FIRST_BIT_DETECTION:
        times = _decision_times(sim_cfg, 1, sim_cfg.bit_interval, matched.t_max)
        return [_TrialJob(0, k, spec.master_seed, (1,), times) for k in _trial_ids(spec)]
    intervals = spec.t_b_us if spec.mode is Mode.THRESHOLD_SWEEP else spec.t_b_us[:1]
    jobs = []
    for g, tb in enumerate(intervals):
        cfg_g = replace(sim_cfg, bit_interval=tb * 1e-6)
        seed = group_seed(spec.master_seed, g)
        for k in _trial_ids(spec):
            bits = _trial_bits(spec, cfg_g, k)
            times = _decision_times(cfg_g, len(bits), cfg_g.bit_interval, matched.t_max)
            jobs.append(_TrialJob(g, k, seed, bits, times))
    return jobs


def _simulate(spec: ExperimentSpec) -> dict[tuple[int, int], ObservationSeries]:
    jobs = _plan(spec)
    if not jobs:
        return {}
    sim_cfg = _models(spec)[0]
    _check_budget(spec, sim_cfg, jobs)
    intervals = spec.t_b_us if spec.mode is Mode.THRESHOLD_SWEEP else spec.t_b_us[:1]
    out: dict[tuple[int, int], ObservationSeries] = {}
    for g, tb in enumerate(intervals):
        cfg_g = replace(sim_cfg, bit_interval=tb * 1e-6)
        log.info("simulating %d trials (group %d)", sum(j.group == g for j in jobs), g)
        out.update(run_trials(cfg_g, [j for j in jobs if j.group == g], spec.workers))
    return out


def _records(trials: dict, group: int = 0) -> list[ObservationSeries]:
    return [trials[k] for k in sorted(k for k in trials if k[0] == group)]


def _build_impulse(spec, trials):
    sim_cfg, lb, free, _ = _models(spec)
    times = _time_grid(spec, sim_cfg.dt)
    schema = ["t_us", "analytic_lb", "analytic_noenzyme"]
    cols = [np.array(times) * 1e6,
            np.array([expected_observed(t, lb) for t in times]),
            np.array([expected_observed(t, free) for t in times])]
    if spec.simulated:
        counts = np.array([r.counts for r in _records(trials)], dtype=float)
        mean, se = _mean_stderr(counts)
        schema += ["sim_mean", "sim_stderr"]
        cols += [mean, se]
    return schema, _zip_rows(cols), {}


def _detection_prob(model: ChannelModel, xi: int, family: Family, t: float) -> float:
    p = observation_probability(t, model).p_ob
    n = model.cfg.n_emit
    if family is Family.BINOMIAL:
        cm = CountModel.binomial(n, p)
    elif family is Family.POISSON:
        cm = CountModel.poisson(n * p)
    else:
        cm = CountModel.gaussian(n * p, p)
    return count_tail(cm, xi)


def _build_detect(spec, trials):
    _, lb, free, _ = _models(spec)
    schema = ["xi", "analytic_lb", "analytic_noenzyme"]
    rows = [[xi, _detection_prob(lb, xi, spec.family, lb.t_max),
             _detection_prob(free, xi, spec.family, free.t_max)] for xi in spec.thresholds]
    if spec.simulated:
        counts = np.array([r.counts[0] for r in _records(trials)])
        schema += ["sim_mean", "sim_stderr"]
        for row in rows:
            row.extend(_proportion(counts >= row[0]))
    return schema, [tuple(r) for r in rows], {}


def _bits_matrix(spec: ExperimentSpec, records: list[ObservationSeries], cfg: SystemConfig) -> np.ndarray:
    if spec.bits is not None:
        return np.array([spec.bits], dtype=np.int8)
    if records:
        ids = [r.trial_id for r in records]
    else:
        ids = list(_trial_ids(spec))
    return np.array([_trial_bits(spec, cfg, k) for k in ids], dtype=np.int8)


def _build_ber(spec, trials):
    sim_cfg, lb, free, _ = _models(spec)
    xi = spec.thresholds[0]
    tb = spec.t_b_us[0] * 1e-6
    records = _records(trials)
    bits = _bits_matrix(spec, records, sim_cfg)
    # analytic errors at the step-aligned instant the simulated detector samples
    err_lb = sequence_bit_errors(bits, lb, tb, xi, spec.family, spec.isi,
                                 sampling_time(lb, rounded=True)).mean(axis=0)
    err_free = sequence_bit_errors(bits, free, tb, xi, spec.family, spec.isi,
                                   sampling_time(free, rounded=True)).mean(axis=0)
    n_bits = bits.shape[1]
    schema = ["bit", "analytic_lb", "analytic_noenzyme"]
    cols = [np.arange(1, n_bits + 1), err_lb, err_free]
    extra = {"threshold": xi, "analytic_lb_mean": float(err_lb.mean()),
             "analytic_noenzyme_mean": float(err_free.mean())}
    if spec.simulated:
        sent = np.array([r.counts for r in records])
        sent_bits = np.array([_trial_bits(spec, sim_cfg, r.trial_id) for r in records])
        wrong = (sent >= xi).astype(np.int8) != sent_bits
        per_bit = [_proportion(wrong[:, j]) for j in range(n_bits)]
        schema += ["sim_mean", "sim_stderr"]
        cols += [np.array([p for p, _ in per_bit]), np.array([s for _, s in per_bit])]
        p, s = _proportion(wrong.ravel())
        extra.update(sim_error=p, sim_error_stderr=s, decisions=int(wrong.size))
    return schema, _zip_rows(cols), extra


def _build_sweep(spec, trials):
    sim_cfg, lb, free, _ = _models(spec)
    schema = ["t_b_us", "xi", "analytic_lb", "analytic_noenzyme"]
    if spec.simulated:
        schema += ["sim_mean", "sim_stderr"]
    rows = []
    kw = dict(family=spec.family, isi_mode=spec.isi, n_bits=spec.n_bits,
              n_sequences=spec.sequences, rng_seed=spec.master_seed, workers=spec.workers)
    for g, tb_us in enumerate(spec.t_b_us):
        tb = tb_us * 1e-6
        if spec.simulated:
            records = _records(trials, g)
            counts = np.array([r.counts for r in records])
            cfg_g = replace(sim_cfg, bit_interval=tb)
            sent = np.array([_trial_bits(spec, cfg_g, r.trial_id) for r in records])
        for xi in spec.thresholds:
            row = [tb_us, xi, mean_error_prob(lb, tb, xi, **kw).mean_error,
                   mean_error_prob(free, tb, xi, **kw).mean_error]
            if spec.simulated:
                wrong = (counts >= xi).astype(np.int8) != sent
                row.extend(_proportion(wrong.ravel()))
            rows.append(tuple(row))
    return schema, rows, {"optimum": sweep_optima(schema, rows)}


def sweep_optima(schema: Sequence[str], rows: Sequence[tuple]) -> list[dict[str, Any]]:
    """Argmin threshold of every error column at every bit interval (ties -> smaller xi)."""
    schema = list(schema)
    out = []
    value_cols = [c for c in ("analytic_lb", "analytic_noenzyme", "sim_mean") if c in schema]
    for tb in sorted({r[0] for r in rows}):
        sub = [r for r in rows if r[0] == tb]
        for col in value_cols:
            i = schema.index(col)
            best = min(sub, key=lambda r: (r[i], r[1]))
            out.append({"t_b_us": tb, "column": col, "xi": int(best[1]), "value": float(best[i])})
    return out


def _build_decay(spec, trials):
    _, lb, free, _ = _models(spec)
    rows = []
    for a in spec.alphas:
        rows.append((a,) + tuple(
            decay_time(m, DecayQuery(a, meth)) * 1e6
            for m in (lb, free)
            for meth in (DecayMethod.NUMERIC_SCAN, DecayMethod.CLOSED_FORM_BOUND)
        ))
    schema = ["alpha", "numeric_lb_us", "bound_lb_us", "numeric_noenzyme_us", "bound_noenzyme_us"]
    return schema, rows, {"t_max_lb_us": lb.t_max * 1e6, "t_max_noenzyme_us": free.t_max * 1e6,
                          "n_max_lb": lb.n_max, "n_max_noenzyme": free.n_max}


_BUILDERS = {
    Mode.IMPULSE_RESPONSE: _build_impulse,
    Mode.DECAY_INTERVAL: _build_decay,
    Mode.FIRST_BIT_DETECTION: _build_detect,
    Mode.KNOWN_SEQUENCE_ERROR: _build_ber,
    Mode.THRESHOLD_SWEEP: _build_sweep,
}


def _zip_rows(cols) -> list[tuple]:
    return [tuple(_scalar(v) for v in row) for row in zip(*cols)]


def _scalar(v):
    v = v.item() if isinstance(v, np.generic) else v
    return v


def _table(spec: ExperimentSpec, trials: dict) -> ResultTable:
    schema, rows, extra = _BUILDERS[spec.mode](spec, trials)
    sim_cfg = _models(spec)[0]
    metadata = {
        "name": spec.name,
        "mode": spec.mode.value,
        "config_digest": sim_cfg.digest(),
        "master_seed": spec.master_seed,
        "code_version": __version__,
        "spec": spec.to_mapping(),
        **extra,
    }
    return ResultTable(tuple(schema), rows, metadata, trials)


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run the analytic pipeline of ``spec.mode`` and, where requested, the simulation.

    Raises :class:`BudgetError` before any simulation if the estimated cost
    exceeds ``spec.budget``.
    """
    return _table(spec, _simulate(spec))


def rerun(table: ResultTable) -> ResultTable:
    """Regenerate a table from its own metadata."""
    return run_experiment(ExperimentSpec.from_mapping(table.metadata["spec"]))


def summarize(tables: Sequence[ResultTable]) -> ResultTable:
    """Merge trial shards of one experiment into the table a serial run would give."""
    if not tables:
        raise ValueError("summarize needs at least one table")
    first = tables[0]
    base = dict(first.metadata["spec"])
    strip = ("trial_offset", "trials", "workers", "budget")
    for t in tables[1:]:
        if t.schema != first.schema:
            raise SchemaError(f"schema mismatch: {t.schema} vs {first.schema}")
        other = t.metadata["spec"]
        if {k: v for k, v in other.items() if k not in strip} != {k: v for k, v in base.items() if k not in strip}:
            raise SchemaError("tables come from different experiments")
        if t.metadata["config_digest"] != first.metadata["config_digest"]:
            raise SchemaError("tables were produced from different configs")
    merged: dict[tuple[int, int], ObservationSeries] = {}
    for t in tables:
        overlap = merged.keys() & t.trial_data.keys()
        if overlap:
            raise ValueError(f"shards overlap in {len(overlap)} trials")
        merged.update(t.trial_data)
    specs = [ExperimentSpec.from_mapping(t.metadata["spec"]) for t in tables]
    offset = min(s.trial_offset for s in specs)
    n = sum(s.trials for s in specs)
    spec = replace(specs[0], trial_offset=offset, trials=n, workers=1)
    return _table(spec, merged)


PLOT_SCRIPT = '''"""Plot {csv_name}; needs pandas and matplotlib."""
import sys
import pandas as pd
import matplotlib.pyplot as plt

df = pd.read_csv({csv_name!r})
x = df.columns[0]
ax = plt.gca()
for col in df.columns[1:]:
    if col.endswith("stderr") or col == "xi":
        continue
    err = df.get("sim_stderr") if col == "sim_mean" else None
    ax.errorbar(df[x], df[col], yerr=err, label=col, marker="." if err is not None else None)
ax.set_xlabel(x)
ax.legend()
plt.savefig(sys.argv[1] if len(sys.argv) > 1 else {png_name!r}, dpi=150)
'''


def write_plot_script(csv_path: str | os.PathLike) -> Path:
    csv_path = Path(csv_path)
    target = csv_path.with_suffix(".plot.py")
    target.write_text(PLOT_SCRIPT.format(csv_name=csv_path.name, png_name=csv_path.stem + ".png"))
    return target
