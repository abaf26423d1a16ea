from .engine import (
    TRIAL_COLUMNS,
    ObservationSeries,
    Particle,
    SimState,
    decide,
    detection_steps,
    emission_cloud,
    emit,
    observe,
    run_trial,
    step,
    trial_rng,
    unimolecular_probs,
)

__all__ = [
    "TRIAL_COLUMNS",
    "ObservationSeries",
    "Particle",
    "SimState",
    "decide",
    "detection_steps",
    "emission_cloud",
    "emit",
    "observe",
    "run_trial",
    "step",
    "trial_rng",
    "unimolecular_probs",
]
