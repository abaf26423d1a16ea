"""Physical constants, molecular species and system parameterization.

Everything is carried in SI base units (m, s, molecule).  Config files use
the customary units suffixed on their keys (nm, um, us) and are converted
on ingestion by :func:`config_from_mapping`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

logger = logging.getLogger(__name__)

BOLTZMANN = 1.38e-23  # J/K, value used throughout the link model
ROOM_TEMPERATURE = 298.0  # K (25 C)
WATER_VISCOSITY = 1e-3  # kg m^-1 s^-1

# r_rms must exceed r_B by at least this factor for the binding-radius formula
BINDING_RADIUS_RATIO = 5.0

CONFIG_KEYS = (
    "v_enz_um3",
    "n_emit",
    "n_enzyme",
    "k1",
    "k_minus1",
    "k2",
    "r0_nm",
    "rob_nm",
    "rA_nm",
    "rE_nm",
    "rEA_nm",
    "dt_us",
    "bit_interval_us",
    "p1",
    "temperature_K",
    "viscosity",
)

PRESETS = ("system1", "system2", "system3")


class ConfigError(ValueError):
    """Raised for an invalid or unloadable system configuration."""


class Kind(enum.Enum):
    A = "A"
    E = "E"
    EA = "EA"


@dataclass(frozen=True)
class EnvironmentConstants:
    temperature: float = ROOM_TEMPERATURE
    viscosity: float = WATER_VISCOSITY
    boltzmann: float = BOLTZMANN

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not self.viscosity > 0:
            raise ConfigError(f"viscosity must be positive, got {self.viscosity}")


def diffusion_coefficient(radius: float, env: EnvironmentConstants) -> float:
    """Einstein relation for a sphere of ``radius`` metres, in m^2/s."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    return (env.boltzmann * env.temperature) / (6 * math.pi * env.viscosity * radius)


@dataclass(frozen=True)
class SpeciesSpec:
    kind: Kind
    radius: float
    diffusion_coefficient: float

    @classmethod
    def from_radius(cls, kind: Kind, radius: float, env: EnvironmentConstants) -> "SpeciesSpec":
        return cls(kind, radius, diffusion_coefficient(radius, env))


@dataclass(frozen=True)
class SystemConfig:
    """One full parameterization of the link, in SI units.

    ``ea_uses_da`` forces the intermediate to diffuse with the information
    molecule's coefficient instead of its own Einstein value; it exists for
    sensitivity checks only.
    """

    n_emit: int
    n_enzyme: int
    v_enz_side: float
    k1: float
    k_minus1: float
    k2: float
    rx_distance: float
    rx_radius: float
    radius_a: float
    radius_e: float
    radius_ea: float
    dt: float
    bit_interval: float
    p1: float = 0.5
    env: EnvironmentConstants = field(default_factory=EnvironmentConstants)
    ea_uses_da: bool = False

    def __post_init__(self):
        for name in ("n_emit", "n_enzyme", "v_enz_side", "k1", "k_minus1", "k2",
                     "rx_distance", "rx_radius", "dt", "bit_interval"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be finite and nonnegative, got {value}")
        for name in ("radius_a", "radius_e", "radius_ea"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.rx_radius < self.rx_distance:
            raise ConfigError("receiver radius must be smaller than its distance from the transmitter")
        if self.v_enz_side < 3 * self.rx_distance * (1 - 1e-12):
            raise ConfigError(
                f"enzyme cube side {self.v_enz_side:.3g} m is less than three times "
                f"the receiver distance {self.rx_distance:.3g} m"
            )
        if not 0 <= self.p1 <= 1:
            raise ConfigError(f"p1 must lie in [0, 1], got {self.p1}")
        r_b, ok = binding_radius(self)
        if not ok:
            logger.warning(
                "r_rms = %.3g m is less than %g x r_B = %.3g m; the binding radius "
                "formula is unreliable for this config",
                rms_separation(self), BINDING_RADIUS_RATIO, r_b,
            )

    @property
    def species(self) -> dict[Kind, SpeciesSpec]:
        return {
            Kind.A: SpeciesSpec.from_radius(Kind.A, self.radius_a, self.env),
            Kind.E: SpeciesSpec.from_radius(Kind.E, self.radius_e, self.env),
            Kind.EA: SpeciesSpec.from_radius(Kind.EA, self.radius_ea, self.env),
        }

    @property
    def d_a(self) -> float:
        return diffusion_coefficient(self.radius_a, self.env)

    @property
    def d_e(self) -> float:
        return diffusion_coefficient(self.radius_e, self.env)

    @property
    def d_ea(self) -> float:
        if self.ea_uses_da:
            return self.d_a
        return diffusion_coefficient(self.radius_ea, self.env)

    @property
    def v_ob(self) -> float:
        return 4.0 / 3.0 * math.pi * self.rx_radius**3

    @property
    def v_enz(self) -> float:
        return self.v_enz_side**3

    @property
    def c_etot(self) -> float:
        return self.n_enzyme / self.v_enz

    def without_enzymes(self) -> "SystemConfig":
        return replace(self, n_enzyme=0)

    def to_mapping(self) -> dict[str, float]:
        """Inverse of :func:`config_from_mapping` (customary units)."""
        return {
            "v_enz_um3": self.v_enz * 1e18,
            "n_emit": self.n_emit,
            "n_enzyme": self.n_enzyme,
            "k1": self.k1,
            "k_minus1": self.k_minus1,
            "k2": self.k2,
            "r0_nm": self.rx_distance * 1e9,
            "rob_nm": self.rx_radius * 1e9,
            "rA_nm": self.radius_a * 1e9,
            "rE_nm": self.radius_e * 1e9,
            "rEA_nm": self.radius_ea * 1e9,
            "dt_us": self.dt * 1e6,
            "bit_interval_us": self.bit_interval * 1e6,
            "p1": self.p1,
            "temperature_K": self.env.temperature,
            "viscosity": self.env.viscosity,
        }

    def digest(self) -> str:
        """Stable short hash of every field that affects results."""
        payload = asdict(self)
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def rms_separation(cfg: SystemConfig) -> float:
    """Root-mean-square A-E separation accumulated over one time step."""
    return math.sqrt(2 * (cfg.d_a + cfg.d_e) * cfg.dt)


def binding_radius(cfg: SystemConfig) -> tuple[float, bool]:
    """Binding radius for the A + E reaction and whether r_rms >> r_B holds."""
    r_b = (3 * cfg.k1 * cfg.dt / (4 * math.pi)) ** (1.0 / 3.0)
    if r_b == 0:
        return 0.0, True
    return r_b, rms_separation(cfg) >= BINDING_RADIUS_RATIO * r_b


def config_from_mapping(raw: Mapping[str, Any]) -> SystemConfig:
    keys = set(raw)
    missing = [k for k in CONFIG_KEYS if k not in keys]
    unknown = sorted(keys - set(CONFIG_KEYS))
    if missing or unknown:
        raise ConfigError(f"config keys mismatch: missing={missing} unknown={unknown}")
    try:
        v = {k: float(raw[k]) for k in CONFIG_KEYS}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"non-numeric config value: {exc}") from exc
    for k in ("n_emit", "n_enzyme"):
        if v[k] != int(v[k]):
            raise ConfigError(f"{k} must be an integer count")
    if v["v_enz_um3"] < 0:
        raise ConfigError("v_enz_um3 must be nonnegative")
    return SystemConfig(
        n_emit=int(v["n_emit"]),
        n_enzyme=int(v["n_enzyme"]),
        v_enz_side=(v["v_enz_um3"] * 1e-18) ** (1.0 / 3.0),
        k1=v["k1"],
        k_minus1=v["k_minus1"],
        k2=v["k2"],
        rx_distance=v["r0_nm"] * 1e-9,
        rx_radius=v["rob_nm"] * 1e-9,
        radius_a=v["rA_nm"] * 1e-9,
        radius_e=v["rE_nm"] * 1e-9,
        radius_ea=v["rEA_nm"] * 1e-9,
        dt=v["dt_us"] * 1e-6,
        bit_interval=v["bit_interval_us"] * 1e-6,
        p1=v["p1"],
        env=EnvironmentConstants(temperature=v["temperature_K"], viscosity=v["viscosity"]),
    )


def load_config(source: str | Path) -> SystemConfig:
    """Load a preset by name (``system1``..``system3``) or a JSON file path."""
    name = str(source)
    try:
        if name in PRESETS:
            text = resources.files("enzlink.presets").joinpath(f"{name}.json").read_text()
        else:
            text = Path(name).read_text()
        raw = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {name!r}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a flat key/value object")
    return config_from_mapping(raw)
