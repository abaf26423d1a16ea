import json
import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from enzlink.physchem import (
    CONFIG_KEYS,
    PRESETS,
    ConfigError,
    EnvironmentConstants,
    Kind,
    binding_radius,
    config_from_mapping,
    diffusion_coefficient,
    load_config,
    rms_separation,
)


def test_einstein_relation_for_half_nanometre_sphere():
    # kB T / (6 pi eta R) evaluated by hand: 1.38e-23 * 298 / (6 pi 1e-3 0.5e-9)
    expected = 4.11240e-21 / 9.42478e-12
    assert diffusion_coefficient(0.5e-9, EnvironmentConstants()) == pytest.approx(expected, rel=1e-5)


@given(st.floats(1e-10, 1e-7), st.floats(1.1, 10))
def test_diffusion_scales_inversely_with_radius(r, factor):
    env = EnvironmentConstants()
    assert diffusion_coefficient(r, env) / diffusion_coefficient(r * factor, env) == pytest.approx(factor)


@pytest.mark.parametrize("r", [0.0, -1e-9])
def test_nonpositive_radius_rejected(r):
    with pytest.raises(ValueError):
        diffusion_coefficient(r, EnvironmentConstants())


def test_environment_validation():
    with pytest.raises(ConfigError):
        EnvironmentConstants(temperature=0)
    with pytest.raises(ConfigError):
        EnvironmentConstants(viscosity=-1)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_roundtrip(name):
    cfg = load_config(name)
    again = config_from_mapping(cfg.to_mapping())
    assert again.to_mapping() == pytest.approx(cfg.to_mapping(), rel=1e-12)
    assert cfg.c_etot == pytest.approx(1e23)


def test_system1_units(system1):
    assert system1.rx_distance == pytest.approx(300e-9)
    assert system1.rx_radius == pytest.approx(45e-9)
    assert system1.dt == pytest.approx(0.5e-6)
    assert system1.v_enz_side == pytest.approx(1e-6)
    assert system1.species[Kind.EA].radius == pytest.approx(3e-9)


def test_binding_radius_zero_rate(system1):
    assert binding_radius(replace(system1, k1=0.0)) == (0.0, True)


def test_ea_switch(system1):
    assert system1.d_ea < system1.d_a
    assert replace(system1, ea_uses_da=True).d_ea == system1.d_a


def test_small_rms_separation_warns(system1, caplog):
    with caplog.at_level("WARNING"):
        replace(system1, dt=1e-12)
    assert "binding radius" in caplog.text
    r_b, ok = binding_radius(replace(system1, dt=1e-12))
    assert not ok and r_b > 0 and rms_separation(replace(system1, dt=1e-12)) < 5 * r_b


def _mapping():
    return load_config("system1").to_mapping()


def test_unknown_and_missing_keys():
    raw = _mapping()
    raw["extra"] = 1
    with pytest.raises(ConfigError, match="unknown"):
        config_from_mapping(raw)
    raw = _mapping()
    del raw["k2"]
    with pytest.raises(ConfigError, match="missing"):
        config_from_mapping(raw)
    assert set(_mapping()) == set(CONFIG_KEYS)


@pytest.mark.parametrize("key,value", [
    ("rob_nm", 400.0),       # receiver reaches the transmitter
    ("v_enz_um3", 0.001),    # cube too small for the link
    ("p1", 1.5),
    ("k2", -1.0),
    ("n_emit", 2.5),
    ("dt_us", "fast"),
])
def test_invalid_values(key, value):
    raw = _mapping()
    raw[key] = value
    with pytest.raises(ConfigError):
        config_from_mapping(raw)


def test_load_config_from_path(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(_mapping()))
    assert load_config(p).to_mapping() == pytest.approx(_mapping(), rel=1e-12)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_digest_changes_with_fields(system1):
    assert system1.digest() != replace(system1, k2=2e6).digest()
    assert len(system1.digest()) == 16 and math.isfinite(int(system1.digest(), 16))
