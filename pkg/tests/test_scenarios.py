from dataclasses import replace

import numpy as np
import pytest

from fluidsolid.nonlinear import NewtonConfig
from fluidsolid.physics import ModelParams
from fluidsolid.scenarios import (ConfigError, RunControls, StrategyConfig, homogeneous_velocity_at, inlet_profile,
                                  lid_profile, parse_config, preset, realize_bcs, serialize_config)


def test_cavity_parameters():
    params, scen = preset("cavity_inclusions")
    expected = dict(rho=1.0, gamma=0.01, d0=1000.0, d_max=0.9, M=1.0, sigma=1.0, epsilon=0.03, delta=0.03,
                    delta_dw=0.02, gamma_dw=0.015)
    for key, value in expected.items():
        assert getattr(params, key) == value, key
    assert params.tau == 0.02
    assert scen.circles == (((0.5, 0.5), 0.2),)
    assert scen.lid_stop_step == 30
    assert (scen.Lx, scen.Ly) == (2.0, 1.0)


def test_channel_parameters():
    params, scen = preset("channel_obstacles")
    expected = dict(rho=1e3, gamma=1e-3, d0=1e3, d_max=0.9, M=1e-3, sigma=1.0, epsilon=6e-3, delta=6e-3,
                    delta_dw=4e-3, gamma_dw=3e-3)
    for key, value in expected.items():
        assert getattr(params, key) == value, key
    assert params.n_pre == 5 and params.M_pre == 1e3
    assert (scen.nx, scen.ny) == (64, 32)
    assert scen.bc_table["right"]["p"] == "dirichlet:0"
    assert scen.bc_table["left"]["v"] == "dirichlet:inlet"


def test_reactive_parameters():
    params, scen = preset("reactive_channel")
    assert (params.D, params.c_star, params.k_c) == (1.0, 2.0, 0.1)
    assert params.tau == 0.02
    assert scen.reactive
    assert (scen.c_initial, scen.c_boundary) == (1.0, 1.5)
    assert scen.circles == (((0.5, 0.5), 0.2), ((1.35, 0.65), 0.2))


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


def test_lid_and_inlet_profiles():
    f_bar = 0.1
    assert lid_profile(1.0, f_bar) == pytest.approx(1.0 / 30.0, rel=1e-14)
    assert lid_profile(0.0, f_bar) == 0.0 and lid_profile(2.0, f_bar) == 0.0
    assert inlet_profile(0.5, f_bar) == pytest.approx(4.1667e-3, rel=1e-4)
    assert inlet_profile(0.0, f_bar) == 0.0 and inlet_profile(1.0, f_bar) == 0.0


def test_lid_stops_after_configured_step():
    params, scen = preset("cavity_inclusions")
    bcs = realize_bcs(scen, params)
    top = np.array([[1.0, 1.0], [0.0, 1.0], [2.0, 1.0]])
    v = bcs.velocity(top, 30 * params.tau)
    assert v[0, 0] == pytest.approx(1.0 / 30.0)
    # corners carry the homogeneous value of the side walls
    assert np.all(v[1:] == 0.0)
    assert np.all(bcs.velocity(top, 31 * params.tau) == 0.0)
    assert not homogeneous_velocity_at(scen, params, 30 * params.tau)
    assert homogeneous_velocity_at(scen, params, 31 * params.tau)


def test_channel_boundary_data():
    params, scen = preset("channel_obstacles")
    bcs = realize_bcs(scen, params)
    assert bcs.pressure_tags == ("right",)
    assert bcs.phi_value == 1.0
    assert set(bcs.phi_tags) == {"left", "right"}
    v = bcs.velocity(np.array([[0.0, 0.5], [2.0, 0.5]]), 0.0)
    assert v[0, 0] == pytest.approx(inlet_profile(0.5, params.f_bar))


def test_minimal_config_gives_preset():
    params, scen, strategy, newton, run = parse_config("[scenario]\nname = cavity_inclusions\n")
    assert (params, scen) == preset("cavity_inclusions")
    assert strategy == StrategyConfig() and newton == NewtonConfig() and run == RunControls()


def test_config_overrides():
    text = """
[scenario]
name = custom
circles = 0.5,0.5,0.2; 1.65,0.65,0.175
lid_stop_step = none

[model]
gamma = 0.1
n_pre = 2

[strategy]
mode = partitioned_iterative
schur_solver = ilu

[run]
steps = 7
adapt = false
"""
    params, scen, strategy, newton, run = parse_config(text)
    assert params.gamma == 0.1 and params.n_pre == 2
    assert scen.circles == (((0.5, 0.5), 0.2), ((1.65, 0.65), 0.175))
    assert scen.lid_stop_step is None
    assert strategy.mode == "partitioned_iterative" and strategy.schur_solver == "ilu"
    assert run.steps == 7 and not run.adapt


def test_delta_dw_above_delta_names_key_and_line():
    text = "[scenario]\nname = cavity_inclusions\n\n[model]\ndelta_dw = 0.05\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == "delta_dw"
    assert info.value.line == 5
    assert "delta_dw" in str(info.value) and "line 5" in str(info.value)


@pytest.mark.parametrize("text, key", [
    ("[scenario]\nname = cavity_inclusions\nbogus = 1\n", "bogus"),
    ("[scenario]\nname = cavity_inclusions\n[model]\ngamma = fast\n", "gamma"),
    ("[scenario]\nname = cavity_inclusions\n[model]\ntau = -1\n", "tau"),
    ("[scenario]\nname = cavity_inclusions\n[strategy]\nmode = magic\n", "mode"),
    ("[scenario]\nname = cavity_inclusions\ncircles = 5,5,0.1\n", "circles"),
    ("[scenario]\nname = cavity_inclusions\nbc.top.v = robin\n", "bc.top.v"),
    ("[scenario]\nname = mars\n", "name"),
    ("[model]\ngamma = 1\n", "name"),
])
def test_invalid_configs_rejected(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nname = custom\n[extras]\nx = 1\n")


@pytest.mark.parametrize("name", ["cavity_inclusions", "channel_obstacles", "reactive_channel"])
def test_serialization_round_trip_is_idempotent(name):
    params, scen = preset(name)
    parts = (replace(params, gamma=0.1 / 3), replace(scen, nx=10), StrategyConfig("partitioned_direct", 1e-9),
             NewtonConfig(relTol=1e-9), RunControls(steps=3, out="somewhere"))
    text = serialize_config(*parts)
    again = parse_config(text)
    assert again == parts
    assert serialize_config(*again) == text


def test_params_validation_messages():
    with pytest.raises(ValueError, match="gamma_dw"):
        ModelParams(gamma_dw=0.02).validate()
