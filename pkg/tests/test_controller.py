import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringdrift.accelerator import Accelerator, AcceleratorConfig, CycleLedger, map_matrix
from ringdrift.calibration import CalibrationConfig
from ringdrift.controller import (
    ControllerConfig,
    ControllerState,
    Decision,
    mark_remediated,
    monitor_subset,
    observe,
    overhead_bound,
    probe_nmae,
    remediate,
)
from ringdrift.remapping import RemapConfig, remap_cycles
from ringdrift.variation import NoiseEnvironment, NoiseSnapshot, TemperatureField, TempSchedule

CFG = ControllerConfig()


def never_called():
    raise AssertionError("NMAE probe should not run")


def test_temperature_trigger_skips_probe():
    state = ControllerState(t_prev=300.0)
    assert observe(CFG, state, np.full((2, 2), 300.02), 0, never_called) is Decision.REMEDIATE
    assert state.log[-1]["trigger"] == "temperature"


def test_cooling_drift_also_triggers():
    state = ControllerState(t_prev=300.3)
    assert observe(CFG, state, np.full((2, 2), 300.2), 0, never_called) is Decision.REMEDIATE


def test_nmae_trigger_and_quiet():
    state = ControllerState(t_prev=300.0)
    assert observe(CFG, state, np.full(4, 300.0), 0, lambda: 0.06) is Decision.REMEDIATE
    state = ControllerState(t_prev=300.0)
    assert observe(CFG, state, np.full(4, 300.0), 0, lambda: 0.04) is Decision.NO_ACTION


def test_cooldown_blocks_everything():
    state = ControllerState(t_prev=300.0)
    mark_remediated(state, np.full(4, 300.0), 100)
    assert observe(CFG, state, np.full(4, 305.0), 299, never_called) is Decision.NO_ACTION
    assert observe(CFG, state, np.full(4, 305.0), 300, never_called) is Decision.REMEDIATE
    with pytest.raises(ValueError):
        observe(CFG, state, np.full(4, 300.0), 50, never_called)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(cooling_time=10, monitor_period=50)
    with pytest.raises(ValueError):
        ControllerConfig(probe_fraction=0.0)


def test_overhead_bound_example():
    assert overhead_bound(200, 10) == pytest.approx(0.05)
    assert overhead_bound(float("inf"), 10) == 0.0
    with pytest.raises(ValueError):
        overhead_bound(0, 1)


@settings(max_examples=30, deadline=None)
@given(tau=st.integers(1, 400), cost=st.integers(0, 50), horizon=st.integers(1, 5000), nmae=st.floats(0.0, 1.0))
def test_event_spacing_respects_cooldown(tau, cost, horizon, nmae):
    cfg = ControllerConfig(cooling_time=tau, monitor_period=1)
    state = ControllerState(t_prev=300.0)
    events = []
    for t in range(horizon):
        if observe(cfg, state, [300.0], t, lambda: nmae) is Decision.REMEDIATE:
            events.append(t)
            mark_remediated(state, [300.0], t)
    assert all(b - a >= tau for a, b in zip(events, events[1:]))
    assert len(events) * cost <= overhead_bound(tau, cost) * horizon + cost


def test_monitor_subset():
    sub = monitor_subset(40, 0.1, seed=3)
    assert len(sub) == 4 and len(set(sub.tolist())) == 4
    np.testing.assert_array_equal(sub, monitor_subset(40, 0.1, seed=3))
    assert len(monitor_subset(2, 0.1, 0)) == 1


def test_probe_nmae_and_remediate_charges():
    acfg = AcceleratorConfig()
    acc = Accelerator(acfg)
    mps = [map_matrix(np.random.default_rng(i).uniform(-1, 1, (32, 32)), acfg)[0] for i in range(2)]
    env = NoiseEnvironment(temperature=TemperatureField(TempSchedule.CONSTANT, offset=0.5))
    snap = env.snapshot(0, 4, 4, 8)
    led = CycleLedger()
    value = probe_nmae(acc, mps, np.array([0, 1]), snap, 1, led, 0)
    assert value > 0.05
    assert led.probe_cycles == 2 * 8
    assert probe_nmae(acc, mps, np.array([0]), NoiseSnapshot.quiet(4, 4), 1, CycleLedger(), 0) < 1e-12

    led = CycleLedger()
    ccfg = CalibrationConfig(max_iters=5, sparsity=0.5)
    rep = remediate(acc, mps, snap, ccfg, RemapConfig(method="mae"), led, seed=0)
    assert rep.remap_cycles == 2 * remap_cycles(4, 1, 8) == led.remap_cycles
    assert rep.calibration_cycles == rep.calibration.iterations * 1 * 8 == led.calibration_cycles
    assert set(rep.assignments) == {(0, 0, 0), (1, 0, 0)}
