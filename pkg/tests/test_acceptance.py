"""Acceptance suite: one test per criterion, each with its runtime bound."""

import itertools
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from ringdrift.accelerator import Accelerator, AcceleratorConfig, CycleLedger, map_matrix, partition
from ringdrift.calibration import CalibrationConfig, StopReason, calibrate, calibrate_block, calibration_cycles
from ringdrift.controller import ControllerConfig, ControllerState, Decision, mark_remediated, observe, overhead_bound
from ringdrift.device import MrrParams, phase_from_weight, through_transmission, weight_from_transmission
from ringdrift.harness.cli import bundled_scenario
from ringdrift.harness.config import load_scenario, scenario_from_dict
from ringdrift.harness.runner import run_scenario
from ringdrift.harness.trace import trace_to_csv, trace_to_json
from ringdrift.remapping import RemapConfig, assignment_cost, build_cost_matrix, hungarian, remap_cycles, solve_lap
from ringdrift.rng import Stream, substream
from ringdrift.variation import (
    NoiseEnvironment,
    TemperatureField,
    TempProfile,
    TempSchedule,
    build_crosstalk_matrix,
)

REFERENCE = json.loads((Path(__file__).parent / "data" / "reference_ct_pv2_td1.json").read_text())


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.2f}s, bound {self.limit}s"


@pytest.mark.criterion(1)
def test_cycle_formula_exactness():
    with Clock(1.0):
        # scenario events: remap = n_chunks (R m k + R^3), calibration = T ceil(beta n) m k
        cfg = scenario_from_dict({"preset": "CT+PV.2+TD.1", "t_max": 1000})
        trace = run_scenario(cfg)
        R, k = cfg.accelerator.tiles, cfg.accelerator.k
        m_cal, m_remap, beta = cfg.calibration.probes, cfg.remap.probes, cfg.calibration.sparsity
        assert trace.events
        for ev in trace.events:
            n = ev["calibration_chunks"]
            assert ev["remap_cycles"] == len(ev["assignments"]) * remap_cycles(R, m_remap, k)
            assert ev["calibration_cycles"] == calibration_cycles(beta, ev["calibration_iterations"], m_cal, k, n_chunks=n)
        total_cal = sum(ev["calibration_cycles"] for ev in trace.events)
        total_remap = sum(ev["remap_cycles"] for ev in trace.events)
        assert trace.final["calibration_cycles"] == total_cal
        assert trace.final["remap_cycles"] == total_remap

        # with beta * n integral the charge is beta T m k on every block, integer-for-integer
        acfg = AcceleratorConfig(tiles=1, cores=1, k=8)
        acc = Accelerator(acfg)
        mp, n = map_matrix(np.random.default_rng(0).uniform(-1, 1, (16, 40)), acfg)
        assert n == 10
        snap = NoiseEnvironment(temperature=TemperatureField(TempSchedule.CONSTANT, offset=0.5)).snapshot(0, 1, 1, 8)
        for m, T in [(1, 20), (2, 7)]:
            led = CycleLedger()
            rep = calibrate(acc, [mp], snap, CalibrationConfig(probes=m, sparsity=0.2, max_iters=T), led, seed=m)
            # beta T m k per block, summed exactly over the n blocks
            expected = Fraction(1, 5) * rep.iterations * m * 8 * n
            assert expected.denominator == 1
            assert led.calibration_cycles == expected
        assert remap_cycles(4, 1, 8) == 96 and remap_cycles(4, 2, 8) == 128


@pytest.mark.criterion(2)
def test_lap_optimality():
    with Clock(10.0):
        mismatches = 0
        for R in range(2, 7):
            perms = np.array(list(itertools.permutations(range(R))))
            rows = np.arange(R)
            rng = substream(0, Stream.TRIAL, R)
            for _ in range(1000):
                cost = rng.uniform(0, 1, (R, R))
                brute = cost[rows, perms].sum(axis=1).min()
                mismatches += not math.isclose(assignment_cost(cost, hungarian(cost)), brute, rel_tol=0, abs_tol=1e-12)
        assert mismatches == 0


@pytest.mark.criterion(3)
def test_calibration_convergence():
    with Clock(30.0):
        acfg = AcceleratorConfig(tiles=1, cores=1, k=8)
        acc = Accelerator(acfg)
        env = NoiseEnvironment(
            temperature=TemperatureField(TempSchedule.CONSTANT, offset=0.5),
            crosstalk=build_crosstalk_matrix(8, l_h=60.0, l_v=200.0, k1=0.1),
        )
        snap = env.snapshot(0, 1, 1, 8)
        assert not snap.stochastic
        cfg = CalibrationConfig(probes=1, sparsity=1.0, max_iters=200, threshold=0.0038, lr=2e-3)
        met = 0
        for seed in range(100):
            W = substream(seed, Stream.TRIAL).uniform(-1, 1, (8, 8))
            mp, _ = map_matrix(W, acfg)
            rep = calibrate_block(acc, mp, snap, cfg, CycleLedger(), seed=seed)
            met += rep.stop_reason is StopReason.THRESHOLD_MET and rep.final_mae[(0, 0, 0)] < 0.0038
        assert met >= 95, f"{met}/100 blocks converged"


@pytest.mark.criterion(4)
def test_encoder_roundtrip():
    with Clock(1.0):
        params = MrrParams()
        lo, hi = params.transmission_range
        rng = substream(0, Stream.TRIAL)
        scale = 1.7
        w = rng.uniform(scale * (2 * lo - 1), scale * (2 * hi - 1), 100_000)
        back = weight_from_transmission(through_transmission(phase_from_weight(w, scale, params), params), scale)
        assert np.max(np.abs(back - w)) < 1e-9 * scale


@pytest.mark.criterion(5)
def test_controller_overhead_arithmetic():
    with Clock(10.0):
        tau, cost, horizon = 200, 10, 10_000
        cfg = ControllerConfig(cooling_time=tau, monitor_period=1)
        state = ControllerState(t_prev=300.0)
        ledger = CycleLedger()
        temps = np.full((4, 4), 300.0)
        for t in range(horizon):
            ledger.charge("inference", 1)
            if observe(cfg, state, temps, t, lambda: 0.06) is Decision.REMEDIATE:
                ledger.charge("calibration", cost)
                mark_remediated(state, temps, t)
        assert abs(ledger.overhead_ratio - 0.05) <= 0.001
        assert ledger.overhead_ratio <= overhead_bound(tau, cost) + cost / horizon


def _reference_run(remediation: bool):
    cfg = load_scenario(bundled_scenario("ct_pv2_td1.json")).model_copy(update={"remediation": remediation})
    return run_scenario(cfg)


@pytest.mark.criterion(6)
def test_end_to_end_recovery():
    with Clock(300.0):
        off = _reference_run(False)
        on = _reference_run(True)
        clean = on.manifest["clean_accuracy"]
        assert clean - off.final["accuracy"] >= 0.20
        assert clean - on.final["accuracy"] <= 0.02
        assert on.overhead <= 0.10
        # regression against the pinned seeded reference
        for trace, ref in ((off, REFERENCE["no_remediation"]), (on, REFERENCE["remediated"])):
            assert trace.final["accuracy"] == pytest.approx(ref["final_accuracy"], abs=2 / 256)
            assert min(trace.column("accuracy")) == pytest.approx(ref["min_accuracy"], abs=2 / 256)
            assert trace.overhead == pytest.approx(ref["overhead"], abs=1e-3)
            assert len(trace.events) == ref["events"]


@pytest.mark.criterion(7)
def test_remapping_benefit():
    with Clock(60.0):
        acfg = AcceleratorConfig()
        acc = Accelerator(acfg)
        env = NoiseEnvironment(temperature=TemperatureField(TempSchedule.LINEAR, TempProfile.CORNER_HOTSPOT, t_max=20000))
        never_worse = strictly = 0
        for seed in range(100):
            rng = substream(seed, Stream.TRIAL)
            W = rng.uniform(-1, 1, (32, 32))
            band_salience = rng.lognormal(0.0, 1.0, acfg.tiles)
            G = rng.standard_normal((32, 32)) * np.repeat(band_salience, acfg.k)[:, None]
            mp, _ = map_matrix(W, acfg)
            grads = partition(G, acfg)[0][0, 0]
            snap = env.snapshot(int(rng.integers(5000, 20001)), acfg.tiles, acfg.cores, acfg.k)
            costs = build_cost_matrix(acc, mp, 0, 0, snap, RemapConfig(), CycleLedger(), grads, seed=seed)
            solved = solve_lap(costs).total_cost
            direct = assignment_cost(costs.epsilon, np.arange(acfg.tiles))
            never_worse += solved <= direct
            strictly += solved < direct
        assert never_worse == 100
        assert strictly >= 95, f"strictly lower in {strictly}/100 trials"


@pytest.mark.criterion(8)
def test_determinism():
    with Clock(300.0):
        cfg = load_scenario(bundled_scenario("ct_pv2_td1.json"))
        a, b = run_scenario(cfg), run_scenario(cfg)
        assert trace_to_csv(a).encode() == trace_to_csv(b).encode()
        assert trace_to_json(a).encode() == trace_to_json(b).encode()
        short = scenario_from_dict({"preset": "CT+PV.1+TD.4", "t_max": 2000, "seed": 11})
        assert trace_to_json(run_scenario(short)) == trace_to_json(run_scenario(short))
        other = scenario_from_dict({"preset": "CT+PV.1+TD.4", "t_max": 2000, "seed": 12})
        assert trace_to_csv(run_scenario(other)) != trace_to_csv(run_scenario(short))


@pytest.mark.criterion(9)
def test_temperature_field_invariants():
    with Clock(1.0):
        t = np.arange(0, 20001)
        lin = TemperatureField(TempSchedule.LINEAR).chip_temperature(t)
        cos = TemperatureField(TempSchedule.COSINE).chip_temperature(t)
        assert lin.min() >= 300.0 and lin.max() <= 301.0
        assert cos.min() >= 300.0 and cos.max() <= 300.5
        hot = TemperatureField(TempSchedule.LINEAR, TempProfile.CORNER_HOTSPOT)
        r = np.arange(4)[:, None]
        c = np.arange(4)[None, :]
        for step in range(0, 20001, 500):
            grid = hot.ptc_temperatures(step, 4, 4)
            expected = 300.0 + np.exp(-np.sqrt(r**2 + c**2)) * (step / 20000)
            assert np.max(np.abs(grid - expected)) <= 1e-12
