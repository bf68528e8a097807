import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringdrift.accelerator import Accelerator, AcceleratorConfig, CycleLedger, map_matrix
from ringdrift.errors import IoError, SchemaError, ShapeMismatch
from ringdrift.harness.config import scenario_from_dict
from ringdrift.harness.fixture import DenseLayer, accuracy, load_fixture
from ringdrift.harness.runner import Simulation, forward_on_accelerator, run_scenario, software_logits
from ringdrift.harness.trace import (
    COLUMNS,
    RunTrace,
    emit_trace,
    make_row,
    read_trace,
    trace_from_csv,
    trace_to_csv,
)
from ringdrift.variation import NoiseSnapshot

FX = load_fixture()
CFG = AcceleratorConfig()


def test_zero_noise_forward_matches_software():
    acc = Accelerator(CFG)
    mps = [map_matrix(l.weight, CFG)[0] for l in FX.layers]
    led = CycleLedger()
    logits = forward_on_accelerator(FX, FX.eval_inputs, acc, mps, NoiseSnapshot.quiet(4, 4), None, led)
    np.testing.assert_allclose(logits, software_logits(FX, FX.eval_inputs), atol=1e-6)
    assert accuracy(logits, FX.eval_labels) == FX.clean_accuracy
    # ceil(M/Rk) * ceil(N/Ck) per layer per input
    assert led.inference_cycles == 256 * (1 * 1 + 1 * 1)


def test_all_zero_weights_is_chance():
    import copy

    fx = copy.deepcopy(FX)
    fx.layers = [DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation) for l in fx.layers]
    acc = Accelerator(CFG)
    mps = [map_matrix(l.weight, CFG)[0] for l in fx.layers]
    logits = forward_on_accelerator(fx, fx.eval_inputs, acc, mps, NoiseSnapshot.quiet(4, 4), None, CycleLedger())
    assert accuracy(logits, fx.eval_labels) == pytest.approx(0.5, abs=0.01)


def test_noise_free_scenario_is_flat():
    trace = run_scenario(scenario_from_dict({"t_max": 600}))
    assert set(trace.column("accuracy")) == {FX.clean_accuracy}
    assert trace.final["calibration_cycles"] == 0
    assert trace.final["remap_cycles"] == 0
    assert trace.events == []
    assert trace.column("step") == [0, 100, 200, 300, 400, 500, 600]


def test_remediation_off_charges_inference_only():
    trace = run_scenario(scenario_from_dict({"t_max": 300, "preset": "CT+TD.1", "remediation": False}))
    last = trace.final
    assert last["probe_cycles"] == last["calibration_cycles"] == last["remap_cycles"] == 0
    assert last["inference_cycles"] == 301 * 16 * 2
    assert trace.overhead == 0.0


def test_overhead_matches_ledger_and_decisions_flag_events():
    trace = run_scenario(scenario_from_dict({"t_max": 1000, "preset": "CT+PV.2+TD.1"}))
    last = trace.final
    expect = (last["probe_cycles"] + last["calibration_cycles"] + last["remap_cycles"]) / last["inference_cycles"]
    assert trace.overhead == pytest.approx(expect)
    assert trace.manifest["overhead"] == trace.overhead
    flagged = [r["step"] for r in trace.rows if r["decision"] == "remediate"]
    assert trace.events and flagged
    for ev in trace.events:
        # the row at or after each event carries the flag
        assert any(s >= ev["step"] and s - ev["step"] < 100 for s in flagged)


def test_periodic_remap_mode():
    trace = run_scenario(scenario_from_dict({"t_max": 1000, "preset": "CT+TD.1", "remap": {"periodic_interval": 400}}))
    kinds = [(e["kind"], e["step"]) for e in trace.events]
    assert ("periodic_remap", 400) in kinds and ("periodic_remap", 800) in kinds
    for ev in trace.events:
        if ev["kind"] == "periodic_remap":
            assert ev["calibration_cycles"] == 0 and ev["remap_cycles"] > 0
        else:
            assert ev["remap_cycles"] == 0


def test_trace_roundtrip_csv_and_json(tmp_path):
    trace = run_scenario(scenario_from_dict({"t_max": 400, "preset": "CT+PV.1+TD.2"}))
    for fmt in ("csv", "json"):
        path = emit_trace(trace, tmp_path / f"t.{fmt}", fmt)
        back = read_trace(path)
        assert back.rows == trace.rows
        if fmt == "json":
            assert back.manifest == trace.manifest
            assert back.events == trace.events


def test_empty_trace_is_header_only(tmp_path):
    path = emit_trace(RunTrace(), tmp_path / "e.csv")
    assert path.read_text() == ",".join(COLUMNS) + "\n"
    assert read_trace(path).rows == []


def test_trace_errors(tmp_path):
    with pytest.raises(SchemaError):
        trace_from_csv("step,accuracy\n1,2\n")
    with pytest.raises(SchemaError):
        make_row(step=0)
    with pytest.raises(IoError):
        emit_trace(RunTrace(), tmp_path / "missing_dir" / "t.csv")


@settings(max_examples=30, deadline=None)
@given(
    rows=st.lists(
        st.tuples(
            st.integers(0, 10**6),
            st.floats(0, 1),
            st.floats(0, 10, allow_nan=False),
            st.floats(290, 310),
            st.integers(0, 10**9),
            st.integers(0, 10**6),
            st.integers(0, 10**6),
            st.integers(0, 10**6),
            st.sampled_from(["none", "remediate"]),
        ),
        max_size=10,
    )
)
def test_csv_roundtrip_property(rows):
    trace = RunTrace(rows=[make_row(**dict(zip(COLUMNS, r))) for r in rows])
    assert trace_from_csv(trace_to_csv(trace)).rows == trace.rows


def test_simulation_geometry_guard():
    with pytest.raises(ShapeMismatch):
        Simulation.build(scenario_from_dict({"accelerator": {"k": 4}}))
