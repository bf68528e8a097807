"""Inference-timeline driver.

Every step serves ``inputs_per_step`` single-input inferences (charged to
the ledger, not simulated), lets the noise drift, and gives the controller a
chance to act. Accuracy is measured on the fixture's evaluation batch at a
fixed cadence with a separate, uncharged ledger so that measuring does not
change the accounting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..accelerator import Accelerator, CycleLedger, WeightMapping, map_matrix, partition
from ..controller import (
    ControllerState,
    Decision,
    mark_remediated,
    monitor_subset,
    observe,
    probe_nmae,
    remediate,
)
from ..rng import Stream, substream
from ..variation import NoiseEnvironment, NoiseSnapshot
from .config import ScenarioConfig, config_hash
from .fixture import ModelFixture, accuracy, check_geometry, forward, load_fixture
from .trace import RunTrace, make_row


def forward_on_accelerator(
    fixture: ModelFixture,
    X,
    acc: Accelerator,
    mappings: Sequence[WeightMapping],
    snap: NoiseSnapshot,
    rng: np.random.Generator | None,
    ledger: CycleLedger,
    per_input_noise: bool = True,
) -> np.ndarray:
    """Logits (B, classes) with every mat-mul run on the accelerator.

    Biases and activations are applied digitally.
    """
    h = np.asarray(X, dtype=float).T  # (features, B)
    for layer, mp in zip(fixture.layers, mappings):
        h = acc.mvm(mp, h, snap, rng, ledger, per_input_noise=per_input_noise) + layer.bias[:, None]
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h.T


def software_logits(fixture: ModelFixture, X) -> np.ndarray:
    return forward(fixture.layers, np.asarray(X, dtype=float))


def realised_nmae(acc: Accelerator, mappings, snap, rng, draws: int = 4) -> float:
    """NMAE of all layers together, averaged over ``draws`` noise realisations."""
    err = ref = 0.0
    for mp in mappings:
        ideal = mp.assemble(mp.ideal)
        noisy = acc.noisy_matrix(mp, snap, rng, draws=draws)
        err += float(np.abs(noisy - ideal).sum()) / draws
        ref += float(np.abs(ideal).sum())
    return err / ref if ref > 0 else 0.0


@dataclass
class Simulation:
    """Mutable state of one scenario run (exposed for tests and notebooks)."""

    cfg: ScenarioConfig
    fixture: ModelFixture
    acc: Accelerator
    mappings: list[WeightMapping]
    env: NoiseEnvironment
    ledger: CycleLedger
    grads: list[np.ndarray]
    hess: list[np.ndarray]

    @classmethod
    def build(cls, cfg: ScenarioConfig, fixture: ModelFixture | None = None) -> "Simulation":
        fixture = fixture if fixture is not None else load_fixture(cfg.fixture)
        acc_cfg = cfg.accelerator_config()
        check_geometry(fixture, acc_cfg)
        acc = Accelerator(acc_cfg)
        mappings = [map_matrix(layer.weight, acc_cfg)[0] for layer in fixture.layers]
        env = NoiseEnvironment(cfg.phase_noise_state(), cfg.temperature_field(), cfg.crosstalk_matrix())
        grads = [partition(g, acc_cfg)[0] for g in fixture.gradients]
        hess = [partition(h, acc_cfg)[0] for h in fixture.hessian_diag]
        return cls(cfg, fixture, acc, mappings, env, CycleLedger(), grads, hess)

    @property
    def cycles_per_input(self) -> int:
        return sum(mp.cycles_per_mvm for mp in self.mappings)

    def snapshot(self, t: int) -> NoiseSnapshot:
        c = self.acc.cfg
        return self.env.snapshot(t, c.tiles, c.cores, c.k)

    def evaluate(self, snap: NoiseSnapshot) -> tuple[float, float]:
        """Accuracy and NMAE at ``snap`` (uncharged)."""
        rng = substream(self.cfg.seed, Stream.EVAL_NOISE, snap.step)
        scratch = CycleLedger()
        logits = forward_on_accelerator(
            self.fixture,
            self.fixture.eval_inputs,
            self.acc,
            self.mappings,
            snap,
            rng,
            scratch,
            self.cfg.evaluation.per_input_noise,
        )
        acc = accuracy(logits, self.fixture.eval_labels)
        return acc, realised_nmae(self.acc, self.mappings, snap, rng)


def _event(kind: str, t: int, report, trigger: dict | None = None) -> dict:
    ev = {
        "step": t,
        "kind": kind,
        "remap_cycles": report.remap_cycles,
        "calibration_cycles": report.calibration_cycles,
        "assignments": {f"{l}/{p}/{q}": perm for (l, p, q), perm in sorted(report.assignments.items())},
    }
    if report.calibration is not None:
        cal = report.calibration
        ev.update(
            calibration_iterations=cal.iterations,
            calibration_stop=cal.stop_reason.value,
            calibration_selected=cal.n_selected,
            calibration_chunks=cal.n_chunks,
        )
    if trigger:
        ev["trigger"] = {k: v for k, v in trigger.items() if k != "step"}
    return ev


def run_scenario(cfg: ScenarioConfig, fixture: ModelFixture | None = None) -> RunTrace:
    """Simulate steps 0..t_max and return the sampled trace.

    Raises :class:`~ringdrift.errors.Diverged` if a calibration blows up.
    """
    sim = Simulation.build(cfg, fixture)
    ledger = sim.ledger
    calib_cfg = cfg.calibration_config()
    remap_cfg = cfg.remap_config() if cfg.remap.enabled else None
    periodic = cfg.remap.periodic_interval if cfg.remap.enabled else None
    ctrl_cfg = cfg.controller_config()
    salience = sim.fixture.salience(cfg.calibration.salience)
    n_chunks = sum(mp.n_chunks for mp in sim.mappings)
    subset = monitor_subset(n_chunks, ctrl_cfg.probe_fraction, cfg.seed)
    served = cfg.evaluation.inputs_per_step * sim.cycles_per_input

    trace = RunTrace(
        manifest={
            "name": cfg.name,
            "seed": cfg.seed,
            "config_hash": config_hash(cfg),
            "t_max": cfg.t_max,
            "clean_accuracy": sim.fixture.clean_accuracy,
            "cycles_per_input": sim.cycles_per_input,
            "remediation": cfg.remediation,
        }
    )
    state: ControllerState | None = None
    pending = False

    def fix(t, snap, with_remap, kind, trigger=None):
        report = remediate(
            sim.acc,
            sim.mappings,
            snap,
            calib_cfg,
            remap_cfg if with_remap else None,
            ledger,
            salience=salience,
            grads=sim.grads,
            hess=sim.hess,
            seed=cfg.seed,
            calibrate_after=kind != "periodic_remap",
        )
        trace.events.append(_event(kind, t, report, trigger))

    for t in range(cfg.t_max + 1):
        if t > 0:
            sim.env.advance(substream(cfg.seed, Stream.SIGMA_DRIFT, t))
        snap = sim.snapshot(t)
        if state is None:
            # the chip was programmed at the reference temperature
            state = ControllerState(t_prev=float(np.mean(np.full_like(snap.ptc_temps, snap.ref_temp))))
        ledger.charge("inference", served)

        if cfg.remediation:
            if periodic is not None and t > 0 and t % periodic == 0:
                fix(t, snap, True, "periodic_remap")
                pending = True
            if t % ctrl_cfg.monitor_period == 0:
                key = (t,)
                decision = observe(
                    ctrl_cfg,
                    state,
                    snap.ptc_temps,
                    t,
                    lambda: probe_nmae(sim.acc, sim.mappings, subset, snap, cfg.calibration.probes, ledger, cfg.seed, key),
                )
                if decision is Decision.REMEDIATE:
                    trigger = state.log[-1] if state.log else None
                    fix(t, snap, periodic is None, "remediate", trigger)
                    mark_remediated(state, snap.ptc_temps, t)
                    pending = True

        if t % cfg.evaluation.every == 0 or t == cfg.t_max:
            acc_, err = sim.evaluate(snap)
            trace.rows.append(
                make_row(
                    step=t,
                    accuracy=acc_,
                    nmae=err,
                    mean_temp_K=float(np.mean(snap.ptc_temps)),
                    decision="remediate" if pending else "none",
                    **ledger.snapshot(),
                )
            )
            pending = False
    trace.manifest["overhead"] = trace.overhead
    trace.manifest["clip_count"] = int(sum(mp.clip_count for mp in sim.mappings))
    return trace
