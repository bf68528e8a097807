"""Adaptive remediation trigger.

Cheap check first (mean chip temperature drift since the last remediation),
an NMAE probe only when that check is quiet, and a cooldown that caps how
often remediation may interrupt inference.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .accelerator import Accelerator, CycleLedger, WeightMapping
from .calibration import CalibrationConfig, CalibrationReport, SalienceTable, calibrate
from .remapping import RemapConfig, TileAssignment, remap_chunk
from .rng import Stream, substream
from .variation import NoiseSnapshot


class Decision(str, enum.Enum):
    NO_ACTION = "no_action"
    REMEDIATE = "remediate"


@dataclass(frozen=True)
class ControllerConfig:
    temp_threshold: float = 0.01
    nmae_threshold: float = 0.05
    cooling_time: int = 200
    monitor_period: int = 50
    probe_fraction: float = 0.1

    def __post_init__(self):
        if min(self.temp_threshold, self.nmae_threshold, self.cooling_time, self.monitor_period) <= 0:
            raise ValueError("controller thresholds and periods must be positive")
        if self.cooling_time < self.monitor_period:
            raise ValueError("cooling_time must be >= monitor_period")
        if not 0.0 < self.probe_fraction <= 1.0:
            raise ValueError("probe_fraction must lie in (0, 1]")


@dataclass
class ControllerState:
    t_prev: float
    last_remediation: int | None = None
    log: list = field(default_factory=list)

    def in_cooldown(self, t: int, tau: int) -> bool:
        return self.last_remediation is not None and t - self.last_remediation < tau


def observe(
    cfg: ControllerConfig,
    state: ControllerState,
    temps,
    t: int,
    probe_nmae: Callable[[], float],
) -> Decision:
    """Decide whether to remediate at step ``t``.

    ``probe_nmae`` is only called (and only charges its probe cycles) when
    the temperature test does not already trigger.
    """
    if state.last_remediation is not None and t < state.last_remediation:
        raise ValueError("time went backwards")
    if state.in_cooldown(t, cfg.cooling_time):
        return Decision.NO_ACTION
    drift = float(np.mean(temps)) - state.t_prev
    if abs(drift) > cfg.temp_threshold:
        state.log.append({"step": t, "trigger": "temperature", "drift_K": drift})
        return Decision.REMEDIATE
    value = probe_nmae()
    if value > cfg.nmae_threshold:
        state.log.append({"step": t, "trigger": "nmae", "nmae": value})
        return Decision.REMEDIATE
    return Decision.NO_ACTION


def mark_remediated(state: ControllerState, temps, t: int) -> None:
    state.t_prev = float(np.mean(temps))
    state.last_remediation = t


def overhead_bound(tau: float, cost_per_remediation: float) -> float:
    """Worst-case overhead fraction when one remediation may happen per ``tau`` inferences."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if math.isinf(tau):
        return 0.0
    return cost_per_remediation / tau


def monitor_subset(n_chunks: int, fraction: float, seed: int) -> np.ndarray:
    """Fixed seeded subset of chunk indices probed by the NMAE monitor."""
    size = max(1, math.ceil(round(fraction * n_chunks, 9)))
    rng = substream(seed, Stream.MONITOR_SUBSET)
    return np.sort(rng.choice(n_chunks, size=min(size, n_chunks), replace=False))


def probe_nmae(
    acc: Accelerator,
    mappings: Sequence[WeightMapping],
    subset: np.ndarray,
    snap: NoiseSnapshot,
    m: int,
    ledger: CycleLedger,
    seed: int,
    key: tuple[int, ...] = (),
) -> float:
    """Aggregate NMAE of the monitored chunks (charged to probe cycles)."""
    keys = [(layer, p, q) for layer, mp in enumerate(mappings) for p, q in mp.chunks()]
    err = ref = 0.0
    for idx in subset:
        layer, p, q = keys[idx]
        mp = mappings[layer]
        rng = substream(seed, Stream.MONITOR_PROBE, *key, int(idx))
        est = acc.probe(mp, p, q, snap, rng, m, ledger, "probe")
        msk = mp.mask[p, q]
        err += float(np.abs(np.where(msk, est - mp.ideal[p, q], 0.0)).sum())
        ref += float(np.abs(np.where(msk, mp.ideal[p, q], 0.0)).sum())
    return err / ref if ref > 0 else 0.0


@dataclass
class RemediationReport:
    step: int
    remap_cycles: int
    calibration_cycles: int
    assignments: dict = field(default_factory=dict)  # (layer, p, q) -> perm list
    calibration: CalibrationReport | None = None

    @property
    def cycles(self) -> int:
        return self.remap_cycles + self.calibration_cycles


def remediate(
    acc: Accelerator,
    mappings: Sequence[WeightMapping],
    snap: NoiseSnapshot,
    calib_cfg: CalibrationConfig,
    remap_cfg: RemapConfig | None,
    ledger: CycleLedger,
    salience: SalienceTable | None = None,
    grads: Sequence[np.ndarray] | None = None,
    hess: Sequence[np.ndarray] | None = None,
    seed: int = 0,
    calibrate_after: bool = True,
) -> RemediationReport:
    """Remap every chunk (if ``remap_cfg``), then run sparse calibration.

    ``grads``/``hess`` are per-layer tables laid out like each mapping's
    ``ideal`` array.
    """
    before = ledger.copy()
    assignments: dict = {}
    if remap_cfg is not None:
        for layer, mp in enumerate(mappings):
            for p, q in mp.chunks():
                g = None if grads is None else grads[layer][p, q]
                h = None if hess is None else hess[layer][p, q]
                result: TileAssignment
                result, _ = remap_chunk(
                    acc, mp, p, q, snap, remap_cfg, ledger, g, h, seed=seed, key=(snap.step, layer, p, q)
                )
                assignments[(layer, p, q)] = result.perm.tolist()
    report = None
    if calibrate_after:
        report = calibrate(acc, mappings, snap, calib_cfg, ledger, seed=seed, key=(snap.step,), salience=salience)
    return RemediationReport(
        step=snap.step,
        remap_cycles=ledger.remap_cycles - before.remap_cycles,
        calibration_cycles=ledger.calibration_cycles - before.calibration_cycles,
        assignments=assignments,
        calibration=report,
    )
