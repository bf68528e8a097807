"""Scenario configuration files.

A scenario is a JSON (or YAML) key-value tree validated by the models below.
``preset`` accepts labels such as ``"CT+PV.2+TD.1"`` and fills ``noise``
accordingly; explicit ``noise`` settings win over the preset.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..accelerator import AcceleratorConfig
from ..calibration import CalibrationConfig
from ..controller import ControllerConfig
from ..device import MrrParams
from ..errors import SchemaError
from ..remapping import RemapConfig
from ..variation import (
    SCHEDULES,
    CrosstalkMatrix,
    PhaseNoiseState,
    TemperatureField,
    TempProfile,
    TempSchedule,
    build_crosstalk_matrix,
)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DeviceSection(_Model):
    alpha: float = Field(0.9, gt=0, lt=1)
    r: float = Field(0.9, gt=0, lt=1)
    wavelength_nm: float = Field(1550.0, gt=0)
    wavelength_spacing_nm: float = Field(0.8, ge=0)
    perimeter_um: float = Field(2 * math.pi * 5.0, gt=0)
    group_index: float = Field(4.2, gt=0)
    dlambda_dT_nm_per_K: float = Field(0.1, gt=0)
    ref_temp_K: float = 300.0


class AcceleratorSection(_Model):
    tiles: int = Field(4, ge=1)
    cores: int = Field(4, ge=1)
    k: int = Field(8, ge=1)
    device: DeviceSection = DeviceSection()


class PhaseVariationSection(_Model):
    level: Literal["low", "high"] = "low"
    damping: float = Field(0.9, ge=0, le=1)
    mask: Literal["edge_to_corner", "uniform"] = "edge_to_corner"
    mask_decay: float = Field(8.0, gt=0)


class TemperatureSection(_Model):
    schedule: Literal["linear", "cosine"] = "linear"
    profile: Literal["uniform", "corner_hotspot"] = "uniform"


class CrosstalkSection(_Model):
    k1: float = Field(0.1, gt=0)
    l_h_um: float = Field(60.0, gt=0)
    l_v_um: float = Field(200.0, gt=0)


class NoiseSection(_Model):
    phase_variation: Optional[PhaseVariationSection] = None
    temperature: Optional[TemperatureSection] = None
    crosstalk: Optional[CrosstalkSection] = None


class CalibrationSection(_Model):
    probes: int = Field(1, ge=1)
    sparsity: float = Field(0.2, gt=0, le=1)
    max_iters: int = Field(20, ge=1)
    threshold: float = Field(0.0038, gt=0)
    lr: float = Field(2e-3, gt=0)
    selection: Literal["importance", "topk", "random"] = "importance"
    salience: Literal["first", "second"] = "first"


class RemapSection(_Model):
    enabled: bool = True
    method: Literal["mae", "first_order", "second_order"] = "first_order"
    probes: int = Field(1, ge=1)
    # None: remap whenever the controller remediates; N: remap every N steps
    periodic_interval: Optional[int] = Field(None, ge=1)


class ControllerSection(_Model):
    temp_threshold: float = Field(0.01, gt=0)
    nmae_threshold: float = Field(0.05, gt=0)
    cooling_time: int = Field(200, ge=1)
    monitor_period: int = Field(50, ge=1)
    probe_fraction: float = Field(0.1, gt=0, le=1)


class EvaluationSection(_Model):
    every: int = Field(100, ge=1)
    # single-input inferences served by the accelerator per simulated step
    inputs_per_step: int = Field(16, ge=1)
    per_input_noise: bool = True


PRESETS = {
    "PV.1": ("phase_variation", {"level": "low"}),
    "PV.2": ("phase_variation", {"level": "high"}),
    "TD.1": ("temperature", {"schedule": "linear", "profile": "uniform"}),
    "TD.2": ("temperature", {"schedule": "cosine", "profile": "uniform"}),
    "TD.3": ("temperature", {"schedule": "linear", "profile": "corner_hotspot"}),
    "TD.4": ("temperature", {"schedule": "cosine", "profile": "corner_hotspot"}),
    "CT": ("crosstalk", {}),
}


def preset_noise(label: str) -> dict:
    """Expand ``"CT+PV.2+TD.1"`` into a ``noise`` section dict."""
    noise: dict = {}
    for part in filter(None, (p.strip() for p in label.split("+"))):
        if part not in PRESETS:
            raise ValueError(f"unknown noise preset {part!r}; known: {', '.join(PRESETS)}")
        section, values = PRESETS[part]
        if section in noise:
            raise ValueError(f"preset {label!r} sets {section} twice")
        noise[section] = dict(values)
    return noise


class ScenarioConfig(_Model):
    name: str = "scenario"
    preset: Optional[str] = None
    seed: int = 0
    t_max: int = Field(20000, ge=1)
    fixture: Optional[str] = None
    accelerator: AcceleratorSection = AcceleratorSection()
    noise: NoiseSection = NoiseSection()
    remediation: bool = True
    calibration: CalibrationSection = CalibrationSection()
    remap: RemapSection = RemapSection()
    controller: ControllerSection = ControllerSection()
    evaluation: EvaluationSection = EvaluationSection()

    @model_validator(mode="before")
    @classmethod
    def _expand_preset(cls, data):
        if isinstance(data, dict) and data.get("preset"):
            merged = preset_noise(data["preset"])
            merged.update(data.get("noise") or {})
            data = {**data, "noise": merged}
        return data

    @model_validator(mode="after")
    def _check(self):
        if self.controller.cooling_time < self.controller.monitor_period:
            raise ValueError("controller.cooling_time must be >= controller.monitor_period")
        if self.fixture is not None and not Path(self.fixture).exists():
            raise ValueError(f"fixture file {self.fixture!r} does not exist")
        return self

    # ---- conversion to runtime objects

    def device_params(self) -> MrrParams:
        d = self.accelerator.device
        return MrrParams(
            alpha=d.alpha,
            r=d.r,
            wavelength=d.wavelength_nm * 1e-9,
            perimeter=d.perimeter_um * 1e-6,
            group_index=d.group_index,
            dlambda_dT=d.dlambda_dT_nm_per_K * 1e-9,
            ref_temp=d.ref_temp_K,
        )

    def accelerator_config(self) -> AcceleratorConfig:
        a = self.accelerator
        return AcceleratorConfig(
            tiles=a.tiles,
            cores=a.cores,
            k=a.k,
            device=self.device_params(),
            wavelength_spacing=a.device.wavelength_spacing_nm * 1e-9,
        )

    def phase_noise_state(self) -> PhaseNoiseState | None:
        pv = self.noise.phase_variation
        if pv is None:
            return None
        a = self.accelerator
        return PhaseNoiseState.initial(
            a.tiles * a.k,
            a.cores * a.k,
            SCHEDULES[pv.level],
            self.t_max,
            damping=pv.damping,
            mask_decay=pv.mask_decay,
            use_mask=pv.mask == "edge_to_corner",
        )

    def temperature_field(self) -> TemperatureField | None:
        td = self.noise.temperature
        if td is None:
            return None
        return TemperatureField(
            schedule=TempSchedule(td.schedule),
            profile=TempProfile(td.profile),
            t_max=self.t_max,
            base_temp=self.accelerator.device.ref_temp_K,
        )

    def crosstalk_matrix(self) -> CrosstalkMatrix | None:
        ct = self.noise.crosstalk
        if ct is None:
            return None
        return build_crosstalk_matrix(self.accelerator.k, ct.l_h_um, ct.l_v_um, ct.k1)

    def calibration_config(self) -> CalibrationConfig:
        c = self.calibration
        return CalibrationConfig(
            probes=c.probes, sparsity=c.sparsity, max_iters=c.max_iters, threshold=c.threshold, lr=c.lr, selection=c.selection
        )

    def remap_config(self) -> RemapConfig:
        return RemapConfig(method=self.remap.method, probes=self.remap.probes)

    def controller_config(self) -> ControllerConfig:
        c = self.controller
        return ControllerConfig(
            temp_threshold=c.temp_threshold,
            nmae_threshold=c.nmae_threshold,
            cooling_time=c.cooling_time,
            monitor_period=c.monitor_period,
            probe_fraction=c.probe_fraction,
        )


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def scenario_from_dict(doc) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except (ValidationError, ValueError) as exc:
        raise SchemaError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario file (JSON or YAML)."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise SchemaError(f"cannot read scenario {path}: {exc}") from None
    if doc is None:
        doc = {}
    return scenario_from_dict(doc)
