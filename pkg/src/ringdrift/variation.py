"""Time-evolving noise processes acting on the ring phases.

Three independent sources are modelled:

* phase variation: a per-ring noise std map that drifts through a two-level
  process (sample a fresh intensity map, blend it in with an EMA), from which
  zero-mean Gaussian phase errors are drawn;
* temperature drift: a chip-level schedule composed with a spatial profile,
  evaluated per photonic tensor core (PTC);
* thermal crosstalk: a static coupling matrix mixing the phases of rings in
  the same core.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch

BASE_TEMP = 300.0


@dataclass(frozen=True)
class IntensitySchedule:
    """Mean/std of the sampled noise intensity, linear in normalised time u."""

    mu_slope: float
    mu_offset: float
    sd_slope: float
    sd_offset: float

    def mu(self, u):
        return self.mu_slope * u + self.mu_offset

    def sd(self, u):
        return self.sd_slope * u + self.sd_offset


LOW_NOISE = IntensitySchedule(0.0025, 0.0, 0.004, 0.002)
HIGH_NOISE = IntensitySchedule(0.01, 0.0, 0.005, 0.005)
SCHEDULES = {"low": LOW_NOISE, "high": HIGH_NOISE}


def edge_to_corner_mask(rows: int, cols: int, u: float, decay: float) -> np.ndarray:
    """Spatial weighting of the sampled intensity.

    At u = 0 the noisy region hugs the left edge (column 0); by u = 1 it has
    contracted to the top-left corner. ``decay`` is in ring pitches.
    """
    i = np.arange(rows, dtype=float)[:, None]
    j = np.arange(cols, dtype=float)[None, :]
    edge = np.exp(-j / decay) * np.ones((rows, 1))
    corner = np.exp(-np.sqrt(i * i + j * j) / decay)
    return (1.0 - u) * edge + u * corner


@dataclass(frozen=True)
class PhaseNoiseState:
    sigma_map: np.ndarray
    schedule: IntensitySchedule
    t_max: int
    damping: float = 0.9
    timestep: int = 0
    mask_decay: float = 8.0
    use_mask: bool = True

    def __post_init__(self):
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError("damping must be in [0, 1]")
        if np.any(self.sigma_map < 0):
            raise ValueError("noise std map must be non-negative")

    @classmethod
    def initial(cls, rows: int, cols: int, schedule: IntensitySchedule, t_max: int, **kw):
        return cls(sigma_map=np.zeros((rows, cols)), schedule=schedule, t_max=t_max, **kw)

    @property
    def progress(self) -> float:
        return min(self.timestep / self.t_max, 1.0) if self.t_max > 0 else 1.0

    def mask(self) -> np.ndarray:
        rows, cols = self.sigma_map.shape
        if not self.use_mask:
            return np.ones((rows, cols))
        return edge_to_corner_mask(rows, cols, self.progress, self.mask_decay)


def step_noise_state(state: PhaseNoiseState, rng: np.random.Generator) -> PhaseNoiseState:
    """Advance the intensity map by one step (sample, clamp, mask, EMA)."""
    u = state.progress
    sampled = rng.normal(state.schedule.mu(u), state.schedule.sd(u), size=state.sigma_map.shape)
    sampled = np.maximum(sampled, 0.0) * state.mask()
    beta = state.damping
    sigma = beta * state.sigma_map + (1.0 - beta) * sampled
    return replace(state, sigma_map=sigma, timestep=state.timestep + 1)


def sample_phase_noise(sigma_map: np.ndarray, rng: np.random.Generator, draws: int | None = None):
    """Zero-mean Gaussian phase errors with per-ring std ``sigma_map``.

    With ``draws`` set, a leading axis of independent realisations is added.
    """
    sigma_map = np.asarray(sigma_map, dtype=float)
    shape = sigma_map.shape if draws is None else (draws, *sigma_map.shape)
    return rng.standard_normal(shape) * sigma_map


class TempSchedule(str, enum.Enum):
    LINEAR = "linear"
    COSINE = "cosine"
    CONSTANT = "constant"


class TempProfile(str, enum.Enum):
    UNIFORM = "uniform"
    CORNER_HOTSPOT = "corner_hotspot"


@dataclass(frozen=True)
class TemperatureField:
    schedule: TempSchedule = TempSchedule.LINEAR
    profile: TempProfile = TempProfile.UNIFORM
    t_max: int = 20000
    base_temp: float = BASE_TEMP
    # only used by the constant schedule
    offset: float = 0.0

    def chip_temperature(self, t) -> float:
        """Schedule value T(t) before any spatial profile."""
        if self.schedule is TempSchedule.LINEAR:
            return self.base_temp + t / self.t_max
        if self.schedule is TempSchedule.COSINE:
            return self.base_temp + 0.25 - 0.25 * np.cos(10.0 * t / self.t_max)
        return self.base_temp + self.offset

    def ptc_temperatures(self, t, tiles: int, cores: int) -> np.ndarray:
        """Temperature of every PTC, shape (tiles, cores)."""
        drift = self.chip_temperature(t) - self.base_temp
        if self.profile is TempProfile.UNIFORM:
            return np.full((tiles, cores), self.base_temp + drift)
        r = np.arange(tiles, dtype=float)[:, None]
        c = np.arange(cores, dtype=float)[None, :]
        return self.base_temp + np.exp(-np.sqrt(r * r + c * c)) * drift


def temperature_at(field_: TemperatureField, t, ptc: tuple[int, int]) -> float:
    r, c = ptc
    drift = field_.chip_temperature(t) - field_.base_temp
    if field_.profile is TempProfile.CORNER_HOTSPOT:
        drift *= math.exp(-math.sqrt(r * r + c * c))
    return field_.base_temp + drift


@dataclass(frozen=True)
class CrosstalkMatrix:
    gamma: np.ndarray
    k: int
    spacing_h: float
    spacing_v: float
    k1: float


def build_crosstalk_matrix(k: int, l_h: float = 60.0, l_v: float = 200.0, k1: float = 0.1) -> CrosstalkMatrix:
    """Coupling between the k*k rings of one core, row-major ring order.

    Spacings are in micrometres and ``k1`` in 1/um; ``k1 = inf`` disables
    crosstalk.
    """
    if k < 1:
        raise ValueError("core size must be >= 1")
    idx = np.arange(k * k)
    rows, cols = idx // k, idx % k
    dr = (rows[None, :] - rows[:, None]) * l_v
    dc = (cols[None, :] - cols[:, None]) * l_h
    dist = np.sqrt(dr * dr + dc * dc)
    with np.errstate(invalid="ignore"):
        gamma = np.exp(-k1 * dist)
    np.fill_diagonal(gamma, 1.0)
    return CrosstalkMatrix(gamma=gamma, k=k, spacing_h=l_h, spacing_v=l_v, k1=k1)


def apply_crosstalk(gamma: CrosstalkMatrix | np.ndarray, phases):
    """Return ``Gamma @ phases`` over the trailing axis of length k*k."""
    g = gamma.gamma if isinstance(gamma, CrosstalkMatrix) else np.asarray(gamma)
    phases = np.asarray(phases, dtype=float)
    if phases.shape[-1] != g.shape[1]:
        raise DimensionMismatch(f"phase vector has {phases.shape[-1]} entries, coupling matrix expects {g.shape[1]}")
    return phases @ g.T


@dataclass
class NoiseEnvironment:
    """Bundle of the active noise sources for one simulated chip.

    Any source may be ``None``. ``phase_noise`` is the only mutable part and is
    advanced by :meth:`advance`.
    """

    phase_noise: PhaseNoiseState | None = None
    temperature: TemperatureField | None = None
    crosstalk: CrosstalkMatrix | None = None

    def advance(self, rng: np.random.Generator) -> None:
        if self.phase_noise is not None:
            self.phase_noise = step_noise_state(self.phase_noise, rng)

    def snapshot(self, t: int, tiles: int, cores: int, k: int) -> "NoiseSnapshot":
        sigma = None
        if self.phase_noise is not None:
            sm = self.phase_noise.sigma_map
            sigma = sm.reshape(tiles, k, cores, k).transpose(0, 2, 1, 3).copy()
        if self.temperature is not None:
            temps = self.temperature.ptc_temperatures(t, tiles, cores)
            base = self.temperature.base_temp
        else:
            temps = np.full((tiles, cores), BASE_TEMP)
            base = BASE_TEMP
        return NoiseSnapshot(step=t, sigma=sigma, ptc_temps=temps, ref_temp=base, crosstalk=self.crosstalk)


@dataclass(frozen=True)
class NoiseSnapshot:
    """Noise conditions frozen at one step.

    ``sigma`` is laid out per PTC as (tiles, cores, k, k); ``None`` means no
    stochastic phase noise.
    """

    step: int
    sigma: np.ndarray | None
    ptc_temps: np.ndarray
    ref_temp: float = BASE_TEMP
    crosstalk: CrosstalkMatrix | None = None

    @property
    def stochastic(self) -> bool:
        return self.sigma is not None and bool(np.any(self.sigma > 0))

    def without_stochastic(self) -> "NoiseSnapshot":
        return replace(self, sigma=None)

    @classmethod
    def quiet(cls, tiles: int, cores: int, ref_temp: float = BASE_TEMP) -> "NoiseSnapshot":
        return cls(step=0, sigma=None, ptc_temps=np.full((tiles, cores), ref_temp), ref_temp=ref_temp)
