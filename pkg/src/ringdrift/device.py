"""Closed-form add-drop micro-ring physics.

A ring's through-port transmission ``a`` depends on its round-trip phase
``phi``; the differential weight is ``w = g * (2a - 1)``. Everything here is
vectorised over numpy arrays and free of state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import UnreachableWeight

TWO_PI = 2.0 * math.pi

# Slack allowed on |cos(phi)| before a target counts as unreachable.
_COS_SLACK = 1e-12


@dataclass(frozen=True)
class MrrParams:
    """Device constants of one add-drop ring (SI units)."""

    alpha: float = 0.9
    r: float = 0.9
    wavelength: float = 1550e-9
    perimeter: float = TWO_PI * 5e-6
    group_index: float = 4.2
    dlambda_dT: float = 0.1e-9
    ref_temp: float = 300.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0 and 0.0 < self.r < 1.0):
            raise ValueError(f"alpha and r must lie in (0, 1), got {self.alpha}, {self.r}")
        for name in ("wavelength", "perimeter", "group_index", "dlambda_dT"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def at_wavelength(self, wavelength: float) -> "MrrParams":
        """Copy tuned to resonate at ``wavelength`` (perimeter scaled with it)."""
        return replace(
            self,
            wavelength=wavelength,
            perimeter=self.perimeter * wavelength / self.wavelength,
        )

    @property
    def transmission_range(self) -> tuple[float, float]:
        """(a_min, a_max), attained on resonance and at phi = pi."""
        a, r = self.alpha, self.r
        return ((a - r) ** 2 / (1 - r * a) ** 2, (a + r) ** 2 / (1 + r * a) ** 2)

    @property
    def reach(self) -> float:
        """Largest |w|/g that is reachable with either sign."""
        lo, hi = self.transmission_range
        return min(1.0 - 2.0 * lo, 2.0 * hi - 1.0)


@dataclass(frozen=True)
class WeightCode:
    phase: float
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "phase", float(np.mod(self.phase, TWO_PI)))


def through_transmission(phase, params: MrrParams):
    """Through-port transmission for round-trip ``phase`` (radians)."""
    a, r = params.alpha, params.r
    c = np.cos(phase)
    return (a * a - 2 * r * a * c + r * r) / (1 - 2 * r * a * c + (r * a) ** 2)


def weight_from_transmission(a, scale):
    return scale * (2.0 * a - 1.0)


def canonical_phase(phase):
    return np.mod(phase, TWO_PI)


def _bisect_phase(target, params: MrrParams, iters: int = 200):
    # a(phi) is strictly increasing on (0, pi)
    lo = np.zeros_like(target)
    hi = np.full_like(target, math.pi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = through_transmission(mid, params) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def phase_from_weight(w, scale, params: MrrParams):
    """Invert the encoder: phase in [0, pi] whose ring yields weight ``w``.

    Raises UnreachableWeight when any requested weight lies outside
    ``scale * (2 * transmission_range - 1)``.
    """
    w = np.asarray(w, dtype=float)
    scale = np.asarray(scale, dtype=float)
    target = 0.5 * (w / scale + 1.0)
    a, r = params.alpha, params.r
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_phi = (a * a + r * r - target * (1 + (r * a) ** 2)) / (2 * r * a * (1 - target))
    bad = ~np.isfinite(cos_phi) | (np.abs(cos_phi) > 1.0 + _COS_SLACK)
    if np.any(bad):
        lo, hi = params.transmission_range
        raise UnreachableWeight(
            f"{int(np.count_nonzero(bad))} weight(s) need transmission outside [{lo:.6g}, {hi:.6g}]"
        )
    phi = np.arccos(np.clip(cos_phi, -1.0, 1.0))
    # the closed form is ill-conditioned as a -> 1; bisect those entries instead
    shaky = (1.0 - target) < 1e-9
    if np.any(shaky):
        phi = np.array(phi, dtype=float)
        phi[shaky] = _bisect_phase(np.broadcast_to(target, phi.shape)[shaky], params)
    return phi


def clip_to_reachable(w, scale, params: MrrParams):
    """Clip weights into the reachable interval; returns (clipped, n_clipped)."""
    lo, hi = params.transmission_range
    w = np.asarray(w, dtype=float)
    w_lo = scale * (2.0 * lo - 1.0)
    w_hi = scale * (2.0 * hi - 1.0)
    clipped = np.clip(w, w_lo, w_hi)
    # rounding at the interval ends is not a real clip
    moved = np.abs(clipped - w) > 1e-12 * np.abs(scale)
    return clipped, int(np.count_nonzero(moved))


def phase_shift_from_temperature(delta_T, params: MrrParams):
    """Round-trip phase drift caused by a temperature change ``delta_T`` (K)."""
    d_lambda = delta_T * params.dlambda_dT
    d_neff = d_lambda * params.group_index / params.wavelength
    return d_neff * TWO_PI * params.perimeter / params.wavelength
