"""Machine model of the R x C x (k x k) ring-bank accelerator.

Layout conventions used throughout:

* A matrix is cut into Rk x Ck *chunks* (one full accelerator load each),
  indexed (p, q) on the chunk grid.
* A chunk is stored as blocks of shape (R, C, k, k): tile, core, row, col.
* Row band ``u`` of a chunk (a k x Ck slab) is the unit of tile remapping;
  ``perm[p, q, u]`` names the physical tile that hosts it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import (
    MrrParams,
    clip_to_reachable,
    phase_from_weight,
    phase_shift_from_temperature,
    through_transmission,
)
from .errors import DimensionMismatch, ZeroReference
from .variation import NoiseSnapshot, sample_phase_noise

SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class AcceleratorConfig:
    tiles: int = 4
    cores: int = 4
    k: int = 8
    device: MrrParams = field(default_factory=MrrParams)
    wavelength_spacing: float = 0.8e-9

    def __post_init__(self):
        if min(self.tiles, self.cores, self.k) < 1:
            raise ValueError("tiles, cores and k must all be >= 1")

    @property
    def rows(self) -> int:
        return self.tiles * self.k

    @property
    def cols(self) -> int:
        return self.cores * self.k

    def column_params(self) -> list[MrrParams]:
        """Per-column ring parameters; column c resonates at lambda_0 + c * spacing."""
        base = self.device
        return [base.at_wavelength(base.wavelength + c * self.wavelength_spacing) for c in range(self.k)]


@dataclass
class CycleLedger:
    inference_cycles: int = 0
    probe_cycles: int = 0
    calibration_cycles: int = 0
    remap_cycles: int = 0

    CATEGORIES = ("inference", "probe", "calibration", "remap")

    def charge(self, category: str, cycles: int) -> None:
        if category not in self.CATEGORIES:
            raise KeyError(category)
        cycles = int(cycles)
        if cycles < 0:
            raise ValueError("cycle charges must be non-negative")
        attr = f"{category}_cycles"
        setattr(self, attr, getattr(self, attr) + cycles)

    @property
    def total(self) -> int:
        return self.inference_cycles + self.probe_cycles + self.calibration_cycles + self.remap_cycles

    @property
    def overhead_cycles(self) -> int:
        return self.total - self.inference_cycles

    @property
    def overhead_ratio(self) -> float:
        if self.inference_cycles == 0:
            return 0.0
        return self.overhead_cycles / self.inference_cycles

    def snapshot(self) -> dict[str, int]:
        return {
            "inference_cycles": self.inference_cycles,
            "probe_cycles": self.probe_cycles,
            "calibration_cycles": self.calibration_cycles,
            "remap_cycles": self.remap_cycles,
        }

    def copy(self) -> "CycleLedger":
        return CycleLedger(**self.snapshot())


def blocks_to_chunk(blocks: np.ndarray) -> np.ndarray:
    """(..., R, C, k, k) -> (..., R*k, C*k)."""
    *lead, R, C, k, _ = blocks.shape
    return blocks.swapaxes(-3, -2).reshape(*lead, R * k, C * k)


def chunk_to_blocks(chunk: np.ndarray, tiles: int, cores: int, k: int) -> np.ndarray:
    *lead, _, _ = chunk.shape
    return chunk.reshape(*lead, tiles, k, cores, k).swapaxes(-3, -2)


@dataclass
class WeightMapping:
    """One weight matrix partitioned and programmed onto the accelerator.

    All per-entry arrays have shape (P, Q, R, C, k, k); ``scale`` drops the
    trailing (k, k).
    """

    shape: tuple[int, int]
    ideal: np.ndarray
    mask: np.ndarray
    scale: np.ndarray
    latent: np.ndarray
    phases: np.ndarray
    perm: np.ndarray
    clip_count: int = 0

    @property
    def grid(self) -> tuple[int, int]:
        return self.ideal.shape[0], self.ideal.shape[1]

    @property
    def n_chunks(self) -> int:
        P, Q = self.grid
        return P * Q

    @property
    def cycles_per_mvm(self) -> int:
        return self.n_chunks

    def chunks(self):
        P, Q = self.grid
        for p in range(P):
            for q in range(Q):
                yield p, q

    def program(self, p: int, q: int, latent: np.ndarray, params: MrrParams) -> None:
        """Store new latent weights for chunk (p, q) and re-encode its phases.

        Targets outside the reachable weight interval are clipped first and
        counted in ``clip_count``.
        """
        g = self.scale[p, q][..., None, None]
        latent = np.where(self.mask[p, q], latent, 0.0)
        clipped, n = clip_to_reachable(latent, g, params)
        self.clip_count += n
        self.latent[p, q] = clipped
        self.phases[p, q] = phase_from_weight(clipped, g, params)

    def reset_to_ideal(self, params: MrrParams) -> None:
        for p, q in self.chunks():
            self.program(p, q, self.ideal[p, q], params)

    def assemble(self, blocks: np.ndarray) -> np.ndarray:
        """Stitch per-chunk blocks (..., P, Q, R, C, k, k) into (..., M, N)."""
        P, Q = self.grid
        chunk = blocks_to_chunk(blocks)  # (..., P, Q, Rk, Ck)
        *lead, _, _, Rk, Ck = chunk.shape
        full = chunk.swapaxes(-3, -2).reshape(*lead, P * Rk, Q * Ck)
        M, N = self.shape
        return full[..., :M, :N]


def partition(W, cfg: AcceleratorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad ``W`` (M x N) and cut it into blocks (P, Q, R, C, k, k).

    Returns the blocks and a same-shaped mask of real (unpadded) entries.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or min(W.shape) < 1:
        raise DimensionMismatch("weight matrix must be 2-D and non-empty")
    M, N = W.shape
    R, C, k = cfg.tiles, cfg.cores, cfg.k
    P, Q = math.ceil(M / (R * k)), math.ceil(N / (C * k))
    padded = np.zeros((P * R * k, Q * C * k))
    padded[:M, :N] = W
    real = np.zeros_like(padded, dtype=bool)
    real[:M, :N] = True

    def split(a):
        return chunk_to_blocks(a.reshape(P, R * k, Q, C * k).swapaxes(1, 2), R, C, k)

    return split(padded), split(real)


def map_matrix(W, cfg: AcceleratorConfig, headroom: float = 1.0) -> tuple[WeightMapping, int]:
    """Partition ``W`` (M x N) into chunks, pick per-block scales and encode.

    Per-block scale is ``max|block| / (reach * headroom)`` so every ideal
    weight is representable. Returns the mapping and its cycles per MVM.
    """
    ideal, mask = partition(W, cfg)
    P, Q, R = ideal.shape[:3]
    peak = np.abs(ideal).max(axis=(-2, -1))
    scale = np.maximum(peak, SCALE_FLOOR) / (cfg.device.reach * headroom)
    perm = np.broadcast_to(np.arange(R), (P, Q, R)).copy()
    mapping = WeightMapping(
        shape=tuple(np.shape(W)),
        ideal=ideal,
        mask=mask,
        scale=scale,
        latent=np.zeros_like(ideal),
        phases=np.zeros_like(ideal),
        perm=perm,
    )
    mapping.reset_to_ideal(cfg.device)
    return mapping, P * Q


def nmae(actual, ideal, mask=None) -> float:
    """Normalised mean absolute error ||actual - ideal||_1 / ||ideal||_1."""
    actual = np.asarray(actual, dtype=float)
    ideal = np.asarray(ideal, dtype=float)
    if actual.shape[-ideal.ndim:] != ideal.shape:
        raise DimensionMismatch(f"shape {actual.shape} vs {ideal.shape}")
    if mask is not None:
        actual = np.where(mask, actual, 0.0)
        ideal = np.where(mask, ideal, 0.0)
    ref = np.abs(ideal).sum()
    if ref == 0:
        raise ZeroReference("ideal weights have zero L1 norm")
    err = np.abs(actual - ideal).sum()
    if actual.ndim > ideal.ndim:
        err = err / np.prod(actual.shape[: actual.ndim - ideal.ndim])
    return float(err / ref)


class Accelerator:
    """Physical chip: device constants plus the noisy forward model."""

    def __init__(self, cfg: AcceleratorConfig):
        self.cfg = cfg
        # phase drift per kelvin for each bank column
        self.thermal_coeff = np.array([phase_shift_from_temperature(1.0, p) for p in cfg.column_params()])

    @property
    def params(self) -> MrrParams:
        return self.cfg.device

    def thermal_phase(self, snap: NoiseSnapshot) -> np.ndarray:
        """Temperature-induced phase drift, shape (R, C, 1, k)."""
        dT = snap.ptc_temps - snap.ref_temp
        return dT[:, :, None, None] * self.thermal_coeff[None, None, None, :]

    def noisy_blocks(
        self,
        mapping: WeightMapping,
        p: int,
        q: int,
        snap: NoiseSnapshot,
        rng: np.random.Generator | None = None,
        draws: int | None = None,
        placement: np.ndarray | None = None,
    ) -> np.ndarray:
        """Realised weights of chunk (p, q) in logical block order.

        Composition per ring: phi_tilde = Gamma (phi + d_phi_noise + d_phi_T),
        then w = g (2 a(phi_tilde) - 1). ``placement`` overrides the chunk's
        band -> tile assignment. With ``draws`` a leading axis of independent
        noise realisations is returned.
        """
        k = self.cfg.k
        tiles = mapping.perm[p, q] if placement is None else np.asarray(placement)
        phi = mapping.phases[p, q] + self.thermal_phase(snap)[tiles]
        if snap.stochastic:
            if rng is None:
                raise ValueError("stochastic noise requires an rng")
            phi = phi + sample_phase_noise(snap.sigma[tiles], rng, draws)
        elif draws is not None:
            phi = np.broadcast_to(phi, (draws, *phi.shape))
        if snap.crosstalk is not None:
            flat = phi.reshape(*phi.shape[:-2], k * k)
            phi = (flat @ snap.crosstalk.gamma.T).reshape(phi.shape)
        a = through_transmission(phi, self.params)
        return mapping.scale[p, q][..., None, None] * (2.0 * a - 1.0)

    def noisy_matrix(self, mapping, snap, rng=None, draws=None) -> np.ndarray:
        P, Q = mapping.grid
        R, C, k = self.cfg.tiles, self.cfg.cores, self.cfg.k
        lead = () if draws is None else (draws,)
        blocks = np.empty((*lead, P, Q, R, C, k, k))
        for p, q in mapping.chunks():
            blocks[..., p, q, :, :, :, :] = self.noisy_blocks(mapping, p, q, snap, rng, draws)
        return mapping.assemble(blocks)

    def mvm(
        self,
        mapping: WeightMapping,
        x,
        snap: NoiseSnapshot,
        rng: np.random.Generator | None,
        ledger: CycleLedger,
        per_input_noise: bool = False,
    ) -> np.ndarray:
        """y = W_tilde x. ``x`` is (N,) or (N, B); charges cycles per input vector.

        With ``per_input_noise`` every column of ``x`` sees its own noise draw,
        otherwise the whole batch shares one realisation.
        """
        x = np.asarray(x, dtype=float)
        M, N = mapping.shape
        if x.shape[0] != N:
            raise DimensionMismatch(f"input has {x.shape[0]} rows, matrix expects {N}")
        vec = x.ndim == 1
        X = x[:, None] if vec else x
        B = X.shape[1]
        if per_input_noise and snap.stochastic:
            Wt = self.noisy_matrix(mapping, snap, rng, draws=B)  # (B, M, N)
            Y = np.einsum("bmn,nb->mb", Wt, X)
        else:
            Wt = self.noisy_matrix(mapping, snap, rng)
            Y = Wt @ X
        ledger.charge("inference", mapping.cycles_per_mvm * B)
        return Y[:, 0] if vec else Y

    def probe(
        self,
        mapping: WeightMapping,
        p: int,
        q: int,
        snap: NoiseSnapshot,
        rng: np.random.Generator | None,
        m: int,
        ledger: CycleLedger,
        category: str,
        placement: np.ndarray | None = None,
    ) -> np.ndarray:
        """Estimate E[W_tilde] for chunk (p, q) by driving the k basis vectors m times.

        All R*C cores read out in parallel, so one shot costs k cycles.
        """
        if m < 1:
            raise ValueError("probe count must be >= 1")
        shots = self.noisy_blocks(mapping, p, q, snap, rng, draws=m, placement=placement)
        eye = np.eye(self.cfg.k)
        # reading column j of a bank = driving basis vector e_j
        readout = shots @ eye
        ledger.charge(category, m * self.cfg.k)
        return readout.mean(axis=0)
