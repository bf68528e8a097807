"""Training-free block calibration.

Each weight chunk is probed with identity inputs to estimate its realised
weights, and the latent weights are nudged by ``-lr * sign(E[W_tilde] - W*)``
(a straight-through step treating encode/decode as identity). Only a
salience-weighted subset of chunks is touched per iteration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .accelerator import Accelerator, CycleLedger, WeightMapping
from .errors import Diverged
from .rng import Stream, substream
from .variation import NoiseSnapshot

DIVERGENCE_FACTOR = 10.0


class Selection(str, enum.Enum):
    IMPORTANCE = "importance"
    TOPK = "topk"
    RANDOM = "random"


class StopReason(str, enum.Enum):
    THRESHOLD_MET = "threshold_met"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class CalibrationConfig:
    probes: int = 1
    sparsity: float = 0.2
    max_iters: int = 20
    threshold: float = 0.0038
    lr: float = 2e-3
    selection: Selection = Selection.IMPORTANCE

    def __post_init__(self):
        if self.probes < 1 or self.max_iters < 1:
            raise ValueError("probes and max_iters must be >= 1")
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in (0, 1]")
        if self.threshold <= 0 or self.lr <= 0:
            raise ValueError("threshold and lr must be positive")
        object.__setattr__(self, "selection", Selection(self.selection))


@dataclass(frozen=True)
class SalienceTable:
    """Per-chunk salience; ``keys[i]`` is (layer, p, q)."""

    keys: tuple[tuple[int, int, int], ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.shape != (len(self.keys),) or np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise ValueError("salience scores must be one finite non-negative value per chunk")
        object.__setattr__(self, "scores", scores)

    @property
    def probabilities(self) -> np.ndarray:
        total = self.scores.sum()
        if total <= 0:
            return np.full(len(self.keys), 1.0 / len(self.keys))
        return self.scores / total

    @classmethod
    def uniform(cls, keys):
        keys = tuple(tuple(int(v) for v in key) for key in keys)
        return cls(keys=keys, scores=np.ones(len(keys)))


@dataclass
class CalibrationReport:
    iterations: int
    stop_reason: StopReason
    cycles: int
    n_chunks: int
    n_selected: int
    final_mae: dict = field(default_factory=dict)
    initial_mae: dict = field(default_factory=dict)
    updates: int = 0


def sign_gradient(estimate, ideal):
    return np.sign(np.asarray(estimate) - np.asarray(ideal))


def n_selected(beta: float, n_chunks: int) -> int:
    return max(1, math.ceil(round(beta * n_chunks, 9)))


def calibration_cycles(beta: float, t_run: int, m: int, k: int, n_chunks: int | None = None) -> int:
    """Cycle cost of a calibration run.

    Without ``n_chunks``: the per-chunk average ``ceil(beta * T * m * k)``.
    With it: the exact charge ``T * ceil(beta * n_chunks) * m * k`` summed
    over all chunks, i.e. the same formula with beta replaced by the fraction
    of chunks actually selected.
    """
    if n_chunks is None:
        return math.ceil(round(beta * t_run * m * k, 9))
    return t_run * n_selected(beta, n_chunks) * m * k


def select_chunks(salience: SalienceTable, beta: float, method: Selection | str, rng: np.random.Generator) -> np.ndarray:
    """Indices (sorted) of the chunks calibrated in one iteration."""
    method = Selection(method)
    n = len(salience.keys)
    size = n_selected(beta, n)
    if size >= n:
        return np.arange(n)
    if method is Selection.TOPK:
        order = np.argsort(-salience.scores, kind="stable")
        return np.sort(order[:size])
    if method is Selection.RANDOM:
        return np.sort(rng.choice(n, size=size, replace=False))
    probs = salience.probabilities
    nonzero = np.flatnonzero(probs > 0)
    if nonzero.size < size:
        # not enough salient chunks: take them all, pad with lowest indices
        rest = [i for i in range(n) if i not in set(nonzero)]
        return np.sort(np.concatenate([nonzero, rest[: size - nonzero.size]]).astype(int))
    return np.sort(rng.choice(n, size=size, replace=False, p=probs))


def block_mae(estimate, ideal, mask) -> float:
    count = int(mask.sum())
    if count == 0:
        return 0.0
    return float(np.abs(np.where(mask, estimate - ideal, 0.0)).sum() / count)


def calibrate(
    acc: Accelerator,
    mappings: Sequence[WeightMapping],
    snap: NoiseSnapshot,
    cfg: CalibrationConfig,
    ledger: CycleLedger,
    seed: int = 0,
    key: tuple[int, ...] = (),
    salience: SalienceTable | None = None,
) -> CalibrationReport:
    """Sparse sign-descent calibration over every chunk of ``mappings``.

    Each iteration selects ``ceil(sparsity * n_chunks)`` chunks, probes them
    (``probes * k`` cycles each), and updates the ones whose MAE is still at
    or above the threshold. Stops once every chunk's latest probed MAE is
    below the threshold, or after ``max_iters`` iterations.
    """
    keys = [(layer, p, q) for layer, mp in enumerate(mappings) for p, q in mp.chunks()]
    if salience is None:
        salience = SalienceTable.uniform(keys)
    elif list(salience.keys) != keys:
        raise ValueError("salience table does not match the chunk layout")
    before = ledger.calibration_cycles
    last = {key_: math.inf for key_ in keys}
    first: dict = {}
    updates = 0
    reason = StopReason.MAX_ITERATIONS
    params = acc.params
    it = 0
    for it in range(1, cfg.max_iters + 1):
        chosen = select_chunks(salience, cfg.sparsity, cfg.selection, substream(seed, Stream.CHUNK_SELECT, *key, it))
        for idx in chosen:
            layer, p, q = keys[idx]
            mp = mappings[layer]
            rng = substream(seed, Stream.CALIB_PROBE, *key, it, idx)
            est = acc.probe(mp, p, q, snap, rng, cfg.probes, ledger, "calibration")
            mae = block_mae(est, mp.ideal[p, q], mp.mask[p, q])
            first.setdefault(keys[idx], mae)
            if first[keys[idx]] > 0 and mae > DIVERGENCE_FACTOR * first[keys[idx]] and mae >= cfg.threshold:
                raise Diverged(f"chunk {keys[idx]} MAE {mae:.4g} exceeds {DIVERGENCE_FACTOR}x initial {first[keys[idx]]:.4g}")
            last[keys[idx]] = mae
            if mae < cfg.threshold:
                continue
            step = cfg.lr * sign_gradient(est, mp.ideal[p, q]) * mp.mask[p, q]
            mp.program(p, q, mp.latent[p, q] - step, params)
            updates += 1
        if all(v < cfg.threshold for v in last.values()):
            reason = StopReason.THRESHOLD_MET
            break
    return CalibrationReport(
        iterations=it,
        stop_reason=reason,
        cycles=ledger.calibration_cycles - before,
        n_chunks=len(keys),
        n_selected=n_selected(cfg.sparsity, len(keys)),
        final_mae=dict(last),
        initial_mae=first,
        updates=updates,
    )


def calibrate_block(
    acc: Accelerator,
    mapping: WeightMapping,
    snap: NoiseSnapshot,
    cfg: CalibrationConfig,
    ledger: CycleLedger,
    seed: int = 0,
) -> CalibrationReport:
    """Dense calibration of a single-chunk mapping (every iteration probes it)."""
    if mapping.n_chunks != 1:
        raise ValueError("calibrate_block expects a mapping with exactly one chunk")
    dense = CalibrationConfig(
        probes=cfg.probes, sparsity=1.0, max_iters=cfg.max_iters, threshold=cfg.threshold, lr=cfg.lr
    )
    return calibrate(acc, [mapping], snap, dense, ledger, seed=seed)
