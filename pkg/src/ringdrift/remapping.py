"""Variation-aware tile remapping.

The R row bands of a chunk can be permuted across the R tiles without
breaking the dataflow (inputs are broadcast down tiles, partial sums stay
inside a tile). We probe every band on every tile, score each placement and
solve the resulting linear assignment problem exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .accelerator import Accelerator, CycleLedger, WeightMapping
from .errors import IllegalAssignment, MissingGradients
from .rng import Stream, substream
from .variation import NoiseSnapshot


class CostMethod(str, enum.Enum):
    MAE = "mae"
    FIRST_ORDER = "first_order"
    SECOND_ORDER = "second_order"


@dataclass(frozen=True)
class RemapConfig:
    method: CostMethod = CostMethod.FIRST_ORDER
    probes: int = 1

    def __post_init__(self):
        if self.probes < 1:
            raise ValueError("probes must be >= 1")
        object.__setattr__(self, "method", CostMethod(self.method))


@dataclass(frozen=True)
class RemapCostMatrix:
    epsilon: np.ndarray  # [band u, tile v]
    method: CostMethod


@dataclass(frozen=True)
class TileAssignment:
    perm: np.ndarray  # perm[u] = tile hosting band u
    total_cost: float
    step: int = 0


def remap_cycles(R: int, m: int, k: int) -> int:
    """Probing every band on every tile (R m k) plus the O(R^3) solve."""
    return R * m * k + R**3


def lap_cycles(R: int) -> int:
    return R**3


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching of a square matrix; returns col index per row.

    Shortest augmenting path with dual potentials, O(n^3).
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    inf = np.inf
    # 1-based internals; row 0 / column 0 are the virtual source
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=int)  # match_col[j] = row matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while True:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        assignment[match_col[j] - 1] = j - 1
    return assignment


def assignment_cost(cost, perm) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(cost[np.arange(len(perm)), perm].sum())


def solve_lap(costs: RemapCostMatrix | np.ndarray, step: int = 0) -> TileAssignment:
    eps = costs.epsilon if isinstance(costs, RemapCostMatrix) else np.asarray(costs, dtype=float)
    perm = hungarian(eps)
    return TileAssignment(perm=perm, total_cost=assignment_cost(eps, perm), step=step)


def band_errors(delta: np.ndarray, mask, method: CostMethod, grad=None, hess=None) -> float:
    """Score one band's weight error ``delta`` (C, k, k) under ``method``."""
    delta = np.where(mask, delta, 0.0)
    if method is CostMethod.MAE:
        return float(np.abs(delta).sum())
    if grad is None:
        raise MissingGradients(f"{method.value} cost needs a gradient table")
    lin = float((grad * delta).sum())
    if method is CostMethod.FIRST_ORDER:
        return abs(lin)
    if hess is None:
        raise MissingGradients("second_order cost needs a diagonal Hessian table")
    return abs(lin + 0.5 * float((hess * delta * delta).sum()))


def build_cost_matrix(
    acc: Accelerator,
    mapping: WeightMapping,
    p: int,
    q: int,
    snap: NoiseSnapshot,
    cfg: RemapConfig,
    ledger: CycleLedger,
    grads: np.ndarray | None = None,
    hess: np.ndarray | None = None,
    seed: int = 0,
    key: tuple[int, ...] = (),
) -> RemapCostMatrix:
    """Probe each band of chunk (p, q) on each tile.

    Uses R cyclic placements (band u on tile (u + s) mod R), each probed
    ``cfg.probes`` times with all tiles read out in parallel, so the charge
    is exactly R * m * k cycles. ``grads``/``hess`` are laid out like
    ``mapping.ideal[p, q]``.
    """
    R = acc.cfg.tiles
    method = cfg.method
    if method is not CostMethod.MAE and grads is None:
        raise MissingGradients(f"{method.value} cost needs a gradient table")
    if method is CostMethod.SECOND_ORDER and hess is None:
        raise MissingGradients("second_order cost needs a diagonal Hessian table")
    ideal = mapping.ideal[p, q]
    mask = mapping.mask[p, q]
    eps = np.zeros((R, R))
    bands = np.arange(R)
    for s in range(R):
        placement = (bands + s) % R
        rng = substream(seed, Stream.REMAP_PROBE, *key, s)
        est = acc.probe(mapping, p, q, snap, rng, cfg.probes, ledger, "remap", placement=placement)
        for u in bands:
            g = None if grads is None else grads[u]
            h = None if hess is None else hess[u]
            eps[u, placement[u]] = band_errors(est[u] - ideal[u], mask[u], method, g, h)
    return RemapCostMatrix(epsilon=eps, method=method)


def check_bijection(perm, R: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (R,) or sorted(perm.tolist()) != list(range(R)):
        raise IllegalAssignment(f"{perm.tolist()} is not a permutation of range({R})")
    return perm.astype(int)


def apply_remap(assignment: TileAssignment, mapping: WeightMapping, p: int, q: int) -> WeightMapping:
    """Host band u of chunk (p, q) on tile ``assignment.perm[u]``.

    Blocks keep their latent weights and phases; outputs are still reduced in
    logical band order, so a noiseless MVM is unchanged.
    """
    R = mapping.perm.shape[-1]
    mapping.perm[p, q] = check_bijection(assignment.perm, R)
    return mapping


def remap_chunk(
    acc: Accelerator,
    mapping: WeightMapping,
    p: int,
    q: int,
    snap: NoiseSnapshot,
    cfg: RemapConfig,
    ledger: CycleLedger,
    grads=None,
    hess=None,
    seed: int = 0,
    key: tuple[int, ...] = (),
) -> tuple[TileAssignment, RemapCostMatrix]:
    """Probe, solve and apply for one chunk. Charges R m k + R^3 remap cycles.

    The current placement is kept when the solver cannot strictly beat it.
    """
    costs = build_cost_matrix(acc, mapping, p, q, snap, cfg, ledger, grads, hess, seed, key)
    R = acc.cfg.tiles
    ledger.charge("remap", lap_cycles(R))
    best = solve_lap(costs, step=snap.step)
    current = mapping.perm[p, q].copy()
    current_cost = assignment_cost(costs.epsilon, current)
    if best.total_cost >= current_cost:
        best = TileAssignment(perm=current, total_cost=current_cost, step=snap.step)
    apply_remap(best, mapping, p, q)
    return best, costs
