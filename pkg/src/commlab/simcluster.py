"""Deterministic simulated process grid with exact communication accounting.

Logical processes hold rectangular tiles of a ``D x N_s`` block.  Each
collective runs as supersteps (exchange, then compute) and every vector
entry crossing a process boundary is recorded in a :class:`CommLedger`.
No time is simulated; timings come from :mod:`commlab.perfmodel`.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ._parallel import pmap
from .layout import (LayoutDescriptor, RedistributionPlan, make_layout)
from .matgen import SparseRowSource


class SimulationError(ValueError):
    pass


# --- ledger ------------------------------------------------------------------

@dataclass
class PhaseLedger:
    entries: np.ndarray
    messages: np.ndarray

    @classmethod
    def empty(cls, P: int) -> "PhaseLedger":
        return cls(np.zeros((P, P), np.int64), np.zeros((P, P), np.int64))


@dataclass
class CommLedger:
    """Entries and messages per ordered pair ``(src, dst)``, grouped by phase."""

    P: int
    S_d: int = 8
    phases: dict[str, PhaseLedger] = field(default_factory=dict)

    def record(self, phase: str, src: int, dst: int, entries: int, messages: int = 1):
        if src == dst:
            return
        if entries < 0:
            raise SimulationError("negative entry count")
        led = self.phases.setdefault(phase, PhaseLedger.empty(self.P))
        led.entries[src, dst] += entries
        led.messages[src, dst] += messages

    def _select(self, phase: str | None) -> list[PhaseLedger]:
        if phase is None:
            return list(self.phases.values())
        return [self.phases[phase]] if phase in self.phases else []

    def matrix(self, phase: str | None = None) -> np.ndarray:
        m = np.zeros((self.P, self.P), np.int64)
        for led in self._select(phase):
            m += led.entries
        return m

    def total_entries(self, phase: str | None = None) -> int:
        return int(self.matrix(phase).sum())

    def total_bytes(self, phase: str | None = None) -> int:
        return self.total_entries(phase) * self.S_d

    def total_messages(self, phase: str | None = None) -> int:
        return int(sum(led.messages.sum() for led in self._select(phase)))

    def received(self, phase: str | None = None) -> np.ndarray:
        return self.matrix(phase).sum(axis=0)

    def sent(self, phase: str | None = None) -> np.ndarray:
        return self.matrix(phase).sum(axis=1)

    def reset(self, phase: str | None = None):
        if phase is None:
            self.phases.clear()
        else:
            self.phases.pop(phase, None)

    def merge(self, other: "CommLedger") -> "CommLedger":
        if other.P != self.P:
            raise SimulationError("cannot merge ledgers of different process counts")
        for name, led in other.phases.items():
            mine = self.phases.setdefault(name, PhaseLedger.empty(self.P))
            mine.entries += led.entries
            mine.messages += led.messages
        return self

    def summary(self) -> dict:
        return {
            name: {"entries": int(led.entries.sum()),
                   "bytes": int(led.entries.sum()) * self.S_d,
                   "messages": int(led.messages.sum())}
            for name, led in sorted(self.phases.items())
        }


# --- distributed blocks ------------------------------------------------------

@dataclass
class DistributedBlockVectors:
    """Per-rank tiles (row-major) of a ``D x N_s`` block under ``layout``."""

    layout: LayoutDescriptor
    tiles: list[np.ndarray]

    def __post_init__(self):
        if len(self.tiles) != self.layout.P:
            raise SimulationError("one tile per rank required")
        for q, t in enumerate(self.tiles):
            if t.shape != self.layout.tile_shape(q):
                raise SimulationError(
                    f"rank {q}: tile shape {t.shape} != {self.layout.tile_shape(q)}")

    @property
    def D(self) -> int:
        return self.layout.D

    @property
    def N_s(self) -> int:
        return self.layout.N_s

    @property
    def dtype(self):
        return self.tiles[0].dtype

    def copy(self) -> "DistributedBlockVectors":
        return DistributedBlockVectors(self.layout, [t.copy() for t in self.tiles])

    def zeros_like(self, dtype=None) -> "DistributedBlockVectors":
        return DistributedBlockVectors(
            self.layout, [np.zeros_like(t, dtype=dtype or t.dtype) for t in self.tiles])

    def map(self, fn: Callable[..., np.ndarray], *others: "DistributedBlockVectors"
            ) -> "DistributedBlockVectors":
        """Tile-wise local operation (no communication)."""
        for o in others:
            if o.layout != self.layout:
                raise SimulationError("layouts differ")
        tiles = pmap(lambda q: fn(self.tiles[q], *(o.tiles[q] for o in others)),
                     range(self.layout.P))
        return DistributedBlockVectors(self.layout, tiles)

    def matmul_small(self, C: np.ndarray) -> "DistributedBlockVectors":
        """``V C`` for an ``N_s x k`` matrix; local in the stack layout."""
        if not self.layout.is_stack:
            raise SimulationError("V @ C requires the stack layout")
        lay = self.layout
        out = lay if C.shape[1] == lay.N_s else LayoutDescriptor(
            lay.D, C.shape[1], lay.row_bounds, (0, C.shape[1]), lay.ranks)
        return DistributedBlockVectors(out, [t @ C for t in self.tiles])


def scatter(values: np.ndarray, layout: LayoutDescriptor) -> DistributedBlockVectors:
    """Split a global block into per-rank tiles (copies, never views)."""
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape != (layout.D, layout.N_s):
        raise SimulationError(f"block shape {values.shape} != {(layout.D, layout.N_s)}")
    tiles = []
    for q in range(layout.P):
        r0, r1, c0, c1 = layout.tile(q)
        tiles.append(np.array(values[r0:r1, c0:c1], order="C", copy=True))
    return DistributedBlockVectors(layout, tiles)


def gather(V: DistributedBlockVectors) -> np.ndarray:
    out = np.empty((V.D, V.N_s), dtype=V.dtype)
    for q, t in enumerate(V.tiles):
        r0, r1, c0, c1 = V.layout.tile(q)
        out[r0:r1, c0:c1] = t
    return out


def stack_layout(P: int, D: int, N_s: int) -> LayoutDescriptor:
    return make_layout(P, 1, D, N_s)


# --- halo exchange plans -----------------------------------------------------

@dataclass(frozen=True)
class HaloPlan:
    """Local matrix of one process row with remapped columns.

    Columns ``[0, b-a)`` are local rows; column ``(b-a) + k`` is the k-th
    entry of the sorted halo.  ``recv[o]`` lists the halo rows owned by
    process row ``o`` (global indices, sorted).
    """

    start: int
    stop: int
    matrix: sp.csr_matrix
    halo: np.ndarray
    recv: dict[int, np.ndarray]


_HALO_CACHE: "weakref.WeakKeyDictionary[SparseRowSource, dict]" = weakref.WeakKeyDictionary()


def _build_halo(source: SparseRowSource, bounds: tuple[int, ...], i: int) -> HaloPlan:
    a, b = bounds[i], bounds[i + 1]
    blk = source.row_block(a, b)
    cols = blk.indices
    remote = (cols < a) | (cols >= b)
    halo = np.unique(cols[remote])
    local_cols = np.where(remote, (b - a) + np.searchsorted(halo, cols), cols - a)
    m = sp.csr_matrix((blk.data, local_cols, blk.indptr), shape=(b - a, (b - a) + len(halo)))
    owners = np.searchsorted(np.asarray(bounds), halo, side="right") - 1
    recv = {int(o): halo[owners == o] for o in np.unique(owners)}
    return HaloPlan(a, b, m, halo, recv)


def halo_plans(source: SparseRowSource, bounds: tuple[int, ...]) -> list[HaloPlan]:
    """Per-process-row halo plans, cached per (source, row boundaries)."""
    cache = _HALO_CACHE.setdefault(source, {})
    key = tuple(bounds)
    if key not in cache:
        cache[key] = pmap(lambda i: _build_halo(source, key, i), range(len(key) - 1))
    return cache[key]


def dist_block_spmv(source: SparseRowSource, X: DistributedBlockVectors,
                    alpha=1.0, beta=0.0, gamma=0.0,
                    Y_in: DistributedBlockVectors | None = None,
                    accumulate: tuple[DistributedBlockVectors, complex] | None = None,
                    ledger: CommLedger | None = None, phase: str = "spmv"):
    """``Y = alpha A X + beta X - gamma Y_in``, per process column.

    With ``accumulate=(V, mu)`` the update ``V += mu Y`` is fused into the
    same pass (``V`` is modified in place).  Returns ``(Y, ledger)``.
    """
    lay = X.layout
    if lay.D != source.dim:
        raise SimulationError("block and matrix dimensions differ")
    if Y_in is not None and Y_in.layout != lay:
        raise SimulationError("Y_in layout differs from X")
    if accumulate is not None and accumulate[0].layout != lay:
        raise SimulationError("accumulator layout differs from X")
    if ledger is None:
        ledger = CommLedger(lay.P, S_d=X.dtype.itemsize)
    plans = halo_plans(source, lay.row_bounds)

    # superstep 1: halo exchange within each process column
    buffers: list[np.ndarray] = [None] * lay.P
    for j in range(lay.N_col):
        ncols = lay.col_bounds[j + 1] - lay.col_bounds[j]
        for i, plan in enumerate(plans):
            q = lay.ranks[i][j]
            parts = []
            for o, rows in plan.recv.items():
                src = lay.ranks[o][j]
                parts.append(X.tiles[src][rows - lay.row_bounds[o]])
                ledger.record(phase, src, q, len(rows) * ncols)
            buffers[q] = (np.concatenate(parts) if parts
                          else np.zeros((0, ncols), X.dtype))

    # superstep 2: local compute
    def compute(q):
        i, _ = lay.cell(q)
        x = X.tiles[q]
        y = plans[i].matrix @ np.concatenate([x, buffers[q]])
        y = alpha * y
        if beta != 0:
            y = y + beta * x
        if gamma != 0 and Y_in is not None:
            y = y - gamma * Y_in.tiles[q]
        if accumulate is not None:
            acc, mu = accumulate
            acc.tiles[q] += mu * y
        return y

    Y = DistributedBlockVectors(lay, pmap(compute, range(lay.P)))
    return Y, ledger


# --- redistribution -----------------------------------------------------------

def redistribute(V: DistributedBlockVectors, plan: RedistributionPlan,
                 ledger: CommLedger | None = None, phase: str = "redistribute"):
    """Move ``V`` from ``plan.source`` to ``plan.target``; returns ``(V', ledger)``."""
    if V.layout != plan.source:
        raise SimulationError("plan source layout does not match the block")
    tgt = plan.target
    if ledger is None:
        ledger = CommLedger(tgt.P, S_d=V.dtype.itemsize)
    tiles = [np.empty(tgt.tile_shape(q), dtype=V.dtype) for q in range(tgt.P)]
    for t in plan.overlaps + plan.transfers:
        sr0, _, sc0, _ = plan.source.tile(t.src)
        dr0, _, dc0, _ = tgt.tile(t.dst)
        block = V.tiles[t.src][t.rows[0] - sr0:t.rows[1] - sr0, t.cols[0] - sc0:t.cols[1] - sc0]
        tiles[t.dst][t.rows[0] - dr0:t.rows[1] - dr0, t.cols[0] - dc0:t.cols[1] - dc0] = block
        ledger.record(phase, t.src, t.dst, t.entries)
    return DistributedBlockVectors(tgt, tiles), ledger


# --- reductions ---------------------------------------------------------------

def _tree_reduce(values: list[np.ndarray], ranks: list[int], ledger: CommLedger,
                 phase: str) -> np.ndarray:
    """Binomial-tree sum onto slot 0; one message per non-root slot."""
    vals = list(values)
    n = len(vals)
    step = 1
    while step < n:
        for k in range(0, n, 2 * step):
            if k + step < n:
                ledger.record(phase, ranks[k + step], ranks[k], vals[k + step].size)
                vals[k] = vals[k] + vals[k + step]
        step *= 2
    return vals[0]


def _stack_ranks(layout: LayoutDescriptor) -> list[int]:
    if not layout.is_stack:
        raise SimulationError("operation requires the stack layout")
    return [row[0] for row in layout.ranks]


def dist_reduce_inner(V: DistributedBlockVectors, W: DistributedBlockVectors,
                      ledger: CommLedger | None = None, phase: str = "reduce"):
    """``V^H W`` for two stack blocks over the same rows."""
    ranks = _stack_ranks(V.layout)
    if V.layout.row_bounds != W.layout.row_bounds or _stack_ranks(W.layout) != ranks:
        raise SimulationError("blocks are not aligned")
    if ledger is None:
        ledger = CommLedger(V.layout.P)
    locs = pmap(lambda q: V.tiles[q].conj().T @ W.tiles[q], ranks)
    return _tree_reduce(locs, ranks, ledger, phase), ledger


def dist_reduce_gram(V: DistributedBlockVectors, ledger: CommLedger | None = None,
                     phase: str = "gram"):
    """Gram matrix ``V^H V``; ledger holds ``(P-1) N_s^2`` entries (reduce phase)."""
    return dist_reduce_inner(V, V, ledger, phase)


def dist_column_norms(V: DistributedBlockVectors, ledger: CommLedger | None = None,
                      phase: str = "norms") -> np.ndarray:
    ranks = _stack_ranks(V.layout)
    if ledger is None:
        ledger = CommLedger(V.layout.P)
    locs = [np.sum(np.abs(V.tiles[q]) ** 2, axis=0) for q in ranks]
    return np.sqrt(_tree_reduce(locs, ranks, ledger, phase))


# --- tall-skinny QR -----------------------------------------------------------

@dataclass
class _Node:
    Q: np.ndarray
    split: int = 0
    children: tuple = ()


def _split_span(lo: int, hi: int) -> int:
    """Slot at which the binomial tree merges ``[lo, hi)``."""
    s = 1
    while 2 * s < hi - lo:
        s *= 2
    return lo + s


def tsqr(V: DistributedBlockVectors, ledger: CommLedger | None = None,
         phase: str = "tsqr"):
    """Tree-reduction QR of a stack block: returns ``(Q, R)`` with real ``diag(R) >= 0``.

    Leaves factor their slice locally; R factors are combined pairwise up a
    binomial tree and the orthogonal factor is assembled in a down-sweep.
    """
    ranks = _stack_ranks(V.layout)
    if ledger is None:
        ledger = CommLedger(V.layout.P)
    if V.D < V.N_s:
        raise SimulationError("tall-skinny QR needs D >= N_s")
    leaves = pmap(lambda q: np.linalg.qr(V.tiles[q]), ranks)

    def up(lo, hi):
        if hi - lo == 1:
            Q, R = leaves[lo]
            return R, _Node(Q)
        mid = _split_span(lo, hi)
        Ra, na = up(lo, mid)
        Rb, nb = up(mid, hi)
        ledger.record(phase, ranks[mid], ranks[lo], Rb.size)
        Q, R = np.linalg.qr(np.vstack([Ra, Rb]))
        return R, _Node(Q, Ra.shape[0], (na, nb))

    R, root = up(0, len(ranks))
    d = np.diag(R)
    mag = np.abs(d)
    ph = np.where(mag > 0, d / np.where(mag > 0, mag, 1), 1)
    R = ph.conj()[:, None] * R

    tiles: list[np.ndarray] = [None] * V.layout.P

    def down(node, C, lo, hi):
        M = node.Q @ C
        if not node.children:
            tiles[ranks[lo]] = M * ph
            return
        mid = _split_span(lo, hi)
        ledger.record(phase, ranks[lo], ranks[mid], M[node.split:].size)
        down(node.children[0], M[:node.split], lo, mid)
        down(node.children[1], M[node.split:], mid, hi)

    down(root, np.eye(R.shape[0], dtype=R.dtype), 0, len(ranks))
    return DistributedBlockVectors(V.layout, tiles), R
