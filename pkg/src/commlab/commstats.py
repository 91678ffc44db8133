"""Communication metrics of row-partitioned sparse matrices.

For a process owning rows ``[a:b)`` we count

* ``n_m``  - stored nonzeros in the slice,
* ``n_vm`` - distinct column indices referenced inside ``[a:b)``,
* ``n_vc`` - distinct column indices referenced outside ``[a:b)``,

and aggregate them into ``chi1 = max n_vc/n_vm``, ``chi2 = sum n_vc / D``
and ``chi3 = N_p max n_vc / D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from ._parallel import pmap
from .layout import RowPartition, uniform_row_partition
from .matgen import SparseRowSource
from .perfmodel import ModelParams

IMBALANCE_THRESHOLD = 2.5


@dataclass(frozen=True)
class CommMetrics:
    D: int
    N_p: int
    n_m: np.ndarray
    n_vm: np.ndarray
    n_vc: np.ndarray

    @property
    def chi1(self) -> float:
        if self.N_p == 1:
            return 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.n_vm > 0, self.n_vc / np.maximum(self.n_vm, 1),
                             np.where(self.n_vc > 0, np.inf, 0.0))
        return float(ratio.max())

    @property
    def chi2(self) -> float:
        return float(self.n_vc.sum()) / self.D

    @property
    def chi3(self) -> float:
        return self.N_p * float(self.n_vc.max()) / self.D

    def as_row(self) -> dict:
        return {"N_p": self.N_p, "D": self.D,
                "chi1": self.chi1, "chi2": self.chi2, "chi3": self.chi3}


def round_half_up(x: float, digits: int = 2) -> float:
    """Table rounding: half-up on the shortest decimal representation."""
    if not math.isfinite(x):
        return x
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


class _SliceCounter:
    """Accumulates distinct-column counts for consecutive slices of one partition."""

    def __init__(self, partition: RowPartition):
        self.bounds = np.asarray(partition.bounds, dtype=np.int64)
        self.N_p = partition.N_p
        self.seen = np.zeros(partition.D, dtype=bool)
        self.n_m = np.zeros(self.N_p, dtype=np.int64)
        self.n_vm = np.zeros(self.N_p, dtype=np.int64)
        self.n_vc = np.zeros(self.N_p, dtype=np.int64)
        self.current = 0
        self._skip_empty()

    def _skip_empty(self):
        while self.current < self.N_p and self.bounds[self.current + 1] == self.bounds[self.current]:
            self.current += 1

    def _close(self):
        p = self.current
        a, b = self.bounds[p], self.bounds[p + 1]
        local = int(np.count_nonzero(self.seen[a:b]))
        self.n_vm[p] = local
        self.n_vc[p] = int(np.count_nonzero(self.seen)) - local
        self.seen[:] = False
        self.current += 1
        self._skip_empty()

    def feed(self, start: int, indptr: np.ndarray, indices: np.ndarray):
        stop = start + len(indptr) - 1
        lo = start
        while lo < stop:
            hi = min(stop, int(self.bounds[self.current + 1]))
            cols = indices[indptr[lo - start]:indptr[hi - start]]
            self.seen[cols] = True
            self.n_m[self.current] += len(cols)
            lo = hi
            if hi == self.bounds[self.current + 1]:
                self._close()

    def result(self, D: int) -> CommMetrics:
        return CommMetrics(D, self.N_p, self.n_m, self.n_vm, self.n_vc)


def compute_comm_metrics_many(source: SparseRowSource, partitions: Sequence[RowPartition],
                              chunk: int | None = None) -> list[CommMetrics]:
    """Metrics for several partitions from a single streaming pass over the rows."""
    for part in partitions:
        if part.D != source.dim:
            raise ValueError(f"partition covers D={part.D}, source has D={source.dim}")
    counters = [_SliceCounter(p) for p in partitions]
    for blk in source.iter_blocks(chunk=chunk):
        for c in counters:
            c.feed(blk.start, blk.indptr, blk.indices)
    return [c.result(source.dim) for c in counters]


def _slice_counts(args) -> tuple[int, int, int]:
    source, a, b, chunk = args
    seen_local = np.zeros(b - a, dtype=bool)
    remote = []
    n_m = 0
    for blk in source.iter_blocks(a, b, chunk):
        cols = blk.indices
        n_m += len(cols)
        inside = (cols >= a) & (cols < b)
        seen_local[cols[inside] - a] = True
        remote.append(np.unique(cols[~inside]))
    n_vc = len(np.unique(np.concatenate(remote))) if remote else 0
    return n_m, int(np.count_nonzero(seen_local)), n_vc


def compute_comm_metrics(source: SparseRowSource, partition: RowPartition,
                         chunk: int | None = None) -> CommMetrics:
    """Metrics for one partition; process slices are independent work items."""
    if partition.D != source.dim:
        raise ValueError(f"partition covers D={partition.D}, source has D={source.dim}")
    chunk = chunk or source.default_chunk
    jobs = [(source, *partition.slice(p), chunk) for p in range(partition.N_p)]
    counts = np.array(pmap(_slice_counts, jobs), dtype=np.int64).reshape(-1, 3)
    return CommMetrics(source.dim, partition.N_p, counts[:, 0], counts[:, 1], counts[:, 2])


def metrics_table(source: SparseRowSource, nps: Sequence[int],
                  chunk: int | None = None) -> list[CommMetrics]:
    """Metrics for uniform partitions over the process counts ``nps``."""
    parts = [uniform_row_partition(source.dim, n) for n in nps]
    return compute_comm_metrics_many(source, parts, chunk)


def memory_traffic(n_m: int, rows: int, n_b: int, params: ModelParams) -> int:
    """Bytes read from local memory by one process: matrix, row pointers, vectors."""
    if min(n_m, rows, n_b) < 0:
        raise ValueError("counts must be nonnegative")
    S_d, S_i = params.S_d, params.S_i
    return n_m * (S_d + S_i) + rows * S_i + n_b * rows * S_d


@dataclass(frozen=True)
class ImbalanceReport:
    ratio: float
    flag: bool


def imbalance_report(metrics: CommMetrics,
                     threshold: float = IMBALANCE_THRESHOLD) -> ImbalanceReport:
    """Compare max and mean remote volume (``chi3/chi2``)."""
    if metrics.N_p < 2:
        raise ValueError("imbalance is undefined for a single process")
    if metrics.chi2 == 0:
        return ImbalanceReport(1.0, False)
    ratio = metrics.chi3 / metrics.chi2
    return ImbalanceReport(ratio, ratio > threshold)


def slab_metrics(n_side: int, N_p: int) -> tuple[float, float]:
    """Closed-form ``(chi13, chi2)`` for a nearest-neighbour stencil on an
    ``n_side``-plane cube, cut into contiguous slabs of at least one plane.

    Every slice needs the full neighbouring plane on each interior side, so
    ``chi13 = 2 N_p/n_side`` (``N_p/n_side`` when all slices touch the
    boundary, i.e. ``N_p = 2``) and ``chi2 = 2 (N_p - 1)/n_side``.
    """
    if N_p == 1:
        return 0.0, 0.0
    if N_p > n_side:
        raise ValueError("slices thinner than one plane are outside the closed form")
    chi13 = (N_p if N_p == 2 else 2 * N_p) / n_side
    return chi13, 2 * (N_p - 1) / n_side
