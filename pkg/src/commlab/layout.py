"""Row partitions, stack/panel/pillar layouts and redistribution plans.

Index ranges are zero-based and half-open.  A layout tiles the ``D x N_s``
block of search vectors over an ``N_row x N_col`` process grid; ranks are
assigned to grid cells in column-major order unless a layout is built to
match another one (see :func:`matching_stack`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

STACK_TO_PANEL = "stack->panel"
PANEL_TO_STACK = "panel->stack"


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class RowPartition:
    """Monotone boundaries ``0 = k_0 <= k_1 <= ... <= k_P = D``."""

    bounds: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(x) for x in self.bounds)
        object.__setattr__(self, "bounds", b)
        if len(b) < 2 or b[0] != 0 or any(x > y for x, y in zip(b, b[1:])):
            raise LayoutError(f"invalid partition boundaries {b}")

    @property
    def N_p(self) -> int:
        return len(self.bounds) - 1

    @property
    def D(self) -> int:
        return self.bounds[-1]

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(np.asarray(self.bounds, dtype=np.int64))

    def slice(self, p: int) -> tuple[int, int]:
        return self.bounds[p], self.bounds[p + 1]

    def owner(self, rows) -> np.ndarray:
        """Process index owning each row (vectorized)."""
        return np.searchsorted(np.asarray(self.bounds), rows, side="right") - 1


def _uniform_bounds(total: int, parts: int) -> tuple[int, ...]:
    q, r = divmod(total, parts)
    # the first r slices take the extra element
    return tuple(i * q + min(i, r) for i in range(parts + 1))


def uniform_row_partition(D: int, N_p: int) -> RowPartition:
    """Contiguous slices of size ceil(D/N_p) or floor(D/N_p), larger ones first."""
    if N_p < 1 or N_p > D:
        raise LayoutError(f"need 1 <= N_p <= D, got N_p={N_p}, D={D}")
    return RowPartition(_uniform_bounds(D, N_p))


@dataclass(frozen=True)
class LayoutDescriptor:
    """Placement of a ``D x N_s`` vector block on an ``N_row x N_col`` grid.

    ``ranks[i][j]`` is the process owning rows ``[m_i:m_{i+1})`` and
    columns ``[n_j:n_{j+1})``.
    """

    D: int
    N_s: int
    row_bounds: tuple[int, ...]
    col_bounds: tuple[int, ...]
    ranks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        RowPartition(self.row_bounds)
        RowPartition(self.col_bounds)
        if self.row_bounds[-1] != self.D or self.col_bounds[-1] != self.N_s:
            raise LayoutError("layout bounds do not cover the vector block")
        flat = sorted(r for row in self.ranks for r in row)
        if len(self.ranks) != self.N_row or any(len(row) != self.N_col for row in self.ranks):
            raise LayoutError("rank table does not match the grid shape")
        if flat != list(range(self.P)):
            raise LayoutError("rank table must be a permutation of 0..P-1")

    @property
    def N_row(self) -> int:
        return len(self.row_bounds) - 1

    @property
    def N_col(self) -> int:
        return len(self.col_bounds) - 1

    @property
    def P(self) -> int:
        return self.N_row * self.N_col

    @property
    def is_stack(self) -> bool:
        return self.N_col == 1

    @property
    def is_pillar(self) -> bool:
        return self.N_row == 1

    @property
    def kind(self) -> str:
        if self.is_stack:
            return "stack"
        return "pillar" if self.is_pillar else "panel"

    def cell(self, rank: int) -> tuple[int, int]:
        for i, row in enumerate(self.ranks):
            if rank in row:
                return i, row.index(rank)
        raise LayoutError(f"rank {rank} not in layout")

    def tile(self, rank: int) -> tuple[int, int, int, int]:
        """``(row_start, row_stop, col_start, col_stop)`` owned by ``rank``."""
        i, j = self.cell(rank)
        return (self.row_bounds[i], self.row_bounds[i + 1],
                self.col_bounds[j], self.col_bounds[j + 1])

    def tile_shape(self, rank: int) -> tuple[int, int]:
        r0, r1, c0, c1 = self.tile(rank)
        return r1 - r0, c1 - c0

    def row_partition(self) -> RowPartition:
        return RowPartition(self.row_bounds)

    def column_ranks(self, j: int) -> list[int]:
        """Ranks of panel column ``j``, ordered by process row."""
        return [self.ranks[i][j] for i in range(self.N_row)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "D": self.D,
            "N_s": self.N_s,
            "N_row": self.N_row,
            "N_col": self.N_col,
            "row_bounds": list(self.row_bounds),
            "col_bounds": list(self.col_bounds),
            "ranks": [list(r) for r in self.ranks],
        }


def make_layout(P: int, N_col: int, D: int, N_s: int) -> LayoutDescriptor:
    """Uniform ``(P/N_col) x N_col`` layout with column-major rank order."""
    if N_col < 1 or P % N_col:
        raise LayoutError(f"N_col={N_col} does not divide P={P}")
    if N_col > N_s:
        raise LayoutError(f"N_col={N_col} exceeds N_s={N_s}")
    N_row = P // N_col
    rows = uniform_row_partition(D, N_row).bounds
    cols = uniform_row_partition(N_s, N_col).bounds
    ranks = tuple(tuple(j * N_row + i for j in range(N_col)) for i in range(N_row))
    return LayoutDescriptor(D, N_s, rows, cols, ranks)


def matching_stack(panel: LayoutDescriptor) -> LayoutDescriptor:
    """Stack layout whose boundaries satisfy ``k_{i*N_col} = m_i``.

    Panel row ``i`` is cut into ``N_col`` uniform stack slices; slice
    ``i*N_col + j`` is placed on the process at panel cell ``(i, j)`` so that
    redistribution never leaves a panel row.
    """
    bounds = [0]
    ranks = []
    for i in range(panel.N_row):
        lo, hi = panel.row_bounds[i], panel.row_bounds[i + 1]
        if hi - lo < panel.N_col:
            raise LayoutError(
                f"panel row {i} has {hi - lo} rows, cannot split into {panel.N_col} slices")
        part = _uniform_bounds(hi - lo, panel.N_col)
        bounds.extend(lo + b for b in part[1:])
        ranks.extend((panel.ranks[i][j],) for j in range(panel.N_col))
    return LayoutDescriptor(panel.D, panel.N_s, tuple(bounds), (0, panel.N_s), tuple(ranks))


@dataclass(frozen=True)
class Transfer:
    src: int
    dst: int
    rows: tuple[int, int]
    cols: tuple[int, int]

    @property
    def entries(self) -> int:
        return (self.rows[1] - self.rows[0]) * (self.cols[1] - self.cols[0])


@dataclass(frozen=True)
class RedistributionPlan:
    """Rectangles moved between two layouts of the same vector block.

    ``transfers`` cross process boundaries; ``overlaps`` are rectangles
    owned by the same rank on both sides and only need a local copy.
    """

    direction: str
    source: LayoutDescriptor
    target: LayoutDescriptor
    transfers: tuple[Transfer, ...]
    overlaps: tuple[Transfer, ...]

    @property
    def entries_total(self) -> int:
        return sum(t.entries for t in self.transfers)

    def pair_entries(self) -> np.ndarray:
        m = np.zeros((self.source.P, self.source.P), dtype=np.int64)
        for t in self.transfers:
            m[t.src, t.dst] += t.entries
        return m

    def reversed(self) -> "RedistributionPlan":
        flip = PANEL_TO_STACK if self.direction == STACK_TO_PANEL else STACK_TO_PANEL
        swap = lambda ts: tuple(Transfer(t.dst, t.src, t.rows, t.cols) for t in ts)
        return RedistributionPlan(flip, self.target, self.source,
                                  swap(self.transfers), swap(self.overlaps))

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "entries_total": self.entries_total,
            "transfers": [
                {"src": t.src, "dst": t.dst, "rows": list(t.rows), "cols": list(t.cols)}
                for t in self.transfers
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _intersections(a: LayoutDescriptor, b: LayoutDescriptor) -> Iterator[Transfer]:
    """Nonempty rectangle intersections of ownership maps (a-rank -> b-rank)."""
    b_rows = np.asarray(b.row_bounds)
    b_cols = np.asarray(b.col_bounds)
    for ia in range(a.N_row):
        r0, r1 = a.row_bounds[ia], a.row_bounds[ia + 1]
        if r0 == r1:
            continue
        ib_lo = int(np.searchsorted(b_rows, r0, side="right")) - 1
        ib_hi = int(np.searchsorted(b_rows, r1, side="left"))
        for ja in range(a.N_col):
            c0, c1 = a.col_bounds[ja], a.col_bounds[ja + 1]
            if c0 == c1:
                continue
            jb_lo = int(np.searchsorted(b_cols, c0, side="right")) - 1
            jb_hi = int(np.searchsorted(b_cols, c1, side="left"))
            for ib in range(ib_lo, ib_hi):
                rr = (max(r0, b.row_bounds[ib]), min(r1, b.row_bounds[ib + 1]))
                if rr[0] >= rr[1]:
                    continue
                for jb in range(jb_lo, jb_hi):
                    cc = (max(c0, b.col_bounds[jb]), min(c1, b.col_bounds[jb + 1]))
                    if cc[0] >= cc[1]:
                        continue
                    yield Transfer(a.ranks[ia][ja], b.ranks[ib][jb], rr, cc)


def build_redistribution_plan(stack: LayoutDescriptor, panel: LayoutDescriptor,
                              direction: str = STACK_TO_PANEL) -> RedistributionPlan:
    """Transfer list between a stack and a panel layout.

    Works for any pair of layouts over the same block (rectangle
    intersection of the ownership maps); only for matching layouts is the
    volume guaranteed to equal :func:`redistribution_volume`.
    """
    if direction not in (STACK_TO_PANEL, PANEL_TO_STACK):
        raise LayoutError(f"unknown direction {direction!r}")
    if (stack.D, stack.N_s, stack.P) != (panel.D, panel.N_s, panel.P):
        raise LayoutError("layouts differ in D, N_s or process count")
    if not stack.is_stack:
        raise LayoutError("first layout must be a stack layout")
    pieces = list(_intersections(stack, panel))
    transfers = tuple(t for t in pieces if t.src != t.dst)
    overlaps = tuple(t for t in pieces if t.src == t.dst)
    plan = RedistributionPlan(STACK_TO_PANEL, stack, panel, transfers, overlaps)
    return plan if direction == STACK_TO_PANEL else plan.reversed()


@dataclass(frozen=True)
class RedistributionVolume:
    entries_per_panel_row: float
    entries_total: float
    bytes_total: float


def redistribution_volume(panel: LayoutDescriptor, S_d: int = 8) -> RedistributionVolume:
    """Closed-form redistribution volume for matching stack/panel layouts."""
    frac = 1.0 - 1.0 / panel.N_col
    per_row = panel.N_s * (panel.D / panel.N_row) * frac
    total = panel.N_s * panel.D * frac
    return RedistributionVolume(per_row, total, total * S_d)
