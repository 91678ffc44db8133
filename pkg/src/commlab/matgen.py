"""Streaming generators for scalable sparse test matrices.

Every generator produces rows on demand from closed-form structure; nothing
but small lookup tables (basis states, random potentials) is held in memory.
Rows are exposed either one at a time (:meth:`SparseRowSource.row`) or as
contiguous CRS blocks (:meth:`SparseRowSource.row_block`), which is what the
metric and simulator passes use.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np
import scipy.sparse as sp

INDEX_LIMIT = np.iinfo(np.int64).max


class MatrixSpecError(ValueError):
    """Invalid matrix family or parameter combination."""


class Family(enum.Enum):
    EXCITON = "Exciton"
    HUBBARD = "Hubbard"
    SPINCHAIN_XXZ = "SpinChainXXZ"
    TOPINS = "TopIns"
    DIAG_EQUIDISTANT = "DiagEquidistant"
    TRIDIAGONAL_1D = "Tridiagonal1D"

    @classmethod
    def parse(cls, name: str) -> "Family":
        for fam in cls:
            if fam.value.lower() == name.strip().lower():
                return fam
        raise MatrixSpecError(f"unknown matrix family {name!r}")


# name -> (type, default); None default means required
_PARAMS: dict[Family, dict[str, tuple[type, object]]] = {
    Family.EXCITON: {"L": (int, None)},
    Family.HUBBARD: {
        "n_sites": (int, None),
        "n_fermions": (int, None),
        "U": (float, 4.0),
        "ranpot_amplitude": (float, 0.0),
        "rng_seed": (int, 0),
    },
    Family.SPINCHAIN_XXZ: {
        "n_sites": (int, None),
        "n_up": (int, None),
        "anisotropy": (float, 1.0),
    },
    Family.TOPINS: {"Lx": (int, None), "Ly": (int, None), "Lz": (int, None)},
    Family.DIAG_EQUIDISTANT: {"D": (int, None), "a": (float, -1.0), "b": (float, 1.0)},
    Family.TRIDIAGONAL_1D: {"D": (int, None), "periodic": (bool, False)},
}

_ALIASES = {
    "ranpot": "ranpot_amplitude",
    "seed": "rng_seed",
    "delta": "anisotropy",
    "Delta": "anisotropy",
}


def _coerce(kind: type, raw: object, key: str) -> object:
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise MatrixSpecError(f"{key}: expected boolean, got {raw!r}")
    try:
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(str(raw)) if not isinstance(raw, (int, float)) else int(raw)
        return float(raw)
    except (TypeError, ValueError):
        raise MatrixSpecError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


@dataclass(frozen=True)
class MatrixSpec:
    """A matrix family plus its parameters.

    Parameters not given explicitly take the family defaults.  Use
    :meth:`parse` for the ``Family,key=value,...`` string form.
    """

    family: Family
    parameters: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", Family.parse(self.family))
        table = _PARAMS[self.family]
        params: dict[str, object] = {}
        for key, raw in dict(self.parameters).items():
            key = _ALIASES.get(key, key)
            if key not in table:
                raise MatrixSpecError(f"{self.family.value}: unknown parameter {key!r}")
            params[key] = _coerce(table[key][0], raw, key)
        for key, (_, default) in table.items():
            if key not in params:
                if default is None:
                    raise MatrixSpecError(f"{self.family.value}: missing parameter {key!r}")
                params[key] = default
        object.__setattr__(self, "parameters", params)
        self._validate()

    def _validate(self):
        p, fam = self.parameters, self.family
        positive = {
            Family.EXCITON: ["L"],
            Family.HUBBARD: ["n_sites", "n_fermions"],
            Family.SPINCHAIN_XXZ: ["n_sites"],
            Family.TOPINS: ["Lx", "Ly", "Lz"],
            Family.DIAG_EQUIDISTANT: ["D"],
            Family.TRIDIAGONAL_1D: ["D"],
        }[fam]
        for key in positive:
            if p[key] <= 0:
                raise MatrixSpecError(f"{fam.value}: {key} must be positive")
        if fam is Family.HUBBARD and p["n_fermions"] > p["n_sites"]:
            raise MatrixSpecError("Hubbard: n_fermions must not exceed n_sites")
        if fam is Family.SPINCHAIN_XXZ and not 0 <= p["n_up"] <= p["n_sites"]:
            raise MatrixSpecError("SpinChainXXZ: need 0 <= n_up <= n_sites")
        if fam is Family.HUBBARD and p["n_sites"] > 62:
            raise MatrixSpecError("Hubbard: n_sites > 62 not supported")
        if fam is Family.SPINCHAIN_XXZ and p["n_sites"] > 62:
            raise MatrixSpecError("SpinChainXXZ: n_sites > 62 not supported")

    @classmethod
    def parse(cls, text: str) -> "MatrixSpec":
        parts = [s.strip() for s in text.split(",") if s.strip()]
        if not parts:
            raise MatrixSpecError("empty matrix spec")
        params = {}
        for item in parts[1:]:
            if "=" not in item:
                raise MatrixSpecError(f"malformed parameter {item!r} (expected key=value)")
            key, value = item.split("=", 1)
            params[key.strip()] = value.strip()
        return cls(Family.parse(parts[0]), params)

    @property
    def scalar_kind(self) -> str:
        return "complex" if self.family is Family.EXCITON else "real"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.complex128 if self.scalar_kind == "complex" else np.float64)

    def __str__(self) -> str:
        items = ",".join(f"{k}={_fmt(v)}" for k, v in self.parameters.items())
        return f"{self.family.value},{items}"


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float) and value.is_integer():
        return repr(value)
    return str(value)


def _checked(count: int) -> int:
    if count > INDEX_LIMIT:
        raise OverflowError(f"matrix dimension {count} exceeds the 64-bit index range")
    return count


def dimension(spec: MatrixSpec) -> int:
    """Exact matrix dimension by closed form (no row enumeration)."""
    p = spec.parameters
    fam = spec.family
    if fam is Family.EXCITON:
        d = 3 * (2 * p["L"] + 1) ** 3
    elif fam is Family.HUBBARD:
        d = math.comb(p["n_sites"], p["n_fermions"]) ** 2
    elif fam is Family.SPINCHAIN_XXZ:
        d = math.comb(p["n_sites"], p["n_up"])
    elif fam is Family.TOPINS:
        d = 4 * p["Lx"] * p["Ly"] * p["Lz"]
    else:
        d = p["D"]
    return _checked(d)


# ---------------------------------------------------------------------------
# row sources


@dataclass(frozen=True)
class RowBlock:
    """Rows ``[start, stop)`` in CRS form with global column indices."""

    start: int
    stop: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def to_csr(self, ncols: int) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.stop - self.start, ncols)
        )


class SparseRowSource:
    """Stateless, streaming view of a symmetric (Hermitian) sparse matrix.

    Subclasses implement :meth:`_block`.  Instances are immutable; row
    enumeration is reentrant and may be shared between threads.
    """

    dim: int
    dtype: np.dtype = np.dtype(np.float64)
    nnz_estimate: int | None = None
    default_chunk = 1 << 16

    def row_block(self, start: int, stop: int) -> RowBlock:
        if not 0 <= start <= stop <= self.dim:
            raise IndexError(f"row range [{start}:{stop}) outside [0:{self.dim})")
        if start == stop:
            empty = np.zeros(0, dtype=np.int64)
            return RowBlock(start, stop, np.zeros(1, np.int64), empty, np.zeros(0, self.dtype))
        return self._block(start, stop)

    def _block(self, start: int, stop: int) -> RowBlock:
        raise NotImplementedError

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices (strictly increasing) and values of row ``i``."""
        blk = self.row_block(i, i + 1)
        return blk.indices, blk.data

    def iter_blocks(self, start: int = 0, stop: int | None = None,
                    chunk: int | None = None) -> Iterator[RowBlock]:
        stop = self.dim if stop is None else stop
        chunk = chunk or self.default_chunk
        for lo in range(start, stop, chunk):
            yield self.row_block(lo, min(lo + chunk, stop))

    def to_csr(self) -> sp.csr_matrix:
        """Materialize the full matrix (desk-scale use only)."""
        blocks = list(self.iter_blocks())
        if not blocks:
            return sp.csr_matrix((0, 0), dtype=self.dtype)
        indptr = [np.zeros(1, np.int64)]
        offset = 0
        for blk in blocks:
            indptr.append(blk.indptr[1:] + offset)
            offset += blk.nnz
        return sp.csr_matrix(
            (
                np.concatenate([b.data for b in blocks]),
                np.concatenate([b.indices for b in blocks]),
                np.concatenate(indptr),
            ),
            shape=(self.dim, self.dim),
        )


def _compress(start: int, stop: int, cols: np.ndarray, vals: np.ndarray,
              sort: bool) -> RowBlock:
    """Turn padded (rows, slots) arrays into a CRS block; ``cols < 0`` marks empty slots."""
    if sort:
        key = np.where(cols < 0, np.iinfo(np.int64).max, cols)
        order = np.argsort(key, axis=1, kind="stable")
        cols = np.take_along_axis(cols, order, axis=1)
        vals = np.take_along_axis(vals, order, axis=1)
    mask = cols >= 0
    counts = mask.sum(axis=1)
    indptr = np.zeros(stop - start + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return RowBlock(start, stop, indptr, cols[mask], vals[mask])


class CSRSource(SparseRowSource):
    """Row source backed by an in-memory sparse matrix (tests, synthetic cases)."""

    def __init__(self, matrix, check_symmetric: bool = True):
        m = sp.csr_matrix(matrix)
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        m.sum_duplicates()
        m.sort_indices()
        if check_symmetric:
            diff = (m - m.getH()).tocsr()
            diff.eliminate_zeros()
            if diff.nnz and abs(diff).max() > 1e-12 * max(1.0, abs(m).max()):
                raise ValueError("matrix is not Hermitian")
        self._m = m
        self.dim = m.shape[0]
        self.dtype = m.dtype
        self.nnz_estimate = m.nnz

    def _block(self, start, stop):
        sub = self._m[start:stop]
        return RowBlock(start, stop, sub.indptr.astype(np.int64),
                        sub.indices.astype(np.int64), sub.data.copy())

    def to_csr(self):
        return self._m.copy()


# --- lattice stencils -------------------------------------------------------

# on-site 3x3 block (Hermitian) and orbital-diagonal hopping of the exciton model
_EXCITON_ONSITE = np.array(
    [[0.0, 0.10j, 0.05], [-0.10j, 0.3, -0.08j], [0.05, 0.08j, 0.6]], dtype=np.complex128
)
_EXCITON_HOP = np.array([1.0, 0.8, 0.6])
_EXCITON_COULOMB = 2.0


class ExcitonSource(SparseRowSource):
    """Cubic lattice of side 2L+1 with three orbitals per site.

    Each row holds the dense on-site 3x3 block plus one orbital-diagonal
    coupling per face-adjacent neighbour (open boundary).  Rows are ordered
    site-major, sites lexicographic in (x, y, z).  The diagonal carries a
    kinetic offset and an attractive potential centred in the cube.
    """

    def __init__(self, L: int):
        self.L = L
        self.n = 2 * L + 1
        self.dim = 3 * self.n ** 3
        self.dtype = np.dtype(np.complex128)
        self.nnz_estimate = int(round(self.dim * (3 + 6 * (1 - 1 / self.n))))

    def _block(self, start, stop):
        n = self.n
        rows = np.arange(start, stop, dtype=np.int64)
        site, orb = np.divmod(rows, 3)
        x, rem = np.divmod(site, n * n)
        y, z = np.divmod(rem, n)
        nr = rows.size
        cols = np.full((nr, 9), -1, dtype=np.int64)
        vals = np.zeros((nr, 9), dtype=np.complex128)
        hop = -_EXCITON_HOP[orb]
        # slot order follows column order: -x, -y, -z, on-site(3), +z, +y, +x
        for slot, (coord, step, cond) in enumerate(
            [(x, n * n, x > 0), (y, n, y > 0), (z, 1, z > 0)]
        ):
            cols[cond, slot] = rows[cond] - 3 * step
            vals[cond, slot] = hop[cond]
        base = 3 * site
        for k in range(3):
            cols[:, 3 + k] = base + k
            vals[:, 3 + k] = _EXCITON_ONSITE[orb, k]
        r2 = (x - self.L) ** 2 + (y - self.L) ** 2 + (z - self.L) ** 2
        diag_shift = 6.0 * _EXCITON_HOP[orb] - _EXCITON_COULOMB / np.sqrt(r2 + 1.0)
        vals[np.arange(nr), 3 + orb] += diag_shift
        for slot, (step, cond) in enumerate(
            [(1, z < n - 1), (n, y < n - 1), (n * n, x < n - 1)], start=6
        ):
            cols[cond, slot] = rows[cond] + 3 * step
            vals[cond, slot] = hop[cond]
        return _compress(start, stop, cols, vals, sort=False)


# hopping blocks: identity pattern plus a fixed-point-free involution per axis,
# so that every row and column of each block holds exactly two entries
_TOPINS_PERM = {0: [3, 2, 1, 0], 1: [2, 3, 0, 1], 2: [1, 0, 3, 2]}
_TOPINS_SIGN = np.array([1.0, 1.0, -1.0, -1.0])


def _topins_block(axis: int) -> np.ndarray:
    t = np.diag(0.5 * _TOPINS_SIGN)
    perm = _TOPINS_PERM[axis]
    for o in range(4):
        t[o, perm[o]] = 0.5 * (1.0 if o < perm[o] else -1.0) * (axis + 1) / 3.0 + 0.25
    return t


_TOPINS_T = [_topins_block(a) for a in range(3)]


class TopInsSource(SparseRowSource):
    """Cubic Lx x Ly x Lz lattice, four orbitals per site, no on-site terms.

    Every present neighbour contributes exactly two entries per row.
    Forward hops use a 4x4 block ``T``, backward hops its transpose, so the
    matrix is real symmetric.
    """

    def __init__(self, Lx: int, Ly: int, Lz: int):
        self.shape = (Lx, Ly, Lz)
        self.dim = 4 * Lx * Ly * Lz
        self.dtype = np.dtype(np.float64)
        deficit = 2 * (1 / Lx + 1 / Ly + 1 / Lz)
        self.nnz_estimate = int(round(self.dim * 2 * (6 - deficit)))
        self._fwd = []  # per axis: (cols offsets, values) for each orbital
        self._bwd = []
        for t in _TOPINS_T:
            self._fwd.append(_two_per_row(t))
            self._bwd.append(_two_per_row(t.T))

    def _block(self, start, stop):
        Lx, Ly, Lz = self.shape
        rows = np.arange(start, stop, dtype=np.int64)
        site, orb = np.divmod(rows, 4)
        x, rem = np.divmod(site, Ly * Lz)
        y, z = np.divmod(rem, Lz)
        nr = rows.size
        cols = np.full((nr, 12), -1, dtype=np.int64)
        vals = np.zeros((nr, 12), dtype=np.float64)
        strides = (Ly * Lz, Lz, 1)
        coords = (x, y, z)
        extents = (Lx, Ly, Lz)
        base = 4 * site
        # backward neighbours first (-x, -y, -z), then forward (+z, +y, +x)
        slot = 0
        for axis in (0, 1, 2):
            cond = coords[axis] > 0
            ocols, ovals = self._bwd[axis]
            for k in range(2):
                cols[cond, slot + k] = base[cond] - 4 * strides[axis] + ocols[orb[cond], k]
                vals[cond, slot + k] = ovals[orb[cond], k]
            slot += 2
        for axis in (2, 1, 0):
            cond = coords[axis] < extents[axis] - 1
            ocols, ovals = self._fwd[axis]
            for k in range(2):
                cols[cond, slot + k] = base[cond] + 4 * strides[axis] + ocols[orb[cond], k]
                vals[cond, slot + k] = ovals[orb[cond], k]
            slot += 2
        return _compress(start, stop, cols, vals, sort=False)


def _two_per_row(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cols = np.zeros((4, 2), dtype=np.int64)
    vals = np.zeros((4, 2))
    for o in range(4):
        nz = np.flatnonzero(block[o])
        assert nz.size == 2
        cols[o] = nz
        vals[o] = block[o, nz]
    return cols, vals


# --- occupation-number bases -------------------------------------------------


class CombinationBasis:
    """Bitstrings of ``n`` bits with ``k`` ones, in increasing integer order.

    Bit ``j`` of a state is site ``j``.  Ranks follow the combinatorial number
    system, which coincides with the integer order of the bitstrings.
    """

    LOOKUP_BITS = 24

    def __init__(self, n: int, k: int):
        self.n, self.k = n, k
        self.size = math.comb(n, k)
        # binom[j, c] = C(c, j) for c in [0, n]
        self._binom = np.array(
            [[math.comb(c, j) for c in range(n + 1)] for j in range(k + 1)], dtype=np.int64
        )
        self._lookup = None
        self._states = None
        if n <= self.LOOKUP_BITS:
            states = self.states(np.arange(self.size, dtype=np.int64))
            lut_type = np.int32 if self.size < 2 ** 31 else np.int64
            lut = np.full(1 << n, -1, dtype=lut_type)
            lut[states] = np.arange(states.size, dtype=lut_type)
            self._lookup = lut
            self._states = states

    def states(self, ranks: np.ndarray) -> np.ndarray:
        if self._states is not None:
            return self._states[ranks]
        ranks = np.asarray(ranks, dtype=np.int64).copy()
        out = np.zeros_like(ranks)
        for j in range(self.k, 0, -1):
            # largest c with C(c, j) <= rank
            c = np.searchsorted(self._binom[j], ranks, side="right") - 1
            ranks -= self._binom[j][c]
            out |= np.left_shift(np.int64(1), c)
        return out

    def rank(self, states: np.ndarray) -> np.ndarray:
        if self._lookup is not None:
            return self._lookup[states].astype(np.int64)
        states = np.asarray(states, dtype=np.int64)
        r = np.zeros_like(states)
        seen = np.zeros_like(states)
        for b in range(self.n):
            bit = (states >> b) & 1
            seen += bit
            r += np.where(bit == 1, self._binom[np.minimum(seen, self.k), b], 0)
        return r


def _adjacent_flips(states: np.ndarray, n_sites: int):
    """Yield (bond, flipped states, mask) for every open-chain bond with anti-aligned ends."""
    for b in range(n_sites - 1):
        lo = (states >> b) & 1
        hi = (states >> (b + 1)) & 1
        mask = lo != hi
        yield b, states ^ (np.int64(3) << b), mask


class SpinChainXXZSource(SparseRowSource):
    """Open XXZ chain in the fixed-magnetisation sector.

    Diagonal: ``anisotropy * sum_j Sz_j Sz_{j+1}`` (always stored).  One
    off-diagonal entry 1/2 per anti-aligned adjacent pair.
    """

    def __init__(self, n_sites: int, n_up: int, anisotropy: float):
        self.n_sites, self.n_up, self.anisotropy = n_sites, n_up, anisotropy
        self.basis = CombinationBasis(n_sites, n_up)
        self.dim = self.basis.size
        self.dtype = np.dtype(np.float64)
        if n_sites > 1:
            walls = (n_sites - 1) * 2 * n_up * (n_sites - n_up) / (n_sites * (n_sites - 1))
        else:
            walls = 0.0
        self.nnz_estimate = int(round(self.dim * (1 + walls)))

    def _block(self, start, stop):
        ns = self.n_sites
        states = self.basis.states(np.arange(start, stop, dtype=np.int64))
        nr = states.size
        cols = np.full((nr, ns), -1, dtype=np.int64)
        vals = np.zeros((nr, ns))
        cols[:, 0] = np.arange(start, stop, dtype=np.int64)
        diag = np.zeros(nr)
        for b, flipped, mask in _adjacent_flips(states, ns):
            diag += np.where(mask, -0.25, 0.25)
            cols[mask, b + 1] = self.basis.rank(flipped[mask])
            vals[mask, b + 1] = 0.5
        vals[:, 0] = self.anisotropy * diag
        return _compress(start, stop, cols, vals, sort=True)


def site_potential(n_sites: int, amplitude: float, seed: int) -> np.ndarray:
    """Random on-site potential, uniform in [-amplitude, amplitude].

    Drawn from a Philox counter-based generator keyed by ``seed``; entry j is
    the j-th counter output, so the value at a site depends only on (seed, site).
    """
    if amplitude == 0.0:
        return np.zeros(n_sites)
    gen = np.random.Generator(np.random.Philox(key=seed))
    return amplitude * (2.0 * gen.random(n_sites) - 1.0)


class HubbardSource(SparseRowSource):
    """Fermi-Hubbard chain (open boundary), basis up (x) down, up-major.

    Row index ``i = rank(up) * dim_down + rank(down)``.  The diagonal
    ``U * (double occupancy) + sum_j eps_j n_j`` is always stored; hopping
    amplitude -1 between neighbouring sites for each spin species.  On an
    open chain nearest-neighbour hops never pass another fermion, so no
    sign factors arise.
    """

    def __init__(self, n_sites: int, n_fermions: int, U: float,
                 ranpot_amplitude: float, rng_seed: int):
        self.n_sites, self.n_fermions = n_sites, n_fermions
        self.U = U
        self.basis = CombinationBasis(n_sites, n_fermions)
        self.nb = self.basis.size
        self.dim = self.nb * self.nb
        self.dtype = np.dtype(np.float64)
        self.eps = site_potential(n_sites, ranpot_amplitude, rng_seed)
        per_species = (n_sites - 1) * 2 * n_fermions * (n_sites - n_fermions) / (
            n_sites * (n_sites - 1)) if n_sites > 1 else 0.0
        self.nnz_estimate = int(round(self.dim * (1 + 2 * per_species)))

        self._tables()

    def _tables(self):
        # per basis state: sorted hop-neighbour ranks (padded with -1 at the end),
        # the same list merged with the state itself, and the on-site energies
        ns, nb = self.n_sites, self.nb
        states = self.basis.states(np.arange(nb, dtype=np.int64))
        nbr = np.full((nb, max(ns - 1, 0)), np.iinfo(np.int64).max, dtype=np.int64)
        for b, flipped, mask in _adjacent_flips(states, ns):
            nbr[mask, b] = self.basis.rank(flipped[mask])
        nbr.sort(axis=1)
        with_self = np.concatenate([nbr, np.arange(nb, dtype=np.int64)[:, None]], axis=1)
        with_self.sort(axis=1)
        pad = np.iinfo(np.int64).max
        self._self_pos = np.argmax(with_self == np.arange(nb)[:, None], axis=1)
        self._lower = (nbr < np.arange(nb)[:, None]).sum(axis=1)
        nbr[nbr == pad] = -1
        with_self[with_self == pad] = -1
        self._nbr, self._with_self = nbr, with_self
        self._states = states
        occ = (states[:, None] >> np.arange(ns)) & 1
        self._eps_sum = occ @ self.eps
        # column permutation placing the down-block after the lower up-hops
        w_up = nbr.shape[1]
        width = w_up + ns
        perm = np.empty((w_up + 1, width), dtype=np.int64)
        for c in range(w_up + 1):
            perm[c] = np.r_[np.arange(c), w_up + np.arange(ns), np.arange(c, w_up)]
        self._perm = perm

    def _block(self, start, stop):
        nb = self.nb
        rows = np.arange(start, stop, dtype=np.int64)
        ru, rd = np.divmod(rows, nb)
        up_nbr = self._nbr[ru]
        cols = np.concatenate(
            [np.where(up_nbr >= 0, up_nbr * nb + rd[:, None], -1),
             np.where(self._with_self[rd] >= 0, ru[:, None] * nb + self._with_self[rd], -1)],
            axis=1,
        )
        vals = np.full(cols.shape, -1.0)
        double = np.bitwise_count(self._states[ru] & self._states[rd])
        diag = self.U * double + self._eps_sum[ru] + self._eps_sum[rd]
        vals[np.arange(rows.size), up_nbr.shape[1] + self._self_pos[rd]] = diag
        perm = self._perm[self._lower[ru]]
        cols = np.take_along_axis(cols, perm, axis=1)
        vals = np.take_along_axis(vals, perm, axis=1)
        return _compress(start, stop, cols, vals, sort=False)


class DiagEquidistantSource(SparseRowSource):
    """Diagonal matrix with eigenvalues a + i (b - a)/(D - 1)."""

    def __init__(self, D: int, a: float, b: float):
        self.dim, self.a, self.b = D, a, b
        self.dtype = np.dtype(np.float64)
        self.nnz_estimate = D

    def eigenvalues(self) -> np.ndarray:
        if self.dim == 1:
            return np.array([self.a])
        return self.a + np.arange(self.dim) * (self.b - self.a) / (self.dim - 1)

    def _block(self, start, stop):
        rows = np.arange(start, stop, dtype=np.int64)
        if self.dim == 1:
            vals = np.full(rows.size, self.a)
        else:
            vals = self.a + rows * (self.b - self.a) / (self.dim - 1)
        return RowBlock(start, stop, np.arange(rows.size + 1, dtype=np.int64), rows, vals)


class Tridiagonal1DSource(SparseRowSource):
    """Three-point stencil (2 on the diagonal, -1 off), optionally periodic."""

    def __init__(self, D: int, periodic: bool):
        self.dim, self.periodic = D, periodic
        self.dtype = np.dtype(np.float64)
        self.nnz_estimate = min(D, 3) * D if periodic else max(3 * D - 2, 1)

    def _block(self, start, stop):
        D = self.dim
        rows = np.arange(start, stop, dtype=np.int64)
        nr = rows.size
        left = rows - 1
        right = rows + 1
        if self.periodic:
            left %= D
            right %= D
        else:
            left[left < 0] = -1
            right[right >= D] = -1
        cols = np.stack([left, rows, right], axis=1)
        vals = np.tile(np.array([-1.0, 2.0, -1.0]), (nr, 1))
        # small periodic rings alias neighbours onto each other; merge them
        if self.periodic and D <= 2:
            dense = np.zeros((nr, D))
            for k in range(3):
                np.add.at(dense, (np.arange(nr), cols[:, k]), vals[:, k])
            cols = np.tile(np.arange(D, dtype=np.int64), (nr, 1))
            vals = dense
            return _compress(start, stop, cols, vals, sort=False)
        return _compress(start, stop, cols, vals, sort=True)


def create_source(spec: MatrixSpec | str) -> SparseRowSource:
    """Build the streaming row source for ``spec``."""
    if isinstance(spec, str):
        spec = MatrixSpec.parse(spec)
    p = spec.parameters
    fam = spec.family
    dim = dimension(spec)
    if dim == 0:
        raise MatrixSpecError(f"{spec}: parameters yield an empty matrix")
    if fam is Family.EXCITON:
        src = ExcitonSource(p["L"])
    elif fam is Family.HUBBARD:
        src = HubbardSource(p["n_sites"], p["n_fermions"], p["U"],
                            p["ranpot_amplitude"], p["rng_seed"])
    elif fam is Family.SPINCHAIN_XXZ:
        src = SpinChainXXZSource(p["n_sites"], p["n_up"], p["anisotropy"])
    elif fam is Family.TOPINS:
        src = TopInsSource(p["Lx"], p["Ly"], p["Lz"])
    elif fam is Family.DIAG_EQUIDISTANT:
        src = DiagEquidistantSource(p["D"], p["a"], p["b"])
    else:
        src = Tridiagonal1DSource(p["D"], p["periodic"])
    src.spec = spec
    return src


@dataclass(frozen=True)
class PatternStats:
    D: int
    total_nnz: int
    n_nzr: float
    max_row_nnz: int


def pattern_stats(source: SparseRowSource, chunk: int | None = None) -> PatternStats:
    """Single streaming pass over the rows."""
    total = 0
    widest = 0
    for blk in source.iter_blocks(chunk=chunk):
        total += blk.nnz
        if blk.stop > blk.start:
            widest = max(widest, int(np.diff(blk.indptr).max()))
    return PatternStats(source.dim, total, total / source.dim, widest)


def write_matrix_market(source: SparseRowSource, path, max_dim: int = 10 ** 6) -> None:
    """Export in Matrix Market coordinate format (1-based indices)."""
    if source.dim > max_dim:
        raise ValueError(f"refusing Matrix Market export for D={source.dim} > {max_dim}")
    is_complex = np.issubdtype(source.dtype, np.complexfloating)
    field_name = "complex" if is_complex else "real"
    nnz = pattern_stats(source).total_nnz
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate {field_name} general\n")
        fh.write(f"{source.dim} {source.dim} {nnz}\n")
        for blk in source.iter_blocks():
            rows = np.repeat(np.arange(blk.start, blk.stop), np.diff(blk.indptr)) + 1
            cols = blk.indices + 1
            if is_complex:
                table = np.column_stack([rows, cols, blk.data.real, blk.data.imag])
                np.savetxt(fh, table, fmt=["%d", "%d", "%.17g", "%.17g"])
            else:
                np.savetxt(fh, np.column_stack([rows, cols, blk.data]),
                           fmt=["%d", "%d", "%.17g"])
