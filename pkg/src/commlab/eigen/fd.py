"""Filter diagonalization with stack/panel layout switching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..commstats import compute_comm_metrics
from ..layout import (LayoutDescriptor, build_redistribution_plan, make_layout,
                      matching_stack)
from ..matgen import MatrixSpec, SparseRowSource, create_source, pattern_stats
from ..perfmodel import ModelParams, cheb_iter_time
from ..simcluster import (CommLedger, DistributedBlockVectors, dist_block_spmv,
                          dist_column_norms, dist_reduce_inner, gather, redistribute,
                          scatter, tsqr)
from .bounds import lanczos_bounds
from .filters import FilterPolynomial, FilterStats, apply_cheb_filter, choose_degree

LEFT = "left"
RIGHT = "right"


# --- orthogonalization --------------------------------------------------------

def _random_columns(D: int, k: int, dtype, rng: np.random.Generator) -> np.ndarray:
    X = rng.standard_normal((D, k))
    if np.issubdtype(dtype, np.complexfloating):
        X = X + 1j * rng.standard_normal((D, k))
    return X.astype(dtype)


def _set_columns(V: DistributedBlockVectors, cols: np.ndarray, values: np.ndarray):
    for q, t in enumerate(V.tiles):
        r0, r1, _, _ = V.layout.tile(q)
        t[:, cols] = values[r0:r1]


def orthogonalize(V: DistributedBlockVectors, ledger: CommLedger | None = None,
                  rng: np.random.Generator | None = None, mode: str = "tsqr",
                  rank_tol: float = 1e-10, max_retries: int = 3) -> DistributedBlockVectors:
    """Orthonormal basis of the columns of a stack block (``diag R >= 0``).

    Columns whose ``|R_jj|`` falls below ``rank_tol * max |R_ii|`` are
    replaced by fresh random vectors and the factorization is repeated.
    ``mode="dense"`` gathers the block and uses a dense QR (reference).
    """
    if not V.layout.is_stack:
        raise ValueError("orthogonalize requires the stack layout")
    rng = rng if rng is not None else np.random.default_rng(0)
    V = V.copy()
    for _ in range(max_retries + 1):
        if mode == "tsqr":
            Q, R = tsqr(V, ledger)
        elif mode == "dense":
            Qg, R = np.linalg.qr(gather(V))
            d = np.diag(R)
            ph = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1), 1)
            Q, R = scatter(Qg * ph, V.layout), ph.conj()[:, None] * R
        else:
            raise ValueError(f"unknown orthogonalization mode {mode!r}")
        diag = np.abs(np.diag(R))
        bad = np.flatnonzero(diag <= rank_tol * max(diag.max(), np.finfo(float).tiny))
        if len(bad) == 0:
            return Q
        _set_columns(V, bad, _random_columns(V.D, len(bad), V.dtype, rng))
    raise np.linalg.LinAlgError("could not restore full column rank")


# --- Rayleigh-Ritz --------------------------------------------------------------

@dataclass
class RitzResult:
    values: np.ndarray
    vectors: DistributedBlockVectors
    residuals: np.ndarray


def rayleigh_ritz(source: SparseRowSource, V: DistributedBlockVectors,
                  ledger: CommLedger | None = None, stats: FilterStats | None = None
                  ) -> RitzResult:
    """Ritz pairs of an orthonormal stack block; one block SpMV for ``A V``."""
    W, ledger = dist_block_spmv(source, V, ledger=ledger)
    if stats is not None:
        stats.spmv += 1
    H, _ = dist_reduce_inner(V, W, ledger, phase="reduce")
    H = 0.5 * (H + H.conj().T)
    theta, Cm = np.linalg.eigh(H)
    U = V.matmul_small(Cm.astype(V.dtype))
    AU = W.matmul_small(Cm.astype(V.dtype))
    R = AU.map(lambda au, u: au - u * theta, U)
    rho = dist_column_norms(R, ledger, phase="reduce")
    return RitzResult(theta, U, rho)


# --- interval selection -----------------------------------------------------------

@dataclass(frozen=True)
class Intervals:
    target: tuple[float, float]
    search: tuple[float, float]


def _order(values: np.ndarray, tau) -> np.ndarray:
    if tau == LEFT:
        return np.argsort(values, kind="stable")
    if tau == RIGHT:
        return np.argsort(-values, kind="stable")
    return np.argsort(np.abs(values - float(tau)), kind="stable")


def select_intervals(values, residuals, tau, N_t: int, N_s: int,
                     fill: float = 0.75, previous: Intervals | None = None,
                     spectrum: tuple[float, float] | None = None,
                     min_gap: float = 0.1) -> Intervals:
    """Target and search intervals from the current Ritz values.

    For an interior ``tau`` the target interval is the smallest interval
    centred at ``tau`` holding the ``N_t`` nearest Ritz values, the search
    interval the one holding the nearest ``max(N_t, floor(fill N_s))``.
    ``tau = "left"`` (``"right"``) gives one-sided intervals starting at the
    spectrum edge.  The search interval never grows beyond the previous one
    and keeps a margin of ``min_gap`` times the target width beyond each
    free target edge.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < N_t:
        raise ValueError(f"need at least N_t={N_t} Ritz values, got {len(values)}")
    order = _order(values, tau)
    m = min(len(values), max(N_t, int(math.floor(fill * N_s))))
    pinned = None
    if tau in (LEFT, RIGHT):
        pinned = 0 if tau == LEFT else 1
        lo_edge = spectrum[0] if spectrum is not None else values.min()
        hi_edge = spectrum[1] if spectrum is not None else values.max()
        t_far, s_far = values[order[N_t - 1]], values[order[m - 1]]
        if pinned == 0:
            target, search = [lo_edge, t_far], [lo_edge, s_far]
        else:
            target, search = [t_far, hi_edge], [s_far, hi_edge]
    else:
        tau = float(tau)
        d_t = abs(values[order[N_t - 1]] - tau)
        d_s = abs(values[order[m - 1]] - tau)
        target, search = [tau - d_t, tau + d_t], [tau - d_s, tau + d_s]
    if previous is not None:
        search = [max(search[0], previous.search[0]), min(search[1], previous.search[1])]
    gap = min_gap * (target[1] - target[0])
    search = [min(search[0], target[0] - (0.0 if pinned == 0 else gap)),
              max(search[1], target[1] + (0.0 if pinned == 1 else gap))]
    return Intervals(tuple(map(float, target)), tuple(map(float, search)))


# --- driver --------------------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    degree: int
    target: tuple[float, float]
    search: tuple[float, float]
    spmv: int
    redistributions: int
    converged: int


@dataclass
class FdState:
    """Progress and accounting of a filter-diagonalization run."""

    N_t: int
    N_s: int
    P: int
    N_col: int
    spectrum: tuple[float, float] = (0.0, 0.0)
    intervals: Intervals | None = None
    ritz_values: np.ndarray | None = None
    residuals: np.ndarray | None = None
    iterations: int = 0
    spmv: int = 0
    redistributions: int = 0
    converged: bool = False
    history: list[IterationRecord] = field(default_factory=list)
    ledger: CommLedger | None = None
    modeled: dict = field(default_factory=dict)
    diagnostic: str = ""


@dataclass
class FdResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    state: FdState

    @property
    def converged(self) -> bool:
        return self.state.converged

    def report(self) -> dict:
        s = self.state
        return {
            "converged": s.converged,
            "diagnostic": s.diagnostic,
            "N_t": s.N_t, "N_s": s.N_s, "P": s.P, "N_col": s.N_col,
            "spectrum": list(s.spectrum),
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
            "iterations": s.iterations,
            "spmv": s.spmv,
            "redistributions": s.redistributions,
            "target_interval": list(s.intervals.target) if s.intervals else None,
            "search_interval": list(s.intervals.search) if s.intervals else None,
            "history": [
                {"iteration": h.iteration, "degree": h.degree, "target": list(h.target),
                 "search": list(h.search), "spmv": h.spmv,
                 "redistributions": h.redistributions, "converged": h.converged}
                for h in s.history
            ],
            "ledger": s.ledger.summary() if s.ledger else {},
            "modeled": s.modeled,
        }


def _modeled_share(source, state: FdState, panel: LayoutDescriptor,
                   params: ModelParams) -> dict:
    """Model time of the filter versus the ledgered redistribution volume."""
    degrees = sum(h.degree for h in state.history)
    n_nzr = pattern_stats(source).n_nzr
    chi = compute_comm_metrics(source, panel.row_partition()).chi3 if panel.N_row > 1 else 0.0
    n_b = max(1, state.N_s // state.N_col)
    t_filter = degrees * cheb_iter_time(source.dim, panel.N_row, n_b, n_nzr, chi, params)
    sent = state.ledger.sent("redistribute") if state.ledger else np.zeros(1)
    t_redist = float(sent.max()) * params.S_d / params.b_c if len(sent) else 0.0
    total = t_filter + t_redist
    return {"filter_seconds": t_filter, "redistribution_seconds": t_redist,
            "redistribution_share": t_redist / total if total > 0 else 0.0}


def filter_diagonalize(matrix, target=LEFT, N_t: int = 8, N_s: int | None = None,
                       P: int = 1, N_col: int = 1, tol: float = 1e-10,
                       max_iterations: int = 100, seed: int = 0,
                       degree_ratio: float = 0.1, max_degree: int = 4096,
                       fill: float = 0.75, lanczos_steps: int = 60,
                       target_interval=None, search_interval=None,
                       reference_eigvecs: np.ndarray | None = None,
                       overlap_eps: float = 1e-7, ortho_mode: str = "tsqr",
                       params: ModelParams | None = None) -> FdResult:
    """Find ``N_t`` eigenpairs nearest ``target`` (a value, ``"left"`` or ``"right"``).

    The filter runs in an ``(P/N_col) x N_col`` panel layout; orthogonalization
    and Rayleigh-Ritz run in the matching stack layout.  Fixed
    ``target_interval``/``search_interval`` override the adaptive choice.
    With ``reference_eigvecs`` convergence means that every reference vector
    lies in the search space up to ``overlap_eps``.
    """
    source = create_source(matrix) if isinstance(matrix, (str, MatrixSpec)) else matrix
    D = source.dim
    N_s = N_s if N_s is not None else min(D, 4 * N_t)
    if not (1 <= N_t <= N_s <= D):
        raise ValueError(f"need 1 <= N_t <= N_s <= D, got N_t={N_t}, N_s={N_s}, D={D}")
    if isinstance(target, str):
        target = target.lower()
        if target not in (LEFT, RIGHT):
            target = float(target)
    panel = make_layout(P, N_col, D, N_s)
    stack = matching_stack(panel)
    to_panel = build_redistribution_plan(stack, panel) if N_col > 1 else None
    to_stack = to_panel.reversed() if to_panel else None
    itemsize = 16 if np.issubdtype(source.dtype, np.complexfloating) else 8
    ledger = CommLedger(P, S_d=itemsize)
    stats = FilterStats()
    rng = np.random.default_rng(seed)

    lam = lanczos_bounds(source, lanczos_steps, seed)
    state = FdState(N_t, N_s, P, N_col, spectrum=lam, ledger=ledger)
    if target_interval is not None:
        state.intervals = Intervals(tuple(target_interval),
                                    tuple(search_interval or target_interval))
    fixed = target_interval is not None

    V = scatter(_random_columns(D, N_s, source.dtype, rng), stack)
    previous = state.intervals
    while True:
        V = orthogonalize(V, ledger, rng, ortho_mode)
        rr = rayleigh_ritz(source, V, ledger, stats)
        V = rr.vectors
        state.ritz_values, state.residuals = rr.values, rr.residuals
        order = _order(rr.values, target)[:N_t]
        if reference_eigvecs is not None:
            Vg = gather(V)
            overlap = np.sum(np.abs(Vg.conj().T @ reference_eigvecs) ** 2, axis=0)
            n_conv = int(np.sum(overlap >= 1 - overlap_eps))
            done = n_conv == reference_eigvecs.shape[1]
        else:
            good = rr.residuals[order] <= tol
            if fixed:
                tl, tr = state.intervals.target
                good &= (rr.values[order] >= tl) & (rr.values[order] <= tr)
            n_conv = int(good.sum())
            done = n_conv == N_t
        if state.history:
            state.history[-1].converged = n_conv
        if done:
            state.converged = True
            break
        if state.iterations >= max_iterations:
            state.diagnostic = (f"not converged after {state.iterations} filter applications "
                                f"({n_conv}/{N_t} converged)")
            break
        if not fixed:
            state.intervals = select_intervals(rr.values, rr.residuals, target, N_t, N_s,
                                               fill, previous, lam)
            previous = state.intervals
        poly = choose_degree(lam[0], lam[1], state.intervals.target, state.intervals.search,
                             degree_ratio, n_max=max_degree)
        spmv_before = stats.spmv
        if to_panel is not None:
            V, _ = redistribute(V, to_panel, ledger)
            state.redistributions += 1
        V, _ = apply_cheb_filter(source, poly, V, ledger, stats)
        if to_stack is not None:
            V, _ = redistribute(V, to_stack, ledger)
            state.redistributions += 1
        state.iterations += 1
        state.history.append(IterationRecord(
            state.iterations, poly.degree, state.intervals.target, state.intervals.search,
            stats.spmv - spmv_before + 1, 2 if to_panel is not None else 0, 0))
    state.spmv = stats.spmv
    if params is not None:
        state.modeled = _modeled_share(source, state, panel, params)

    Vg = gather(V)
    sel = order if reference_eigvecs is None else _order(rr.values, target)[:N_t]
    sel = sel[np.argsort(rr.values[sel], kind="stable")]
    return FdResult(rr.values[sel], Vg[:, sel], rr.residuals[sel], state)
