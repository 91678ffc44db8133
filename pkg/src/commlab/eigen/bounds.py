"""Spectral inclusion interval from a short Lanczos run."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..matgen import SparseRowSource

_DENSE_LIMIT = 1 << 20


class LanczosBreakdown(RuntimeError):
    pass


def _operator(source: SparseRowSource):
    if source.dim <= _DENSE_LIMIT:
        A = source.to_csr()
        return lambda x: A @ x
    def stream(x):
        return np.concatenate([blk.to_csr(source.dim) @ x for blk in source.iter_blocks()])
    return stream


def lanczos_bounds(source: SparseRowSource, steps: int = 60, seed: int = 0,
                   safety: float = 1e-2, max_restarts: int = 3) -> tuple[float, float]:
    """Interval ``[lam_l, lam_r]`` containing the spectrum of ``source``.

    The extreme Ritz values of a ``steps``-step Lanczos run (full
    reorthogonalization) are widened by their residual estimates plus
    ``safety`` times the Ritz spread.  Matrices with ``D <= steps`` are
    handled exactly.  On breakdown the run restarts with a new seed; if all
    attempts break down, the exact invariant-subspace bounds are returned.
    """
    if steps < 2:
        raise ValueError("need at least 2 Lanczos steps")
    D = source.dim
    if D <= steps:
        ev = np.linalg.eigvalsh(source.to_csr().toarray())
        lo, hi = float(ev[0]), float(ev[-1])
        eps = 1e-8 * max(1.0, abs(lo), abs(hi)) + safety * (hi - lo)
        return lo - eps, hi + eps
    matvec = _operator(source)
    for attempt in range(max_restarts + 1):
        rng = np.random.default_rng([seed, attempt])
        q = rng.standard_normal(D)
        if np.issubdtype(source.dtype, np.complexfloating):
            q = q + 1j * rng.standard_normal(D)
        q /= np.linalg.norm(q)
        Q = np.zeros((steps, D), dtype=q.dtype)
        a = np.zeros(steps)
        b = np.zeros(steps)
        broke = False
        for j in range(steps):
            Q[j] = q
            w = matvec(q)
            a[j] = np.vdot(q, w).real
            # two passes of classical Gram-Schmidt against all previous vectors
            for _ in range(2):
                w -= Q[:j + 1].T @ (Q[:j + 1].conj() @ w)
            b[j] = np.linalg.norm(w)
            if j < steps - 1:
                if b[j] <= 1e-12 * max(1.0, abs(a[j])):
                    broke = True
                    break
                q = w / b[j]
        if broke:
            continue
        theta, S = sla.eigh_tridiagonal(a, b[:-1])
        resid = np.abs(b[-1] * S[-1, :])
        spread = theta[-1] - theta[0]
        lo = theta[0] - resid[0] - safety * spread
        hi = theta[-1] + resid[-1] + safety * spread
        return float(lo), float(hi)
    # Every start vector spanned an invariant subspace: the truncated
    # tridiagonal is exact, its extreme eigenvalues are those of A.
    k = j + 1
    theta = sla.eigvalsh_tridiagonal(a[:k], b[:k - 1]) if k > 1 else a[:1]
    lo, hi = float(theta[0]), float(theta[-1])
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise LanczosBreakdown(f"Lanczos broke down {max_restarts + 1} times")
    eps = 1e-8 * max(1.0, abs(lo), abs(hi)) + safety * (hi - lo)
    return lo - eps, hi + eps
