"""Independent reference implementations used by the tests.

Everything here works on dense arrays or plain Python loops and shares no
code with the package beyond the matrix generators it is fed.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


def dense_pattern(A) -> np.ndarray:
    """Structural pattern: stored entries count even if their value is zero."""
    if hasattr(A, "tocoo"):
        A = A.tocoo()
        out = np.zeros(A.shape, dtype=bool)
        out[A.row, A.col] = True
        return out
    return np.asarray(A) != 0


def naive_counts(pattern: np.ndarray, bounds) -> list[tuple[int, int, int]]:
    """``(n_m, n_vm, n_vc)`` per slice by set arithmetic on a dense pattern."""
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        cols = set()
        n_m = 0
        for i in range(a, b):
            row = np.flatnonzero(pattern[i])
            n_m += len(row)
            cols.update(int(j) for j in row)
        local = {j for j in cols if a <= j < b}
        out.append((n_m, len(local), len(cols - local)))
    return out


def naive_chi(pattern: np.ndarray, bounds) -> tuple[float, float, float]:
    counts = naive_counts(pattern, bounds)
    D, N_p = pattern.shape[0], len(bounds) - 1
    if N_p == 1:
        return 0.0, 0.0, 0.0
    chi1 = max(vc / vm for _, vm, vc in counts)
    chi2 = sum(vc for *_, vc in counts) / D
    chi3 = N_p * max(vc for *_, vc in counts) / D
    return chi1, chi2, chi3


def cheb_filter_dense(A: np.ndarray, mu, lam_l: float, lam_r: float, V: np.ndarray):
    """``sum_k mu_k T_k(alpha A + beta) V`` by the plain three-term recurrence."""
    alpha = 2.0 / (lam_r - lam_l)
    beta = (lam_l + lam_r) / (lam_l - lam_r)
    B = alpha * A + beta * np.eye(A.shape[0])
    t_prev, t_cur = V.copy(), B @ V
    out = mu[0] * t_prev + mu[1] * t_cur
    for k in range(2, len(mu)):
        t_prev, t_cur = t_cur, 2 * B @ t_cur - t_prev
        out = out + mu[k] * t_cur
    return out


def window_coeffs_quadrature(a: float, b: float, n: int) -> np.ndarray:
    """Undamped Chebyshev coefficients of the indicator of ``[a, b]`` by
    adaptive quadrature in ``theta = arccos x``."""
    ta, tb = math.acos(a), math.acos(b)
    mu = np.empty(n + 1)
    for k in range(n + 1):
        val, _ = quad(lambda t: math.cos(k * t), tb, ta, limit=400,
                      epsabs=1e-14, epsrel=1e-13)
        mu[k] = val * (1.0 if k == 0 else 2.0) / math.pi
    return mu


def owner_map(D: int, N_s: int, row_bounds, col_bounds, ranks) -> np.ndarray:
    """Rank owning every entry of the ``D x N_s`` block."""
    own = np.empty((D, N_s), dtype=np.int64)
    for i in range(len(row_bounds) - 1):
        for j in range(len(col_bounds) - 1):
            own[row_bounds[i]:row_bounds[i + 1], col_bounds[j]:col_bounds[j + 1]] = ranks[i][j]
    return own


def redistribution_entries(stack, panel) -> int:
    """Entries whose owner changes between two layouts."""
    a = owner_map(stack.D, stack.N_s, stack.row_bounds, stack.col_bounds, stack.ranks)
    b = owner_map(panel.D, panel.N_s, panel.row_bounds, panel.col_bounds, panel.ranks)
    return int(np.count_nonzero(a != b))


def estimate_T(D, N_p, n_b, n_nzr, chi, b_m, b_c, kappa, S_d, S_i, matrix=True):
    """Filter-iteration time written out term by term."""
    mem_matrix = (S_d + S_i) * n_nzr / n_b if matrix else 0.0
    mem_vectors = kappa * S_d
    comm = chi * S_d
    return (mem_matrix / b_m + mem_vectors / b_m + comm / b_c) * n_b * D / N_p
