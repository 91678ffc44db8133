"""Chebyshev window filters and their evaluation on distributed blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
from numpy.polynomial import chebyshev as C

from ..simcluster import CommLedger, DistributedBlockVectors, dist_block_spmv


class DegreeOverflow(RuntimeError):
    pass


def jackson_kernel(n: int) -> np.ndarray:
    """Jackson damping factors ``g_0..g_n`` for ``N = n + 1`` moments."""
    N = n + 1
    k = np.arange(n + 1)
    q = np.pi / (N + 1)
    return ((N - k + 1) * np.cos(q * k) + np.sin(q * k) / np.tan(q)) / (N + 1)


def window_coeffs(a: float, b: float, n: int, damping: str | None = "jackson") -> np.ndarray:
    """Chebyshev coefficients ``mu_0..mu_n`` of the indicator of ``[a, b]``.

    ``a, b`` are in mapped coordinates, ``-1 <= a < b <= 1``.
    """
    if not (-1.0 <= a < b <= 1.0):
        raise ValueError(f"need -1 <= a < b <= 1, got [{a}, {b}]")
    if n < 2:
        raise ValueError("degree must be >= 2")
    ta, tb = np.arccos(a), np.arccos(b)
    k = np.arange(1, n + 1)
    mu = np.empty(n + 1)
    mu[0] = (ta - tb) / np.pi
    mu[1:] = 2.0 * (np.sin(k * ta) - np.sin(k * tb)) / (k * np.pi)
    if damping == "jackson":
        mu *= jackson_kernel(n)
    elif damping is not None:
        raise ValueError(f"unknown damping {damping!r}")
    return mu


def cheb_on_grid(mu: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``sum mu_k T_k`` at ``x_j = cos(pi j / M)``, ``j = 0..M`` (``M > n``)."""
    n = len(mu) - 1
    if M <= n:
        raise ValueError("grid must be finer than the degree")
    x = np.zeros(M + 1)
    x[0] = mu[0]
    x[1:n + 1] = mu[1:] / 2.0
    vals = scipy.fft.dct(x, type=1)
    return np.cos(np.pi * np.arange(M + 1) / M), vals


@dataclass(frozen=True)
class FilterPolynomial:
    """``p(x) = sum_k mu_k T_k(alpha x + beta)`` on the inclusion interval."""

    mu: np.ndarray
    lam_l: float
    lam_r: float
    window: tuple[float, float]

    @property
    def degree(self) -> int:
        return len(self.mu) - 1

    @property
    def alpha(self) -> float:
        return 2.0 / (self.lam_r - self.lam_l)

    @property
    def beta(self) -> float:
        return (self.lam_l + self.lam_r) / (self.lam_l - self.lam_r)

    def to_unit(self, lam):
        return self.alpha * np.asarray(lam, dtype=float) + self.beta

    def __call__(self, lam):
        return C.chebval(self.to_unit(lam), self.mu)

    @classmethod
    def window_filter(cls, lam_l: float, lam_r: float, window: tuple[float, float],
                      degree: int, damping: str | None = "jackson") -> "FilterPolynomial":
        alpha = 2.0 / (lam_r - lam_l)
        beta = (lam_l + lam_r) / (lam_l - lam_r)
        a = float(np.clip(alpha * window[0] + beta, -1.0, 1.0))
        b = float(np.clip(alpha * window[1] + beta, -1.0, 1.0))
        return cls(window_coeffs(a, b, degree, damping), lam_l, lam_r, tuple(window))


def filter_window(target: tuple[float, float], search: tuple[float, float],
                  fallback: float = 0.5) -> tuple[float, float]:
    """Window edges midway between target and search edges.

    A zero gap on one side falls back to ``fallback`` times the half-width
    of the target beyond its edge.
    """
    tl, tr = target
    sl, sr = search
    half = 0.5 * (tr - tl)
    lo = 0.5 * (tl + sl) if sl < tl else tl - fallback * half
    hi = 0.5 * (tr + sr) if sr > tr else tr + fallback * half
    return lo, hi


def filter_quality(poly: FilterPolynomial, target, search, spectrum=None
                   ) -> tuple[float, float, float]:
    """``(min |p| in target, max |p| outside search, max |p| in target)``.

    Evaluated on a cosine grid of ``8 n`` points plus interval end points.
    ``spectrum`` (default the inclusion interval) bounds the outside region.
    """
    lo_s, hi_s = spectrum if spectrum is not None else (poly.lam_l, poly.lam_r)
    M = max(8 * poly.degree, 2048)
    xg, vals = cheb_on_grid(poly.mu, M)
    lam = (xg - poly.beta) / poly.alpha
    ends = np.array([target[0], target[1], search[0], search[1], lo_s, hi_s])
    ends = np.clip(ends, poly.lam_l, poly.lam_r)
    lam = np.concatenate([lam, ends])
    vals = np.concatenate([vals, poly(ends)])
    a = np.abs(vals)
    inside = (lam >= target[0]) & (lam <= target[1])
    outside = ((lam < search[0]) | (lam > search[1])) & (lam >= lo_s) & (lam <= hi_s)
    min_in = float(a[inside].min()) if inside.any() else 0.0
    max_in = float(a[inside].max()) if inside.any() else 0.0
    max_out = float(a[outside].max()) if outside.any() else 0.0
    return min_in, max_out, max_in


def choose_degree(lam_l: float, lam_r: float, target, search, ratio: float = 0.1,
                  n_min: int = 4, n_max: int = 4096, damping: str | None = "jackson"
                  ) -> FilterPolynomial:
    """Smallest-degree window filter with ``max|p|_out <= ratio * min|p|_in``.

    Doubling from ``n_min`` brackets the degree, bisection refines it.
    Raises :class:`DegreeOverflow` if ``n_max`` is insufficient.
    """
    window = filter_window(target, search)

    def build(n):
        return FilterPolynomial.window_filter(lam_l, lam_r, window, n, damping)

    def ok(poly):
        min_in, max_out, _ = filter_quality(poly, target, search)
        return min_in > 0 and max_out <= ratio * min_in

    n = max(2, n_min)
    best = None
    while True:
        poly = build(min(n, n_max))
        if ok(poly):
            best = poly
            break
        if n >= n_max:
            raise DegreeOverflow(
                f"no filter of degree <= {n_max} separates target {target} from search {search}")
        n *= 2
    lo, hi = max(2, n // 2), best.degree
    while hi - lo > 1:
        mid = (lo + hi) // 2
        poly = build(mid)
        if ok(poly):
            hi, best = mid, poly
        else:
            lo = mid
    return best


@dataclass
class FilterStats:
    spmv: int = 0


def apply_cheb_filter(source, poly: FilterPolynomial, V: DistributedBlockVectors,
                      ledger: CommLedger | None = None, stats: FilterStats | None = None):
    """``p[A] V`` by the three-term Chebyshev recurrence.

    Uses two workspace blocks whose handles are swapped each step; the
    accumulation ``V += mu_k W_2`` is fused into the SpMV.  Exactly ``n``
    SpMVs.  Returns ``(V_out, ledger)``; the input block is not modified.
    """
    n = poly.degree
    if n < 2:
        raise ValueError("filter degree must be >= 2")
    stats = stats if stats is not None else FilterStats()
    mu = poly.mu
    a, b = poly.alpha, poly.beta
    W1, ledger = dist_block_spmv(source, V, a, b, ledger=ledger)
    W2, ledger = dist_block_spmv(source, W1, 2 * a, 2 * b, 1.0, Y_in=V, ledger=ledger)
    stats.spmv += 2
    out = V.map(lambda v, w1, w2: mu[0] * v + mu[1] * w1 + mu[2] * w2, W1, W2)
    for k in range(3, n + 1):
        W1, W2 = W2, W1
        W2, ledger = dist_block_spmv(source, W1, 2 * a, 2 * b, 1.0, Y_in=W2,
                                     accumulate=(out, mu[k]), ledger=ledger)
        stats.spmv += 1
    return out, ledger
