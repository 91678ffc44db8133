"""Filter diagonalization and Chebyshev polynomial filters."""

from .bounds import LanczosBreakdown, lanczos_bounds
from .filters import (DegreeOverflow, FilterPolynomial, FilterStats, apply_cheb_filter,
                      cheb_on_grid,
                      choose_degree, filter_quality, filter_window, jackson_kernel,
                      window_coeffs)
from .fd import (LEFT, RIGHT, FdResult, FdState, Intervals, filter_diagonalize,
                 orthogonalize, rayleigh_ritz, select_intervals)

__all__ = [
    "LanczosBreakdown", "lanczos_bounds", "DegreeOverflow", "FilterPolynomial",
    "FilterStats", "apply_cheb_filter", "cheb_on_grid", "choose_degree", "filter_quality",
    "filter_window", "jackson_kernel", "window_coeffs", "LEFT", "RIGHT", "FdResult",
    "FdState", "Intervals", "filter_diagonalize", "orthogonalize", "rayleigh_ritz",
    "select_intervals",
]
