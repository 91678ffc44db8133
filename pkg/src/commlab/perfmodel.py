"""Closed-form performance model for the Chebyshev filter and layout switching.

All bandwidths are in bytes/second, sizes in bytes, times in seconds.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Bandwidths ``b_m`` (memory) and ``b_c`` (effective communication), the
    vector-traffic factor ``kappa`` and the value/index sizes."""

    b_m: float = 53.3e9
    b_c: float = 2.82e9
    kappa: float = 7.30
    S_d: int = 8
    S_i: int = 4

    def __post_init__(self):
        if not (self.b_m > self.b_c > 0):
            raise ModelError(f"need b_m > b_c > 0, got b_m={self.b_m}, b_c={self.b_c}")
        if self.kappa < 3:
            raise ModelError(f"kappa must be >= 3, got {self.kappa}")
        if self.S_d not in (8, 16):
            raise ModelError(f"S_d must be 8 or 16, got {self.S_d}")
        if self.S_i not in (4, 8):
            raise ModelError(f"S_i must be 4 or 8, got {self.S_i}")

    @property
    def ratio(self) -> float:
        """``kappa * b_c / b_m``, the constant shared by s and r."""
        return self.kappa * self.b_c / self.b_m

    def replace(self, **kw) -> "ModelParams":
        return ModelParams(**{**asdict(self), **kw})


# measured parameter sets for the reference matrices (complex Exciton: S_d = 16)
REFERENCE_PARAMS = {
    "Exciton75": ModelParams(53.3e9, 2.82e9, 7.30, 16, 4),
    "Exciton200": ModelParams(53.3e9, 3.10e9, 7.30, 16, 4),
    "Hubbard14": ModelParams(53.3e9, 2.82e9, 10.0, 8, 4),
    "Hubbard16": ModelParams(53.3e9, 2.54e9, 10.0, 8, 4),
}

_CONFIG_KEYS = {"bm": "b_m", "bc": "b_c", "kappa": "kappa", "sd": "S_d", "si": "S_i"}


def load_params(path, base: ModelParams | None = None) -> ModelParams:
    """Read a flat TOML/INI-style file with keys ``bm, bc, kappa, Sd, Si``.

    Missing keys fall back to ``base`` (default :class:`ModelParams`).
    Section headers are optional; keys from all sections are merged.
    """
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError:
        cp.read_string("[params]\n" + text)
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            name = _CONFIG_KEYS.get(key.lower().replace("_", ""))
            if name is None:
                raise ModelError(f"unknown model parameter key {key!r} in {path}")
            num = float(raw.strip().strip("\"'"))
            values[name] = int(num) if name in ("S_d", "S_i") else num
    return (base or ModelParams()).replace(**values)


def spmv_time(V_m: float, V_c: float, params: ModelParams, overlap: bool = False) -> float:
    """Per-process SpMV time ``V_m/b_m + V_c/b_c`` (or the max under perfect overlap)."""
    if V_m < 0 or V_c < 0:
        raise ModelError("volumes must be nonnegative")
    tm, tc = V_m / params.b_m, V_c / params.b_c
    return max(tm, tc) if overlap else tm + tc


def cheb_iter_time(D: float, N_p: int, n_b: int, n_nzr: float, chi: float,
                   params: ModelParams, drop_matrix_term: bool = False) -> float:
    """Time of one Chebyshev filter iteration on ``N_p`` processes and ``n_b`` vectors."""
    if n_b <= 0:
        raise ModelError("n_b must be positive")
    p = params
    matrix = 0.0 if drop_matrix_term else (p.S_d + p.S_i) * n_nzr / n_b
    per_entry = (matrix + p.kappa * p.S_d) / p.b_m + chi * p.S_d / p.b_c
    return per_entry * n_b * D / N_p


def panel_speedup(chi_P: float, chi_Pcol: float, params: ModelParams) -> float:
    """Speedup ``s`` of the panel layout over the stack layout."""
    den = params.ratio + chi_Pcol
    if den == 0:
        raise ModelError("kappa and chi[P/N_col] are both zero")
    return (params.ratio + chi_P) / den


def comm_bound_speedup(chi_P: float, chi_Pcol: float) -> float:
    """Communication-bound limit ``chi[P]/chi[P/N_col]`` (infinite for a pillar)."""
    if chi_Pcol == 0:
        return math.inf
    return chi_P / chi_Pcol


def redistribution_factor(N_col: int, chi_Pcol: float, params: ModelParams) -> float:
    """Cost ``r`` of one redistribution in units of panel-layout filter iterations."""
    if N_col < 1:
        raise ModelError("N_col must be >= 1")
    den = params.ratio + chi_Pcol
    if den == 0:
        raise ModelError("zero denominator in redistribution factor")
    return (1.0 - 1.0 / N_col) / den


def amortized_speedup(s, r, n):
    """Speedup ``S = s n / (n + 2 r)`` including two redistributions per filter run."""
    n = np.asarray(n, dtype=float)
    out = s * n / (n + 2.0 * r)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BreakEven:
    favorable: bool
    n_star: float
    n_ceil: int | None

    def to_dict(self) -> dict:
        return {"favorable": self.favorable,
                "n_star": None if math.isinf(self.n_star) else self.n_star,
                "n_ceil": self.n_ceil}


def break_even(s: float, r: float) -> BreakEven:
    """Degree ``n* = 2r/(s-1)`` beyond which the panel layout pays off.

    For ``s <= 1`` the panel layout is never favorable (``n_star = inf``).
    """
    if s <= 1:
        return BreakEven(False, math.inf, None)
    n_star = 2.0 * r / (s - 1.0)
    return BreakEven(True, n_star, math.ceil(n_star))


def pillar_always(chi_P: float) -> bool:
    """Pillar layout pays off for every degree n >= 1."""
    return chi_P >= 2.0


def efficiency_bound(chi3: float, params: ModelParams) -> float:
    """Upper estimate ``min(1, (b_c/b_m)/chi3)`` of the parallel efficiency."""
    if chi3 < 0:
        raise ModelError("chi3 must be nonnegative")
    if chi3 == 0:
        return 1.0
    return min(1.0, (params.b_c / params.b_m) / chi3)


@dataclass(frozen=True)
class AmortizationReport:
    s: float
    r: float
    n_star: float
    n_ceil: int | None
    S: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"s": self.s, "r": self.r,
                "n_star": None if math.isinf(self.n_star) else self.n_star,
                "n_ceil": self.n_ceil, "S": {str(k): v for k, v in self.S.items()}}


def amortization_report(s: float, r: float, degrees: Iterable[int]) -> AmortizationReport:
    be = break_even(s, r)
    table = {int(n): amortized_speedup(s, r, n) for n in degrees}
    return AmortizationReport(s, r, be.n_star, be.n_ceil, table)


def plan_rows(chi: Mapping[int, float], P: int, params: ModelParams,
              degrees: Sequence[int]) -> list[dict]:
    """Recommendation rows for every divisor ``N_col`` of ``P``.

    ``chi`` maps process counts to metric values and must contain ``P`` and
    every ``P/N_col``.
    """
    rows = []
    for N_col in (d for d in range(1, P + 1) if P % d == 0):
        chi_col = 0.0 if P // N_col == 1 else chi[P // N_col]
        s = panel_speedup(chi[P], chi_col, params)
        r = redistribution_factor(N_col, chi_col, params)
        rep = amortization_report(s, r, degrees)
        rows.append({
            "N_col": N_col,
            "N_row": P // N_col,
            "s": s,
            "r": r,
            "n_star": rep.n_star,
            "n_ceil": rep.n_ceil,
            "S": rep.S,
            "pillar_always": N_col == P and pillar_always(chi[P]),
        })
    return rows


class FitError(ModelError):
    """Fit failure; ``kappa`` is set when it could still be determined."""

    def __init__(self, message: str, kappa: float | None = None):
        super().__init__(message)
        self.kappa = kappa


@dataclass(frozen=True)
class FitResult:
    kappa: float
    b_c: float
    residual: float


def fit_params(measured: Sequence[tuple[int, float, float]], fixed: Mapping[str, float],
               drop_matrix_term: bool = False) -> FitResult:
    """Fit ``kappa`` and ``b_c`` to measured ``(N_p, chi[N_p], T)`` points.

    ``fixed`` must provide ``b_m, n_b, n_nzr, S_d, S_i, D``.  ``kappa`` comes
    from the single-process points (chi = 0); ``b_c`` from a least-squares fit
    of ``1/b_c`` (relative residuals) over the remaining points with ``kappa``
    held fixed.  ``residual`` is the maximal relative deviation of the model.
    """
    need = ("b_m", "n_b", "n_nzr", "S_d", "S_i", "D")
    missing = [k for k in need if k not in fixed]
    if missing:
        raise FitError(f"fixed inputs missing: {missing}")
    b_m, n_b, n_nzr = float(fixed["b_m"]), float(fixed["n_b"]), float(fixed["n_nzr"])
    S_d, S_i, D = float(fixed["S_d"]), float(fixed["S_i"]), float(fixed["D"])
    pts = np.asarray(measured, dtype=float).reshape(-1, 3)
    single = pts[pts[:, 0] == 1]
    multi = pts[pts[:, 0] > 1]
    if len(single) == 0:
        raise FitError("need at least one N_p = 1 point to fix kappa")
    matrix = 0.0 if drop_matrix_term else (S_d + S_i) * n_nzr / n_b
    # per-entry time t = T N_p / (n_b D)
    t1 = single[:, 2] * single[:, 0] / (n_b * D)
    kappa = float(np.mean((t1 * b_m - matrix) / S_d))
    if kappa <= 0:
        raise FitError(f"fitted kappa is not positive ({kappa})")
    if len(multi) == 0:
        raise FitError(f"kappa = {kappa:.6g}; need an N_p > 1 point to fit b_c", kappa)
    t = multi[:, 2] * multi[:, 0] / (n_b * D)
    y = t - (matrix + kappa * S_d) / b_m
    c = multi[:, 1] * S_d
    w = 1.0 / t
    den = float(np.sum((w * c) ** 2))
    if den == 0:
        raise FitError("all N_p > 1 points have chi = 0; b_c is undetermined", kappa)
    inv_bc = float(np.sum(w * w * c * y)) / den
    if inv_bc <= 0:
        raise FitError("fitted b_c is not positive")
    b_c = 1.0 / inv_bc
    model = (matrix + kappa * S_d) / b_m + pts[:, 1] * S_d / b_c
    meas = pts[:, 2] * pts[:, 0] / (n_b * D)
    residual = float(np.max(np.abs(model / meas - 1.0)))
    return FitResult(kappa, b_c, residual)
