import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from commlab.perfmodel import (
    REFERENCE_PARAMS, FitError, ModelError, ModelParams, amortization_report,
    amortized_speedup, break_even, cheb_iter_time, comm_bound_speedup, efficiency_bound,
    fit_params, load_params, panel_speedup, pillar_always, plan_rows,
    redistribution_factor, spmv_time,
)
from oracles import estimate_T

HUB = REFERENCE_PARAMS["Hubbard14"]
# measured Hubbard 14/7 metrics, used as a realistic chi profile
HUB_CHI = {1: 0.0, 2: 0.54, 4: 1.51, 8: 2.52, 16: 3.37, 32: 4.17, 64: 5.58}


def test_params_validation():
    with pytest.raises(ModelError):
        ModelParams(b_m=1e9, b_c=2e9)
    with pytest.raises(ModelError):
        ModelParams(kappa=2.0)
    with pytest.raises(ModelError):
        ModelParams(S_d=4)
    with pytest.raises(ModelError):
        ModelParams(S_i=2)
    assert ModelParams().ratio == pytest.approx(7.30 * 2.82 / 53.3)


def test_spmv_time_examples():
    p = ModelParams(b_m=53.3e9, b_c=2.82e9)
    assert spmv_time(53.3e9, 0, p) == pytest.approx(1.0)
    q = ModelParams(b_m=50e9, b_c=2.5e9)
    assert spmv_time(1e9, 1e9, q) == pytest.approx(0.42)
    assert spmv_time(1e9, 1e9, q, overlap=True) == pytest.approx(0.4)
    with pytest.raises(ModelError):
        spmv_time(-1, 0, q)


def test_cheb_iter_time_limits_and_regression():
    p = REFERENCE_PARAMS["Exciton75"]
    T0 = cheb_iter_time(1000, 4, 8, 9.0, 0.0, p, drop_matrix_term=True)
    assert T0 == pytest.approx(p.kappa * p.S_d * 8 * 1000 / (p.b_m * 4), rel=1e-15)
    T = cheb_iter_time(10_328_853, 32, 64, 8.96, 0.42, p)
    assert T == pytest.approx(0.0955807507503892, rel=1e-13)
    assert T == pytest.approx(estimate_T(10_328_853, 32, 64, 8.96, 0.42, p.b_m, p.b_c,
                                         p.kappa, p.S_d, p.S_i), rel=1e-14)
    with pytest.raises(ModelError):
        cheb_iter_time(1000, 4, 0, 9.0, 0.0, p)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e3, 1e9), st.integers(1, 1024), st.integers(1, 256), st.floats(1, 40),
       st.floats(0, 10), st.floats(3, 20), st.floats(1e9, 1e10), st.floats(2, 50))
def test_cheb_iter_time_matches_oracle(D, N_p, n_b, n_nzr, chi, kappa, b_c, factor):
    p = ModelParams(b_m=b_c * factor, b_c=b_c, kappa=kappa)
    for drop in (False, True):
        assert cheb_iter_time(D, N_p, n_b, n_nzr, chi, p, drop) == pytest.approx(
            estimate_T(D, N_p, n_b, n_nzr, chi, p.b_m, p.b_c, kappa, 8, 4, not drop), rel=1e-12)


def test_panel_speedup_limits():
    assert panel_speedup(3.0, 3.0, HUB) == 1.0
    assert panel_speedup(4.17, 0.0, HUB) == pytest.approx(1 + 4.17 * HUB.b_m / (HUB.kappa * HUB.b_c))
    assert panel_speedup(4.17, 0.0, HUB) == pytest.approx(8.88, abs=0.01)
    assert comm_bound_speedup(4.0, 2.0) == 2.0
    assert comm_bound_speedup(4.0, 0.0) == math.inf


def test_redistribution_factor_examples():
    assert redistribution_factor(1, 2.0, HUB) == 0.0
    p = ModelParams(b_m=1.0 / 0.0529, b_c=1.0, kappa=10.0)
    assert redistribution_factor(8, 1.0, p) == pytest.approx(0.875 / 1.529, rel=1e-12)
    P = 32
    assert redistribution_factor(P, 0.0, HUB) == pytest.approx((1 - 1 / P) * HUB.b_m / (HUB.kappa * HUB.b_c))
    with pytest.raises(ModelError):
        redistribution_factor(0, 1.0, HUB)


@pytest.mark.parametrize("s, r, n, S", [(4.98, 4, 10, 2.77), (1.60, 4, 20, 1.14)])
def test_amortized_examples(s, r, n, S):
    assert round(amortized_speedup(s, r, n), 2) == S


def test_amortized_limits():
    assert np.all(amortized_speedup(2.5, 0, np.arange(1, 50)) == 2.5)
    s, r = 2.3, 7.0
    n = np.arange(1, 5000)
    S = amortized_speedup(s, r, n)
    assert np.all(S < s) and np.all(np.diff(S) > 0)
    assert amortized_speedup(s, r, 1000 * r) == pytest.approx(s, rel=0.01)


@pytest.mark.parametrize("s, r, n_star, n_ceil", [(1.39, 1, 5.13, 6), (2.69, 9, 10.65, 11),
                                                  (2.0, 0, 0.0, 0)])
def test_break_even_examples(s, r, n_star, n_ceil):
    be = break_even(s, r)
    assert be.favorable and round(be.n_star, 2) == n_star and be.n_ceil == n_ceil


def test_break_even_crossing():
    for s, r in [(1.39, 1), (2.27, 8), (7.25, 15), (1.19, 2)]:
        be = break_even(s, r)
        assert amortized_speedup(s, r, be.n_ceil) >= 1 - 1e-12
        assert amortized_speedup(s, r, be.n_ceil - 1) < 1 + 1e-12


def test_never_favorable():
    be = break_even(0.9, 3)
    assert not be.favorable and math.isinf(be.n_star) and be.n_ceil is None
    assert be.to_dict()["n_star"] is None


def test_pillar_always_and_efficiency():
    assert pillar_always(3.37) and pillar_always(2.0) and not pillar_always(1.99)
    p = ModelParams(b_m=18.9e9, b_c=1e9)
    assert efficiency_bound(0.0, p) == 1.0
    assert efficiency_bound(5.58, p) == pytest.approx(0.0095, abs=5e-5)
    assert efficiency_bound(1 / 18.9, p) == pytest.approx(1.0)
    with pytest.raises(ModelError):
        efficiency_bound(-1.0, p)


def test_amortization_report():
    rep = amortization_report(4.98, 4, [10, 20])
    assert rep.n_ceil == 3 and set(rep.S) == {10, 20}
    assert rep.to_dict()["S"]["10"] == pytest.approx(2.766, abs=1e-3)


def test_plan_rows_structure():
    rows = plan_rows(HUB_CHI, 32, HUB, [10, 100])
    assert [r["N_col"] for r in rows] == [1, 2, 4, 8, 16, 32]
    assert rows[0]["s"] == 1.0 and rows[0]["r"] == 0.0
    assert rows[-1]["pillar_always"] and not rows[1]["pillar_always"]
    for r in rows:
        assert r["N_row"] * r["N_col"] == 32


def _synthetic(params, D=1e7, n_b=32, n_nzr=14.0, chi=HUB_CHI, drop=False):
    pts = [(N_p, c, cheb_iter_time(D, N_p, n_b, n_nzr, c, params, drop))
           for N_p, c in chi.items()]
    fixed = dict(b_m=params.b_m, n_b=n_b, n_nzr=n_nzr, S_d=params.S_d, S_i=params.S_i, D=D)
    return pts, fixed


@pytest.mark.parametrize("drop", [False, True])
def test_fit_round_trip(drop):
    truth = ModelParams(kappa=7.3, b_c=2.82e9)
    pts, fixed = _synthetic(truth, drop=drop)
    fit = fit_params(pts, fixed, drop_matrix_term=drop)
    assert fit.kappa == pytest.approx(7.3, rel=1e-12)
    assert fit.b_c == pytest.approx(2.82e9, rel=1e-12)
    assert fit.residual < 1e-12


def test_fit_with_noise():
    truth = ModelParams(kappa=7.3, b_c=2.82e9)
    pts, fixed = _synthetic(truth)
    worst_k = worst_b = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        noisy = [(n, c, T * rng.uniform(0.95, 1.05)) for n, c, T in pts]
        fit = fit_params(noisy, fixed)
        worst_k = max(worst_k, abs(fit.kappa / 7.3 - 1))
        worst_b = max(worst_b, abs(fit.b_c / 2.82e9 - 1))
    assert worst_k <= 0.10 and worst_b <= 0.10


def test_fit_errors():
    truth = ModelParams()
    pts, fixed = _synthetic(truth)
    with pytest.raises(FitError) as err:
        fit_params(pts[:1], fixed)
    assert err.value.kappa == pytest.approx(truth.kappa, rel=1e-12)
    with pytest.raises(FitError):
        fit_params(pts[1:], fixed)
    with pytest.raises(FitError):
        fit_params(pts, {k: v for k, v in fixed.items() if k != "D"})


def test_load_params(tmp_path):
    flat = tmp_path / "flat.toml"
    flat.write_text("bm = 50e9\nbc = 2.5e9  # effective\nkappa = 9\nSd = 16\n")
    p = load_params(flat)
    assert (p.b_m, p.b_c, p.kappa, p.S_d, p.S_i) == (50e9, 2.5e9, 9.0, 16, 4)
    ini = tmp_path / "p.ini"
    ini.write_text("[model]\nb_c = 3e9\n")
    assert load_params(ini, base=HUB).b_c == 3e9 and load_params(ini, base=HUB).kappa == 10.0
    bad = tmp_path / "bad.ini"
    bad.write_text("bandwidth = 1\n")
    with pytest.raises(ModelError):
        load_params(bad)
    worse = tmp_path / "worse.ini"
    worse.write_text("bm = 1e9\nbc = 2e9\n")
    with pytest.raises(ModelError):
        load_params(worse)
