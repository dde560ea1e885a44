import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cpmcf import pinching as P
from cpmcf.ambient import Dimensions
from cpmcf.errors import ContractViolation, SingularPointError, UnsupportedDimensionError


def test_phi_n3_is_affine():
    p = P.PhiParams(3, 0.0)
    x = np.array([0.0, 1.0, 7.5, 1e4])
    np.testing.assert_allclose(P.phi_eps(x, p), 2 + x / 2, rtol=0, atol=1e-10)
    d = P.phi_eps_derivs(x, p)
    assert np.all(d.tl_d2 == 0)


@pytest.mark.parametrize("n", [5, 7, 9, 25])
def test_phi_at_zero(n):
    p = P.PhiParams(n, 0.0)
    assert abs(P.phi_eps(0.0, p) - (2 + p.a)) < 1e-14
    assert 2 + p.a < n


def test_phi_min_n5():
    p = P.PhiParams(5, 0.0)
    x, val = P.phi_minimizer(p)
    assert abs(val - (4 * math.sqrt(2) - 2)) < 1e-10
    assert abs(P.phi_eps(x, p) - val) < 1e-12
    xs = np.linspace(1e-6, 200, 200_001)
    assert P.phi_eps(xs, p).min() >= val - 1e-12


@pytest.mark.parametrize("n", [7, 9, 11, 15, 25])
def test_phi_min_closed_form(n):
    assert abs(P.phi_minimizer(P.PhiParams(n))[1] - P.phi_min_closed_form(n)) < 1e-10


@pytest.mark.parametrize("n", [3, 5, 11, 25])
def test_phi_derivative_limit(n):
    p = P.PhiParams(n, 1e-6)
    assert abs(P.phi_eps_derivs(1e12, p).d1 - 1 / (n - 1)) < 1e-6


@given(st.sampled_from([3, 5, 7, 15]), st.sampled_from([0.0, 1e-6, 1e-2]), st.floats(1e-2, 1e4))
def test_phi_derivs_match_central_differences(n, eps, x):
    p = P.PhiParams(n, eps)
    h = max(x, 1.0) * 1e-5
    fd1 = (P.phi_eps(x + h, p) - P.phi_eps(x - h, p)) / (2 * h)
    d = P.phi_eps_derivs(x, p)
    assert abs(d.d1 - fd1) <= 1e-6 * max(abs(fd1), 1e-3)
    fd2 = (P.phi_eps_derivs(x + h, p).d1 - P.phi_eps_derivs(x - h, p).d1) / (2 * h)
    assert abs(d.d2 - fd2) <= 1e-6 * max(abs(fd2), 1e-3 * abs(d.d1) / max(x, 1.0))
    assert abs(d.tl - (P.phi_eps(x, p) - x / n)) < 1e-12 * (1 + x)


def test_phi_singular_at_zero():
    with pytest.raises(SingularPointError):
        P.phi_eps_derivs(0.0, P.PhiParams(5, 0.0))
    P.phi_eps_derivs(0.0, P.PhiParams(5, 1e-4))


def test_param_contracts():
    with pytest.raises(UnsupportedDimensionError):
        P.PhiParams(2)
    with pytest.raises(ContractViolation):
        P.PhiParams(5, 1.5)
    with pytest.raises(UnsupportedDimensionError):
        P.PsiParams(4)


@pytest.mark.parametrize("n", P.PSI_N)
def test_psi_closed_values(n):
    p = P.PsiParams(n)
    assert P.psi(0.0, p) == 0.0
    assert abs(P.psi_derivs(0.0, p).d1 - 1 / n) < 1e-12
    assert abs(P.psi_derivs(1e12, p).d1 - 1 / (n - 1)) < 1e-6
    assert abs(p.mu * p.A + p.lam * p.nu * p.B - p.C) <= 1e-12 * abs(p.C)
    assert abs(p.nu * p.A + p.lam * p.mu * p.B - p.C) <= 1e-12 * abs(p.C)


@pytest.mark.parametrize("n", P.PSI_N)
def test_psi_gmax(n):
    p = P.PsiParams(n)
    x0, g0 = P.psi_gmax(p)
    xs = np.concatenate([np.linspace(0, 10 * x0, 100_001), [x0]])
    d = P.psi_derivs(xs, p)
    g = 2 * xs * d.d2 + d.d1
    assert abs(g[-1] - g0) < 1e-12
    assert g.max() <= g0 + 1e-12


@given(st.sampled_from(P.PSI_N), st.floats(1e-3, 1e6))
def test_psi_gaps_match_direct(n, x):
    p = P.PsiParams(n)
    v = P.psi(x, p)
    assert abs(P.psi_gap_upper(x, p) - (x / (n - 1) - v)) < 1e-10 * (1 + x)
    assert abs(P.psi_gap_lower(x, p) - (v - x / n)) < 1e-10 * (1 + x)
    assert P.psi_gap_upper(x, p) > 0 and P.psi_gap_lower(x, p) > 0


def test_thresholds_examples():
    assert abs(P.W_threshold(0.0, P.PinchingCase.of(Dimensions(8, 2))) - 1.625) < 1e-15
    assert abs(P.W_threshold(0.0, P.PinchingCase.of(Dimensions(3, 1))) - 2) < 1e-15
    assert P.W_threshold(0.0, P.PinchingCase.of(Dimensions(6, 6))) == 0.0


def test_case_tags():
    tag = lambda n, q: P.PinchingCase.of(Dimensions(n, q)).tag
    assert tag(3, 1) is P.CaseTag.HYPERSURFACE
    assert tag(8, 2) is P.CaseTag.MID
    assert tag(8, 4) is P.CaseTag.HIGH
    assert tag(6, 6) is P.CaseTag.HIGH
    assert tag(2, 2) is P.CaseTag.UNSUPPORTED
    assert tag(4, 2) is P.CaseTag.UNSUPPORTED


@given(st.floats(0, 1e3), st.floats(0.01, 1e3), st.floats(1e-3, 0.999))
def test_f_sigma(t, W, s):
    assert P.f_sigma(0.0, W, s) == 0
    assert abs(P.f_sigma(t, 1.0, s) - t) <= 1e-15 * (1 + t)
    assert abs(P.f_sigma(t, W, 1e-12) - t / W) <= 1e-9 * (1 + t / W)


def test_f_sigma_contract():
    with pytest.raises(ContractViolation):
        P.f_sigma(1.0, 0.0, 0.5)
    with pytest.raises(ContractViolation):
        P.f_sigma(1.0, 1.0, 1.0)


def test_classify_examples():
    r = P.classify_and_check(0.0, 0.0, Dimensions(6, 6))
    assert r.verdict is P.Verdict.WEAK
    r = P.classify_and_check(1.0, 0.0, Dimensions(8, 2))
    assert r.verdict is P.Verdict.STRICT
    r = P.classify_and_check(0.1, 0.0, Dimensions(6, 6))
    assert r.verdict is P.Verdict.VIOLATED
    r = P.classify_and_check(np.zeros(3), np.zeros(3), Dimensions(2, 2))
    assert r.verdict is P.Verdict.UNSUPPORTED and np.all(np.isnan(r.margin))
    with pytest.raises(UnsupportedDimensionError):
        P.pinching_rhs(0.0, P.PinchingCase.of(Dimensions(2, 2)))


@pytest.mark.parametrize("n", [5, 9, 25])
def test_quotient_reduced_form_matches_direct(n):
    p = P.PhiParams(n, 1e-4)
    x = np.array([0.1, 1.0, 10.0, 100.0])
    f, scale = P.phi_quotient(x, p)
    np.testing.assert_allclose(f, P.phi_quotient_direct(x, p), rtol=0, atol=1e-10 * scale.max())


def test_verify_appendix_small_grid():
    rep = P.verify_appendix((3, 5), (1e-6,), P.GridSpec(200, 100.0, 200, 1e6), (6,))
    assert rep.all_passed
    names = {r.inequality for r in rep.records}
    assert {"phi.above_line", "phi.min_closed_form", "psi.at_zero", "psi.cubic_identity",
            "psi_tl.value_lower", "phi_eps.quotient_bound"} <= names
    assert rep.largest_passing_eps[5] == 1e-6
    js = rep.to_json()
    assert '"phi.sqrt_floor"' in js
    assert rep.to_csv().splitlines()[0].startswith("inequality")


def test_verify_appendix_records_eps_failures():
    rep = P.verify_appendix((25,), (1e-4, 1e-2), P.GridSpec(200, 100.0, 200, 1e6), ())
    bad = {(r.inequality, r.eps) for r in rep.failures()}
    assert ("phi_eps.quotient_bound.limit", 1e-2) in bad
    assert rep.largest_passing_eps[25] == 1e-4
    assert P.appendix_verdict(rep, (1e-4, 1e-2))
