import math

import mpmath
import numpy as np
import pytest

from spectral_bvp_lab.halfline import FirstOrderWeight
from spectral_bvp_lab.projections import aps_projection, constant_projection, perturb_projection, spectral_projection
from spectral_bvp_lab.reduction import AssumptionError, RefusalError, Scenario
from spectral_bvp_lab.spectral_functions import (
    EULER_GAMMA,
    IdentityViolation,
    boundary_heat_trace,
    choose_cutoff,
    d_route_trace,
    eta,
    eta_invariant,
    fit_expansion,
    hurwitz_zeta,
    index_supertrace,
    log_t_grid,
    power_sum,
    symmetry_identities,
    zeta,
    zeta_eta,
    zeta_eta_identity,
    zeta_from_fit,
)
from spectral_bvp_lab.tangential import (
    ModeBasis,
    TangentialOperator,
    build_model_operator,
    dirac_sigma,
    morphism,
    square,
)


def scalar_shift(a, cutoff=64):
    return build_model_operator({"family": "ScalarShift", "a": a}, cutoff=cutoff)


def dirac(m, cutoff=64):
    return build_model_operator({"family": "DiracPair", "m": m}, cutoff=cutoff)


def aps_scalar_scenario(a=0.25, cutoff=64, b=None):
    A = scalar_shift(a, cutoff)
    bb = morphism(A.basis, [[0.0]]) if b is None else b
    return Scenario(square(A), aps_projection(A, "ge"), bb, a=A)


def dirac_scenario(m, cutoff=64, selector="ge"):
    A = dirac(m, cutoff)
    sig = dirac_sigma(A.basis)
    if selector in ("ge", "gt"):
        p = aps_projection(A, selector)
    else:
        p = spectral_projection(A, selector, sigma=sig if selector == "lagrangian" else None)
    return Scenario(square(A), p, A, a=A, sigma=sig)


# ---------------------------------------------------------------------------
# Hurwitz zeta and mode sums


@pytest.mark.parametrize(
    "z,q",
    [(0.0, 0.25), (0.5, 1.75), (2.0, 3.0), (-1.0, 0.5), (-1.5 + 2j, 30.0), (0.3 + 5j, 1.0), (1.5, 2049.0)],
)
def test_hurwitz_matches_mpmath(z, q):
    ref = complex(mpmath.zeta(z, q))
    assert abs(complex(hurwitz_zeta(z, q)) - ref) <= 1e-11 * max(1.0, abs(ref))


def test_hurwitz_rejects_pole_and_bad_parameter():
    with pytest.raises(ValueError):
        hurwitz_zeta(1.0, 0.5)
    with pytest.raises(ValueError):
        hurwitz_zeta(0.5, 0.0)


def test_power_sum_strip():
    c = scalar_shift(0.25)
    with pytest.raises(ValueError):
        power_sum(c, -2.0)
    assert np.isfinite(power_sum(c, -1.9))


def test_power_sum_needs_branches_on_circle():
    b = ModeBasis("circle", 1, 4)
    op = TangentialOperator(b, np.arange(-4, 5, dtype=float)[:, None, None] + 0.5, 1, selfadjoint=True)
    with pytest.raises(ValueError):
        power_sum(op, 0.5)


# ---------------------------------------------------------------------------
# eta and zeta


def test_eta_vanishes_for_symmetric_spectrum():
    c = scalar_shift(0.5)
    for s in (0.0, 0.3, 1.5, -0.5 + 1j):
        assert abs(eta(c, s).value) <= 1e-12


@pytest.mark.parametrize("a", [0.1, 0.25, 0.4])
def test_eta_at_zero_is_one_minus_two_a(a):
    assert eta(scalar_shift(a), 0.0).value.real == pytest.approx(1 - 2 * a, abs=1e-8)


def test_eta_against_hurwitz_oracle_off_zero():
    a = 0.25
    c = scalar_shift(a, cutoff=16)
    for s in (0.3, 0.7 + 0.5j, 2.5):
        ref = complex(mpmath.zeta(s, a) - mpmath.zeta(s, 1 - a))
        assert abs(eta(c, s).value - ref) <= 1e-10 * max(1, abs(ref))


def test_eta_is_odd_under_negation():
    for c in (scalar_shift(0.25), dirac(0.5)):
        for s in (0.0, 0.4, 1.2 + 0.3j):
            assert abs(eta(-c, s).value + eta(c, s).value) <= 1e-12


def test_zeta_pole_data():
    # DiracPair m = 0: nonzero eigenvalues ±|k|, each |k| twice per sign, so ζ = 4ζ_R
    c = dirac(0.0)
    v = zeta(c, 1.0)
    assert v.residue_simple == pytest.approx(4.0, abs=1e-8)
    assert v.value.real == pytest.approx(4 * EULER_GAMMA, abs=1e-8)
    assert zeta(c, -1.0).value.real == pytest.approx(-1 / 3, abs=1e-10)
    assert zeta(c, 0.5).residue_simple is None
    # m = 0.5: the binomial tail puts a pole at -1 with residue 2 m²
    v = zeta(dirac(0.5), -1.0)
    assert v.residue_simple == pytest.approx(0.5, abs=1e-8)


def test_zeta_of_shift_matches_hurwitz_pair():
    a = 0.25
    c = scalar_shift(a, cutoff=8)
    s = 0.6
    ref = complex(mpmath.zeta(s, a) + mpmath.zeta(s, 1 - a))
    assert abs(zeta(c, s).value - ref) <= 1e-10


def test_zeta_eta_requires_selfadjoint():
    c = scalar_shift(0.25)
    got = zeta_eta(c, [0.3, 0.7])
    assert len(got.zeta) == len(got.eta) == 2
    op = TangentialOperator(c.basis, c.blocks * (1 + 1j), 1)
    with pytest.raises(ValueError):
        zeta_eta(op, [0.3])


# ---------------------------------------------------------------------------
# the half-projection identity and the eta invariant


def test_identity_on_shift_without_nullspace():
    c = scalar_shift(0.25)
    lhs, rhs = zeta_eta_identity(c, spectral_projection(c, "empty"), 0.7)
    assert abs(lhs - rhs) <= 1e-10


@pytest.mark.parametrize("selector", ["full", "empty", "lagrangian"])
def test_identity_with_nullspace(selector):
    c = dirac(0.0)
    sig = dirac_sigma(c.basis)
    p = spectral_projection(c, selector, sigma=sig if selector == "lagrangian" else None)
    for s in (0.3, 0.7, 1.5):
        lhs, rhs = zeta_eta_identity(c, p, s)
        assert abs(lhs - rhs) <= 1e-10


def test_eta_invariant_examples():
    point = build_model_operator({"family": "MatrixPoint", "M": [[1.0, 0.0], [0.0, -1.0]]})
    assert eta_invariant(point) == 0.0
    c = scalar_shift(0.0)
    assert eta_invariant(c, "full") == pytest.approx(1.0, abs=1e-12)
    assert eta_invariant(c, "empty") == pytest.approx(-1.0, abs=1e-12)


def test_eta_invariant_consistency_cases():
    c = dirac(0.0)
    sig = dirac_sigma(c.basis)
    e0 = eta(c, 0.0).value.real
    assert eta_invariant(c, "full") == pytest.approx(e0 + 2, abs=1e-12)
    assert eta_invariant(c, "lagrangian", sigma=sig) == pytest.approx(e0, abs=1e-12)


# ---------------------------------------------------------------------------
# heat traces


def test_scalar_aps_trace_is_theta_sum():
    sc = aps_scalar_scenario(0.25, cutoff=64)
    h = boundary_heat_trace(sc, [1.0])
    k = np.arange(-64, 65)
    a = k + 0.25
    ref = math.fsum(np.where(a >= 0, -0.25, 0.25) * np.exp(-(a**2)))
    assert h.values[0].real == pytest.approx(ref, abs=1e-10)
    assert h.tail_bound <= 1e-14


def test_large_t_is_slowest_mode():
    sc = aps_scalar_scenario(0.25, cutoff=64)
    t = np.array([2.0, 5.0, 10.0])
    h = boundary_heat_trace(sc, t)
    lead = -0.25 * np.exp(-t / 16)
    dev = np.abs(h.values.real / lead - 1)
    assert dev[-1] <= 1e-2
    assert np.all(np.diff(dev) < 0)


def test_cutoff_bound_and_refusal():
    sc = aps_scalar_scenario(0.25, cutoff=64)
    k, bound = choose_cutoff(sc.pprime, 1e-2)
    assert bound <= 1e-14 and k < 64
    with pytest.raises(RefusalError):
        choose_cutoff(sc.pprime, 1e-4)
    with pytest.raises(ValueError):
        boundary_heat_trace(sc, [1e-7])


def test_compensated_and_plain_sums_agree():
    sc = aps_scalar_scenario(0.25, cutoff=256)
    t = log_t_grid(1e-3, 1.0, 8)
    dd = boundary_heat_trace(sc, t, precision="dd").values
    f64 = boundary_heat_trace(sc, t, precision="f64").values
    assert np.abs(dd - f64).max() <= 1e-12
    with pytest.raises(ValueError):
        boundary_heat_trace(sc, t, precision="quad")


def _sigma_symmetric_scenario(cutoff=512):
    A = dirac(0.5, cutoff)
    sig = dirac_sigma(A.basis)
    p = perturb_projection(aps_projection(A, "ge"), -2, 0.3, 11, preserve_sigma=sig)
    pp = square(A) + morphism(A.basis, 0.1 * np.eye(2))
    pp = TangentialOperator(A.basis, pp.blocks, 2, selfadjoint=True, nonnegative=True)
    return Scenario(pp, p, A, a=A, sigma=sig)


def test_d_weighted_samples_are_real_under_symmetry():
    sc = _sigma_symmetric_scenario()
    t = log_t_grid(1e-2, 1.0, 12)
    h = boundary_heat_trace(sc, t, weight=FirstOrderWeight(sc.sigma.blocks, sc.a.blocks))
    assert h.max_imag_ratio <= 1e-8


def test_symmetry_identities_are_exact():
    sc = _sigma_symmetric_scenario()
    for lam in (-1.0, -5.0 + 2j):
        r = symmetry_identities(sc, lam)
        assert r.resolvent <= 1e-12 * max(1.0, r.scale)
        assert r.half_power <= 1e-12 * max(1.0, r.scale)


def test_symmetry_identities_need_sigma():
    with pytest.raises(AssumptionError):
        symmetry_identities(aps_scalar_scenario(), -1.0)


def test_d_route_vanishes_under_symmetry():
    sc = _sigma_symmetric_scenario()
    h = d_route_trace(sc, log_t_grid(1e-2, 1.0, 8), sc.sigma.blocks)
    assert np.abs(h.values).max() <= 1e-12


# ---------------------------------------------------------------------------
# expansion fits


def test_fit_synthetic_leading_terms():
    t = log_t_grid(1e-4, 1e-1, 200)
    y = t**-0.5 - 0.5 * np.log(t) + 0.25
    f = fit_expansion(y, 1, 0, 4, t=t)
    assert f.coefficients[-1][0] == pytest.approx(1.0, abs=1e-6)
    # the expansion carries −a′₀ log t, so −0.5 log t means a′₀ = 0.5
    assert f.coefficients[0][1] == pytest.approx(0.5, abs=1e-6)
    assert f.coefficients[0][2] == pytest.approx(0.25, abs=1e-6)


def test_fit_synthetic_t_log_t():
    t = log_t_grid(1e-4, 1e-1, 200)
    y = t**-0.5 - 0.5 * np.log(t) + 0.25 + 0.3 * t * np.log(t)
    f = fit_expansion(y, 1, 0, 4, t=t)
    assert f.coefficients[2][1] == pytest.approx(-0.3, abs=1e-5)


def test_fit_weight_order_shifts_basis():
    t = log_t_grid(1e-4, 1e-1, 200)
    y = 2.0 * t**-1.5 + 0.7 * t**-0.5 * np.log(t) - 0.1 * t**-0.5
    f = fit_expansion(y, 2, 1, 3, t=t)
    assert f.coefficients[-2][0] == pytest.approx(2.0, rel=1e-8)
    assert f.coefficients[0][1] == pytest.approx(-0.7, abs=1e-6)
    assert f.coefficients[0][2] == pytest.approx(-0.1, abs=1e-6)


def test_fit_preconditions():
    t = log_t_grid(1e-4, 1e-1, 20)
    with pytest.raises(ValueError):
        fit_expansion(np.ones_like(t), 1, 0, 4, t=t)
    t = log_t_grid(1e-2, 1.0, 200)
    with pytest.raises(ValueError):
        fit_expansion(np.ones_like(t), 1, 0, 4, t=t)
    with pytest.raises(ValueError):
        fit_expansion(np.ones(10), 1, 0, 1, t=t)


def test_fit_refuses_ill_conditioned_design():
    t = log_t_grid(1e-4, 1e-1, 400)
    with pytest.raises(RefusalError):
        fit_expansion(t**-0.5 + 1.0, 2, 0, 8, t=t)


def test_fit_flags_noisy_coefficients():
    rng = np.random.default_rng(0)
    t = log_t_grid(1e-4, 1e-1, 200)
    y = (1.0 + 1e-7 * rng.normal(size=t.size)) * (t**-0.5 + 0.25)
    f = fit_expansion(y, 1, 0, 4, t=t)
    assert "a'_0" in f.indeterminate
    assert "a_-1" not in f.indeterminate


def test_zeta_dictionary_on_a_single_dirichlet_mode():
    # heat trace −¼e^{−t}: its zeta is −¼·1^{−s}, so ζ(0) = −¼ with no pole
    A = build_model_operator({"family": "MatrixPoint", "M": [[1.0]]})
    sc = Scenario(square(A), constant_projection(A.basis, [[1.0]]), morphism(A.basis, [[0.0]]))
    h = boundary_heat_trace(sc, log_t_grid(1e-5, 1e-2, 120))
    f = fit_expansion(h, 1, 0, 4)
    z = zeta_from_fit(f)
    assert z.value == pytest.approx(-0.25, abs=1e-6)
    assert abs(z.residue_simple) <= 1e-6
    f = fit_expansion(-0.3 * np.log(h.t) + 0.2, 1, 0, 4, t=h.t)
    z = zeta_from_fit(f)
    assert z.residue_simple == pytest.approx(0.3, abs=1e-9)
    assert z.value == pytest.approx(0.2 - EULER_GAMMA * 0.3, abs=1e-9)


def test_zeta_dictionary_rejects_first_order_weight():
    t = log_t_grid(1e-4, 1e-1, 200)
    f = fit_expansion(t**-1.5, 2, 1, 3, t=t)
    with pytest.raises(ValueError):
        zeta_from_fit(f)


@pytest.mark.slow
def test_scalar_aps_leading_log_vanishes():
    sc = aps_scalar_scenario(0.25, cutoff=2048)
    f = fit_expansion(boundary_heat_trace(sc, log_t_grid(1e-4, 1e-1, 160)), 2)
    a1, u1 = f.log_coefficient()
    assert abs(a1) <= 1e-4 * max(1.0, abs(f.coefficients[0][2]))
    assert f.condition_number <= 1e12


@pytest.mark.slow
def test_leading_log_is_independent_of_b():
    A = scalar_shift(0.25, 2048)
    t = log_t_grid(1e-4, 1e-1, 160)
    vals, uncs = [], []
    for b in (morphism(A.basis, [[0.0]]), morphism(A.basis, [[0.2]]), A):
        sc = Scenario(square(A), aps_projection(A, "ge"), b, a=A)
        f = fit_expansion(boundary_heat_trace(sc, t), 2)
        a1, u1 = f.log_coefficient()
        vals.append(a1)
        uncs.append(u1)
    assert max(vals) - min(vals) <= max(uncs) + min(uncs)


# ---------------------------------------------------------------------------
# index


def test_index_moves_with_the_nullspace_split():
    t = log_t_grid(1e-2, 10.0, 40)
    got = {}
    for sel in ("full", "lagrangian", "empty"):
        sc = dirac_scenario(0.0, cutoff=128, selector=sel)
        r = index_supertrace(sc, t)
        assert r.flatness <= 1e-8
        got[sel] = r.index
        assert r.index == pytest.approx(-0.5 * eta_invariant(sc.a, sel, sigma=sc.sigma), abs=1e-12)
    assert got == {"full": -1, "lagrangian": 0, "empty": 1}


def test_index_unchanged_by_smoothing_perturbation():
    t = log_t_grid(1e-2, 10.0, 40)
    sc = dirac_scenario(1.0, cutoff=128)
    base = index_supertrace(sc, t).index
    p = perturb_projection(sc.pi1, -2, 0.05, 3, preserve_sigma=sc.sigma)
    r = index_supertrace(sc.with_projection(p), t)
    assert r.index == base == 0
    assert r.flatness <= 1e-5


def test_index_needs_dirac_structure():
    with pytest.raises(AssumptionError, match="dirac-structure"):
        index_supertrace(aps_scalar_scenario(), [1.0])


def test_index_flatness_violation_is_reported():
    sc = dirac_scenario(1.0, cutoff=128)
    t = log_t_grid(1e-2, 10.0, 40)
    r = index_supertrace(sc, t)
    assert r.flatness > 0
    with pytest.raises(IdentityViolation):
        index_supertrace(sc, t, flatness_tol=r.flatness / 2)
