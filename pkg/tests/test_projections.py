import math

import numpy as np
import pytest
import scipy.linalg

from spectral_bvp_lab.projections import (
    EllipticityGrid,
    Projection,
    aps_projection,
    check_parameter_ellipticity,
    check_principal_commute,
    check_sigma_compat,
    check_wellposed,
    constant_projection,
    generating_operator,
    orthogonalize,
    orthogonalize_inverse,
    perturb_projection,
    rotate_projection,
    spectral_projection,
)
from spectral_bvp_lab.tangential import (
    ModeBasis,
    TangentialOperator,
    build_model_operator,
    dirac_sigma,
    morphism,
    square,
    tangential_derivative,
)

POINT2 = ModeBasis("point", 2)


def _point_projection(m):
    return Projection(POINT2, np.asarray(m, dtype=complex)[None])


def _point_op(m, selfadjoint=True):
    m = np.asarray(m, dtype=complex)
    return TangentialOperator(ModeBasis("point", m.shape[0]), m[None], 1, selfadjoint=selfadjoint)


# orthogonalize


def test_orthogonalize_oblique_2x2():
    p_ort, r = orthogonalize(_point_projection([[1, 1], [0, 0]]))
    np.testing.assert_allclose(p_ort.blocks[0], [[1, 0], [0, 0]], atol=1e-14)
    assert p_ort.orthogonal


def test_orthogonalize_identity():
    p_ort, r = orthogonalize(_point_projection(np.eye(2)))
    np.testing.assert_allclose(p_ort.blocks[0], np.eye(2), atol=1e-14)
    np.testing.assert_allclose(r.blocks[0], np.eye(2), atol=1e-14)


def test_orthogonalize_random_rank_two_against_qr_oracle():
    rng = np.random.default_rng(5)
    basis = ModeBasis("point", 4)
    for _ in range(5):
        x = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        y = rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))
        m = x @ np.linalg.solve(y @ x, y)  # oblique rank-2 idempotent
        p = Projection(basis, m[None])
        p_ort, r = orthogonalize(p)
        q, _ = np.linalg.qr(x)
        np.testing.assert_allclose(p_ort.blocks[0], q @ q.conj().T, atol=1e-12)
        # same range, both directions
        np.testing.assert_allclose(p_ort.blocks[0] @ m, m, atol=1e-12)
        np.testing.assert_allclose(m @ p_ort.blocks[0], p_ort.blocks[0], atol=1e-12)
        rinv = orthogonalize_inverse(p, p_ort)
        np.testing.assert_allclose(r.blocks[0] @ rinv[0], np.eye(4), atol=1e-12)
        np.testing.assert_allclose(r.blocks[0] @ m @ rinv[0], p_ort.blocks[0], atol=1e-12)


def test_projection_rejects_non_idempotent():
    with pytest.raises(ValueError):
        _point_projection([[1, 0], [0, 0.5]])


# generating operator


def test_generating_operator_diagonal():
    p = Projection(POINT2, np.diag([1.0, 0.0])[None], orthogonal=True)
    c1 = _point_op(np.eye(2))
    c = generating_operator(p, c1)
    np.testing.assert_allclose(c.blocks[0], np.diag([1.0, -1.0]), atol=1e-15)
    np.testing.assert_allclose(spectral_projection(c).blocks[0], np.diag([1.0, 0.0]), atol=1e-15)


def test_generating_operator_zero_projection():
    p = Projection(POINT2, np.zeros((1, 2, 2)), orthogonal=True)
    c1 = _point_op(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(generating_operator(p, c1).blocks[0], -np.diag([2.0, 3.0]), atol=1e-15)


def test_generating_operator_reproduces_aps_projection():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=32)
    p = aps_projection(a, "ge")
    c = generating_operator(p)
    w = np.linalg.eigvalsh(c.blocks)
    assert np.abs(w).min() >= 1 - 1e-12
    # eigendecomposition oracle per mode
    w, v = np.linalg.eigh(c.blocks)
    pos = np.einsum("mij,mj,mkj->mik", v, (w > 0).astype(float), v.conj())
    assert np.abs(pos - p.blocks).max() <= 1e-10


def test_generating_operator_fills_nullspace():
    a = build_model_operator({"family": "DiracPair", "m": 0.0}, cutoff=8)
    p = aps_projection(a, "ge")
    c = generating_operator(p)
    assert np.abs(spectral_projection(c).blocks - p.blocks).max() <= 1e-10


def test_generating_operator_requires_orthogonal():
    with pytest.raises(ValueError):
        generating_operator(_point_projection([[1, 1], [0, 0]]))


# spectral projections


def test_spectral_projection_point_examples():
    p = spectral_projection(_point_op(np.diag([2.0, -3.0])), "empty")
    np.testing.assert_allclose(p.blocks[0], np.diag([1.0, 0.0]))
    p = spectral_projection(_point_op(np.diag([0.0, 1.0])), {0: [[1.0], [0.0]]})
    np.testing.assert_allclose(p.blocks[0], np.eye(2), atol=1e-15)
    assert p.null_dims == (1, 0)


def test_spectral_projection_scalar_zero_mode():
    c = build_model_operator({"family": "ScalarShift", "a": 0.0}, cutoff=8)
    full = spectral_projection(c, "full")
    empty = spectral_projection(c, "empty")
    diff = full.blocks - empty.blocks
    assert diff[c.basis.index(0), 0, 0] == 1
    diff[c.basis.index(0)] = 0
    assert np.abs(diff).max() == 0
    assert full.null_dims == (1, 0) and empty.null_dims == (0, 1)


def test_selector_outside_nullspace_rejected():
    with pytest.raises(ValueError, match="nullspace"):
        spectral_projection(_point_op(np.diag([0.0, 1.0])), {0: [[0.0], [1.0]]})


# perturbations


def test_perturb_zero_eps_returns_base():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=8)
    p = aps_projection(a, "ge")
    assert perturb_projection(p, -2, 0.0, 1) is p


def test_perturb_decay_bound_scalar():
    a = build_model_operator({"family": "ScalarShift", "a": 0.25}, cutoff=64)
    base = aps_projection(a, "ge")
    p = perturb_projection(base, -2, 0.1, 4)
    k = a.basis.modes
    diff = np.linalg.norm(p.blocks - base.blocks, ord=2, axis=(1, 2))
    assert np.all(diff <= 0.1 * (1 + np.abs(k)) ** -2.0 + 1e-15)


def test_perturb_decay_bound_dirac():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=64)
    base = aps_projection(a, "ge")
    for d in (-1, -2, -3):
        p = perturb_projection(base, d, 0.2, 9)
        diff = np.linalg.norm(p.blocks - base.blocks, ord=2, axis=(1, 2))
        assert np.all(diff <= 0.2 * (1 + np.abs(a.basis.modes)) ** float(d) + 1e-14)
        assert diff.max() > 0


def test_perturb_preserves_projection_structure():
    a = build_model_operator({"family": "DiracPair", "m": 0.5}, cutoff=32)
    sigma = dirac_sigma(a.basis)
    base = aps_projection(a, "ge", sigma=sigma)
    assert base.sigma_compatible
    p = perturb_projection(base, -2, 0.3, 11, preserve_sigma=sigma)
    b = p.blocks
    assert np.abs(b @ b - b).max() <= 1e-12
    assert np.abs(b - b.conj().transpose(0, 2, 1)).max() <= 1e-12
    eye = np.eye(2)
    s = sigma.blocks
    assert np.abs(b + s @ (eye - b) @ s).max() <= 1e-12
    assert check_sigma_compat(p, sigma)


def test_perturb_rejects_positive_order():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=8)
    with pytest.raises(ValueError):
        perturb_projection(aps_projection(a, "ge"), 0, 0.1, 1)


def test_perturb_rejects_incompatible_sigma():
    a = build_model_operator({"family": "DiracPair", "m": 0.0}, cutoff=8)
    with pytest.raises(ValueError, match="sigma"):
        perturb_projection(aps_projection(a, "ge"), -2, 0.1, 1, preserve_sigma=dirac_sigma(a.basis))


# sigma compatibility


def test_sigma_compat_examples():
    a = build_model_operator({"family": "DiracPair", "m": 0.0}, cutoff=8)
    sigma = dirac_sigma(a.basis)
    assert check_sigma_compat(aps_projection(a, "plus", sigma=sigma), sigma)
    assert not check_sigma_compat(aps_projection(a, "ge"), sigma)
    ident = constant_projection(a.basis, np.eye(2))
    assert not check_sigma_compat(ident, sigma)


# well-posedness


def test_wellposed_aps_margin_one():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=16)
    rep = check_wellposed(aps_projection(a, "ge"), a)
    assert rep.passed
    assert rep.margin == pytest.approx(1.0, abs=1e-12)


def test_wellposed_identity_fails():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=16)
    rep = check_wellposed(constant_projection(a.basis, np.eye(2)), a)
    assert not rep.passed
    assert rep.ranks == (2, 2)


def test_wellposed_rotation_margin_is_cosine():
    # rotating ran pi0 by angle t away from N+ leaves the overlap cos t
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=16)
    rep = check_wellposed(rotate_projection(aps_projection(a, "ge"), 0.3), a)
    assert rep.passed
    assert rep.margin == pytest.approx(math.cos(0.3), abs=1e-12)


def test_wellposed_odd_fiber_refused():
    a = build_model_operator({"family": "ScalarShift", "a": 0.25}, cutoff=8)
    with pytest.raises(ValueError, match="even"):
        check_wellposed(aps_projection(a, "ge"), a)


# parameter ellipticity


def _robin(beta, a=0.5, cutoff=32):
    op = build_model_operator({"family": "ScalarShift", "a": a}, cutoff=cutoff)
    pprime = square(op)
    pi1 = constant_projection(op.basis, [[0.0]])
    return pprime, pi1, tangential_derivative(op.basis, beta)


def test_ellipticity_real_b_below_a1_passes():
    rep = check_parameter_ellipticity(*_robin(0.5), math.pi / 2 - 0.01)
    assert rep.passed
    assert "real-below-a1" in rep.sufficient_conditions


def test_ellipticity_real_b_above_a1_fails_at_sqrt3():
    rep = check_parameter_ellipticity(*_robin(2.0), math.pi / 2 - 0.01)
    assert not rep.passed
    xi, mu = rep.worst_point
    assert xi == 1.0
    assert abs(mu - math.sqrt(3)) <= 1e-6


def test_ellipticity_imaginary_b_passes_at_quarter_pi():
    rep = check_parameter_ellipticity(*_robin(10j), math.pi / 4)
    assert rep.passed
    assert "purely-imaginary" in rep.sufficient_conditions


def test_ellipticity_monotone_in_theta():
    grid = EllipticityGrid()
    data = _robin(0.9)
    thetas = np.linspace(0.1, math.pi / 2 - 1e-3, 12)
    passed = [check_parameter_ellipticity(*data, th, grid).passed for th in thetas]
    # once it fails it keeps failing as theta grows
    first_fail = passed.index(False) if False in passed else len(passed)
    assert all(passed[:first_fail]) and not any(passed[first_fail:])
    mins = [check_parameter_ellipticity(*data, th, grid).min_singular_value for th in thetas]
    assert all(x >= y - 1e-12 for x, y in zip(mins, mins[1:]))


def test_wellposed_dirac_squared_passes_at_right_angle():
    # Dirac-squared scenario with B = A: well-posed projections are elliptic on the full half plane
    for m in (0.5, 1.0):
        a = build_model_operator({"family": "DiracPair", "m": m}, cutoff=32)
        for p in (aps_projection(a, "ge"), rotate_projection(aps_projection(a, "ge"), 0.4)):
            assert check_wellposed(p, a).passed
            rep = check_parameter_ellipticity(square(a), p, a, math.pi / 2)
            assert rep.passed, rep


def test_principal_commutation():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=16)
    assert check_principal_commute(aps_projection(a, "ge"), square(a)) <= 1e-12
    pprime = square(a) + morphism(a.basis, np.diag([0.0, 0.0]))
    assert check_principal_commute(rotate_projection(aps_projection(a, "ge"), 0.3), pprime) <= 1e-12


def test_scipy_expm_oracle_for_perturbation_unitary():
    a = build_model_operator({"family": "DiracPair", "m": 1.0}, cutoff=4)
    base = aps_projection(a, "ge")
    p = perturb_projection(base, -1, 0.4, 2)
    # U_k = exp(i eps S_k) with S_k constant on each side; recover S_0 from one block pair
    for k in (0, 3):
        bk, pk = base.block(k), p.block(k)
        # both are rank-one orthogonal projections related by a unitary
        assert np.linalg.matrix_rank(pk, tol=1e-10) == np.linalg.matrix_rank(bk, tol=1e-10)
        u = scipy.linalg.polar(pk @ bk + (np.eye(2) - pk) @ (np.eye(2) - bk))[0]
        np.testing.assert_allclose(u @ bk @ u.conj().T, pk, atol=1e-12)
