import mpmath
import numpy as np
import pytest
from scipy.integrate import quad, quad_vec, solve_bvp

from spectral_bvp_lab.halfline import (
    MAX_DERIVATIVE,
    FirstOrderWeight,
    ModeData,
    SingularBoundaryError,
    elementary_kernels,
    frak_a,
    heat_sg_modes,
    mode_heat_sg,
    mode_resolvent,
    reduced_operator,
    trn_resolvent_sg,
    trn_series,
)


def scalar(a2, pi1, b=0.0):
    return ModeData([[a2]], [[pi1]], [[b]])


# ---------------------------------------------------------------------------
# frak_a and elementary kernels


def test_frak_a_examples():
    np.testing.assert_allclose(frak_a([[9]], -16), [[5]], atol=1e-14)
    np.testing.assert_allclose(frak_a(np.diag([0.0, 4.0]), -1), np.diag([1, np.sqrt(5)]), atol=1e-14)
    np.testing.assert_allclose(frak_a([[5, 4], [4, 5]], 0), [[2, 1], [1, 2]], atol=1e-14)


def test_frak_a_squares_back():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        pk = g @ g.conj().T
        mu = rng.uniform(0.1, 5) * np.exp(1j * rng.uniform(-1.4, 1.4))
        k = frak_a(pk, -(mu**2))
        np.testing.assert_allclose(k @ k, pk + mu**2 * np.eye(3), atol=1e-12 * max(1, abs(mu) ** 2))
        assert np.linalg.eigvals(k).real.min() > 0


def test_frak_a_rejects_lambda_on_the_cut():
    with pytest.raises(ValueError):
        frak_a([[1.0]], 2.0)
    with pytest.raises(ValueError):
        frak_a([[1.0]], 1.0 + 1e-12j)


def test_trn_g_examples():
    assert elementary_kernels([[5]]).trn_G[0, 0] == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(elementary_kernels(np.diag([1.0, 2.0])).trn_G, np.diag([0.5, 0.25]), atol=1e-15)
    # Sylvester solution against the closed form for a normal kappa
    k = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(elementary_kernels(k).trn_G, np.linalg.inv([[4, 2], [2, 4]]), atol=1e-12)


def test_trn_g_is_integral_of_kernel_diagonal():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(2, 2))
    k = g @ g.T + np.eye(2) + 0.3 * np.array([[0, 1], [-1, 0]])  # non-normal
    ek = elementary_kernels(k)
    diag, _ = quad_vec(lambda x: ek.G(x, x), 0, np.inf, epsabs=1e-13)
    np.testing.assert_allclose(diag, ek.trn_G, atol=1e-11)
    # T on exponential data agrees with the exact Sylvester form
    m = rng.normal(size=(2, 2))
    inner, _ = quad_vec(lambda x: ek.G(x, 0) @ m @ ek.G(0, x), 0, np.inf, epsabs=1e-13)
    np.testing.assert_allclose(ek.T_exp(m), inner, atol=1e-11)


def test_elementary_kernels_rejects_left_half_plane():
    with pytest.raises(ValueError):
        elementary_kernels([[-1.0]])


# ---------------------------------------------------------------------------
# mode resolvent


def test_dirichlet_coefficient():
    kap = 3.0
    mk = mode_resolvent(scalar(4.0, 1.0), 4.0 - kap**2)
    assert mk.sg_coeff[0, 0] == pytest.approx(-1 / (2 * kap), rel=1e-14)
    assert trn_resolvent_sg(mk) == pytest.approx(-1 / (4 * kap**2), rel=1e-13)


def test_robin_coefficient_matches_ode_solve():
    # boundary row u'(0) + b u(0) = 0; image coefficient (kappa + b)/((kappa - b) 2 kappa)
    a2, b, lam = 1.0, 0.5, -3.0
    kap = np.sqrt(a2 - lam)
    mk = mode_resolvent(scalar(a2, 0.0, b), lam)
    assert mk.sg_coeff[0, 0] == pytest.approx((kap + b) / ((kap - b) * 2 * kap), rel=1e-13)

    # independent oracle: solve the BVP numerically for a bump source
    f = lambda x: np.exp(-((x - 1.5) ** 2) * 4)
    L = 15.0
    xs = np.linspace(0, L, 3001)
    sol = solve_bvp(
        lambda x, y: np.vstack([y[1], (a2 - lam) * y[0] - f(x)]),
        lambda ya, yb: np.array([ya[1] + b * ya[0], yb[0]]),
        xs,
        np.zeros((2, xs.size)),
        tol=1e-10,
        max_nodes=200000,
    )
    assert sol.success
    for x in (0.0, 0.7, 2.0):
        u, _ = quad(lambda y: mk.kernel(x, y)[0, 0].real * f(y), 0, L, points=[x] if x > 0 else None, epsabs=1e-13, limit=200)
        assert u == pytest.approx(sol.sol(x)[0], rel=1e-7)


def test_block_decoupling_kills_b_term():
    pk = np.diag([1.0, 4.0])
    md = ModeData(pk, np.diag([1.0, 0.0]), [[0, 2.0], [3.0, 0]])
    lam = -2.0
    np.testing.assert_allclose(reduced_operator(md, lam), -frak_a(pk, lam), atol=1e-15)
    mk = mode_resolvent(md, lam)
    k = np.sqrt(np.diag(pk) - lam)
    np.testing.assert_allclose(np.diag(mk.sg_coeff), [-1 / (2 * k[0]), 1 / (2 * k[1])], rtol=1e-13)


def _random_instance(rng, n=2):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    pk = g @ g.conj().T + 0.5 * np.eye(n)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    v = q[:, :1]
    pi1 = v @ v.conj().T
    b = 0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return ModeData(pk, pi1, b)


def test_routes_agree_and_rows_hold():
    rng = np.random.default_rng(2)
    for _ in range(50):
        md = _random_instance(rng)
        mu = rng.uniform(2, 6) * np.exp(1j * rng.uniform(-1.2, 1.2))
        lam = -(mu**2)
        red = mode_resolvent(md, lam, "reduced", check=False)
        dire = mode_resolvent(md, lam, "direct", check=False)
        assert np.abs(red.sg_coeff - dire.sg_coeff).max() <= 1e-10 * max(1, np.abs(red.sg_coeff).max())
        assert red.boundary_residual() <= 1e-10
        assert red.interior_residual() <= 1e-12


def test_singular_s_raises():
    # kappa = b = 2 at lambda = 1 - 4
    with pytest.raises(SingularBoundaryError):
        mode_resolvent(scalar(1.0, 0.0, 2.0), -3.0)


def test_potential_is_refused_by_exact_kernels():
    md = ModeData([[1.0]], [[1.0]], [[0.0]], potential=lambda x: 0.0)
    with pytest.raises(ValueError):
        mode_resolvent(md, -1.0)
    with pytest.raises(ValueError):
        mode_heat_sg(md, 1.0)


def test_mode_data_validation():
    with pytest.raises(ValueError):
        ModeData([[1, 1j], [0, 1]], np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ModeData([[-1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ValueError):
        ModeData([[1.0]], [[0.5]], [[0.0]])


# ---------------------------------------------------------------------------
# normal traces and lambda-derivatives


def test_trn_dirichlet_derivatives():
    mk = mode_resolvent(scalar(1.0, 1.0), 0.0)
    assert trn_resolvent_sg(mk, 1) == pytest.approx(-0.25, abs=1e-15)
    assert trn_resolvent_sg(mk, 2) == pytest.approx(-0.25, abs=1e-14)  # -1/(4 kappa^4), kappa = 1
    lam = -3.0
    kap2 = 1.0 - lam
    mk = mode_resolvent(scalar(1.0, 1.0), lam)
    assert trn_resolvent_sg(mk, 2) == pytest.approx(-1 / (4 * kap2**2), rel=1e-13)
    assert trn_resolvent_sg(mk, 3) == pytest.approx(-1 / (4 * kap2**3), rel=1e-13)


def test_trn_order_bounds():
    mk = mode_resolvent(scalar(1.0, 1.0), -1.0)
    with pytest.raises(ValueError):
        trn_resolvent_sg(mk, 0)
    with pytest.raises(ValueError):
        trn_resolvent_sg(mk, MAX_DERIVATIVE + 1)


def test_robin_derivative_matches_finite_difference():
    md = scalar(1.0, 0.0, 0.5)
    lam = -2.0 + 0.5j
    mk = mode_resolvent(md, lam)
    step = 1e-4
    fd = (trn_resolvent_sg(mode_resolvent(md, lam + step)) - trn_resolvent_sg(mode_resolvent(md, lam - step))) / (2 * step)
    assert abs(trn_resolvent_sg(mk, 2) - fd) <= 1e-8


def test_series_derivatives_match_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        md = _random_instance(rng)
        lam = -(rng.uniform(2, 5) * np.exp(1j * rng.uniform(-1, 1))) ** 2
        ser = trn_series(md, lam, 3)
        step = 1e-5 * abs(lam)
        f = lambda z: trn_series(md, z, 1)[0]
        d1 = (f(lam + step) - f(lam - step)) / (2 * step)
        assert abs(ser[1] - d1) <= 1e-6 * abs(ser[1])
        d2 = (f(lam + step) - 2 * f(lam) + f(lam - step)) / step**2 / 2
        assert abs(ser[2] - d2) <= 1e-3 * abs(ser[2])


def test_first_order_weight_dirichlet():
    # tr ∫ ∂_x(e^{-xk}) C e^{-xk} dx = -k C/(2k) = 1/(4k) for C = -1/(2k)
    kap = 2.0
    mk = mode_resolvent(scalar(1.0, 1.0), 1.0 - kap**2)
    w = FirstOrderWeight(np.eye(1), np.zeros((1, 1)))
    assert trn_resolvent_sg(mk, 1, w) == pytest.approx(1 / (4 * kap), rel=1e-13)
    w = FirstOrderWeight(np.eye(1), 3 * np.eye(1))
    assert trn_resolvent_sg(mk, 1, w) == pytest.approx(1 / (4 * kap) - 3 / (4 * kap**2), rel=1e-13)


# ---------------------------------------------------------------------------
# heat traces


def test_heat_dirichlet_and_neumann_at_zero_mass():
    assert mode_heat_sg(scalar(0.0, 1.0), 1.0) == pytest.approx(-0.25, abs=1e-10)
    assert mode_heat_sg(scalar(0.0, 0.0), 1.0) == pytest.approx(0.25, abs=1e-10)


def test_heat_dirichlet_closed_form():
    for a in (0.5, 1.0, 3.0):
        for t in (1e-4, 1e-2, 0.3, 2.0):
            got = mode_heat_sg(scalar(a * a, 1.0), t)
            assert got == pytest.approx(-0.25 * np.exp(-t * a * a), abs=1e-10 * max(1, np.exp(-t * a * a)))


def _robin_laplace_oracle(a2, b, t):
    # h(t) is the inverse Laplace transform of F(-s), F the normal trace of C e^{..}
    def F(s):
        kap = mpmath.sqrt(a2 + s)
        c = (kap + b) / ((kap - b) * 2 * kap)
        return c / (2 * kap)

    mpmath.mp.dps = 30
    return complex(mpmath.invertlaplace(F, t, method="talbot"))


def test_heat_robin_against_talbot_inversion():
    a2, b = 1.0, 0.5
    for t in (1e-3, 1e-2, 0.1, 1.0):
        got = mode_heat_sg(scalar(a2, 0.0, b), t)
        ref = _robin_laplace_oracle(a2, b, t)
        assert abs(got - ref) <= 1e-8 * abs(ref)


def test_heat_batch_matches_single_mode():
    a = np.array([0.2, 1.0, 2.5])
    pk = (a**2)[:, None, None]
    pi1 = np.ones((3, 1, 1))
    vals = heat_sg_modes(pk, pi1, np.zeros((3, 1, 1)), [0.1, 1.0])
    for i in range(3):
        for j, t in enumerate((0.1, 1.0)):
            assert vals[i, j] == pytest.approx(mode_heat_sg(scalar(a[i] ** 2, 1.0), t), abs=1e-14)


def test_heat_mode_decay():
    # |h(t)| <= exp(-t a^2 / 2) for a Robin mode with a > 0
    a2 = 4.0
    for t in (0.5, 1.0, 2.0, 5.0):
        assert abs(mode_heat_sg(scalar(a2, 0.0, 0.3), t)) <= np.exp(-t * a2 / 2)


def test_heat_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        mode_heat_sg(scalar(1.0, 1.0), 0.0)
