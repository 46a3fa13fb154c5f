"""Operator-level boundary reduction over all modes.

Dirichlet-to-Neumann blocks (exact or by a Riccati sweep when a potential is
present), the reduced operators S, S′, S̃, the invertibility scan for S(−μ²),
the assembled resolvent acting on gridded sections, and an independent
finite-difference solver used as its oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from .halfline import (
    FirstOrderWeight,
    ModeData,
    MorphismWeight,
    SingularBoundaryError,
    frak_a,
    spectrum_distance,
)
from .projections import (
    EllipticityGrid,
    EllipticityReport,
    Projection,
    check_parameter_ellipticity,
    check_principal_commute,
    check_sigma_compat,
)
from .tangential import ModeBasis, TangentialOperator

ASSEMBLY_POINTS = 2048
ASSEMBLY_DECAY = 12.0
RESIDUAL_REFUSAL = 1e-2
SCAN_CEILING = 1e3


class AssumptionError(ValueError):
    """A scenario violates a named structural assumption.

    ``assumption`` is one of "parameter-ellipticity", "principal-commutation",
    "well-posedness", "sigma-symmetry".
    """

    def __init__(self, assumption: str, message: str):
        super().__init__(f"{assumption}: {message}")
        self.assumption = assumption


class RefusalError(ArithmeticError):
    """A computation refused to return an unreliable result."""


@dataclass(frozen=True, eq=False)
class Scenario:
    """Full problem data on one model geometry.

    Attributes
    ----------
    pprime : TangentialOperator
        P′ (order 2, selfadjoint, nonnegative).
    pi1 : Projection
        Dirichlet projection Π₁.
    b : TangentialOperator
        Boundary operator B (order ≤ 1).
    a : TangentialOperator, optional
        First-order tangential operator with P′ = A² for Dirac-type data.
    sigma : TangentialOperator, optional
    potential : callable, optional
        Scalar v(x_n) supported in [0, potential_support].
    weight : MorphismWeight or FirstOrderWeight, optional
    theta : float
        Sector half-angle for the ellipticity gate.
    """

    pprime: TangentialOperator
    pi1: Projection
    b: TangentialOperator
    a: TangentialOperator | None = None
    sigma: TangentialOperator | None = None
    potential: Callable | None = None
    potential_support: float = 1.0
    weight: MorphismWeight | FirstOrderWeight | None = None
    theta: float = np.pi / 2 - 0.01
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for op in (self.pi1, self.b) + ((self.a,) if self.a is not None else ()):
            if op.basis != self.pprime.basis:
                raise ValueError("all scenario operators must share one mode basis")
        if not (self.pprime.selfadjoint and self.pprime.nonnegative):
            raise ValueError("P' must be selfadjoint and nonnegative")
        if self.b.order > 1:
            raise ValueError("B must have order at most 1")

    @property
    def basis(self) -> ModeBasis:
        return self.pprime.basis

    @property
    def modes(self) -> np.ndarray:
        return self.basis.modes

    def mode_data(self, k: int) -> ModeData:
        i = self.basis.index(k)
        return ModeData(
            self.pprime.blocks[i],
            self.pi1.blocks[i],
            self.b.blocks[i],
            potential=self.potential,
            support=self.potential_support,
        )

    def with_projection(self, pi1: Projection, **kw) -> "Scenario":
        return self.replace(pi1=pi1, **kw)

    def replace(self, **changes) -> "Scenario":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return Scenario(**kw)


def validate_scenario(
    sc: Scenario, grid: EllipticityGrid | None = None, delta: float = 1e-6
) -> EllipticityReport:
    """Run the parameter-ellipticity and principal-commutation gates."""
    try:
        check_principal_commute(sc.pi1, sc.pprime)
    except ValueError as exc:
        raise AssumptionError("principal-commutation", str(exc)) from exc
    rep = check_parameter_ellipticity(sc.pprime, sc.pi1, sc.b, sc.theta, grid, delta)
    if not rep.passed:
        raise AssumptionError(
            "parameter-ellipticity",
            f"sigma_min = {rep.min_singular_value:.3e} at xi = {rep.worst_point[0]}, "
            f"mu = {rep.worst_point[1]:.12g}",
        )
    if sc.pi1.sigma_compatible and sc.sigma is not None and not check_sigma_compat(sc.pi1, sc.sigma):
        raise AssumptionError("sigma-symmetry", "projection flagged sigma-compatible fails the check")
    return rep


# ---------------------------------------------------------------------------
# Dirichlet-to-Neumann


def dtn_mode(md: ModeData, lam: complex, method: str | None = None, rtol: float = 1e-11) -> np.ndarray:
    """A_DN(λ) on one mode.

    Without a potential this is −κ exactly.  With a potential v the matrix
    Riccati equation R′ = (pk + v − λ) − R² is integrated from
    X = supp v + 10/Re κ_min, where R = −κ, down to x = 0.
    """
    lam = complex(lam)
    kap = frak_a(md.pk, lam)
    if method is None:
        method = "riccati" if md.potential is not None else "exact"
    if method == "exact":
        if md.potential is not None:
            raise ValueError("exact DtN requested for a perturbed mode")
        return -kap
    if method != "riccati":
        raise ValueError(f"unknown method {method!r}")
    n = md.n
    v = md.potential if md.potential is not None else (lambda x: 0.0)
    kmin = np.linalg.eigvals(kap).real.min()
    x_max = (md.support if md.potential is not None else 0.0) + 10.0 / kmin
    shifted = md.pk - lam * np.eye(n)

    def rhs(x, y):
        r = y.reshape(n, n)
        return ((shifted + v(x) * np.eye(n)) - r @ r).ravel()

    sol = solve_ivp(
        rhs, (x_max, 0.0), (-kap).ravel(), method="RK45", rtol=rtol, atol=rtol * 1e-2
    )
    if sol.status != 0:
        raise ArithmeticError(f"Riccati integration failed: {sol.message}")
    r0 = sol.y[:, -1].reshape(n, n)
    if not np.all(np.isfinite(r0)) or np.abs(r0).max() > 1e8 * max(1.0, np.abs(kap).max()):
        raise ArithmeticError("Riccati solution blew up; lambda is near an eigenvalue")
    return r0


def dtn(sc: Scenario, k: int, lam: complex, method: str | None = None) -> np.ndarray:
    return dtn_mode(sc.mode_data(k), lam, method)


def dtn_family(sc: Scenario, modes, lams, method: str | None = None) -> np.ndarray:
    """A_DN over a (mode, λ) grid, shape (len(modes), len(lams), N, N)."""
    return np.array([[dtn(sc, int(k), lam, method) for lam in lams] for k in modes])


# ---------------------------------------------------------------------------
# reduced operators


def _s_blocks(a_dn, pi1, b):
    eye = np.eye(a_dn.shape[-1])
    pi2 = eye - pi1
    comm = a_dn @ pi1 - pi1 @ a_dn
    s = a_dn + comm + pi2 @ b @ pi2
    sp = a_dn - comm
    return s, sp


def s_family(sc: Scenario, lam: complex, which: str = "S") -> TangentialOperator:
    """S, S′ or S̃(I + S̃₁)⁻¹ at λ over all modes.

    S = A_DN + [A_DN, Π₁] + Π₂BΠ₂ and S′ = A_DN − [A_DN, Π₁].
    S̃ = A_DN⁻¹Π₁ + S⁻¹Π₂ satisfies S S̃ = I + S̃₁, so the returned
    S̃(I + S̃₁)⁻¹ is a right inverse of S.
    """
    a_dn = np.stack([dtn(sc, int(k), lam) for k in sc.modes])
    pi1 = sc.pi1.blocks
    s, sp = _s_blocks(a_dn, pi1, sc.b.blocks)
    if which == "S":
        blocks = s
    elif which == "Sprime":
        blocks = sp
    elif which == "Stilde":
        st, st1 = stilde_blocks(a_dn, pi1, sc.b.blocks)
        eye = np.eye(sc.basis.fiber_dim)
        blocks = st @ np.linalg.inv(eye + st1)
    else:
        raise ValueError(f"unknown member {which!r}")
    for name, m in (("S", s), ("S'", sp)):
        sv = np.linalg.svd(m, compute_uv=False)
        if sv.min() <= 1e-13 * max(1.0, sv.max()):
            raise SingularBoundaryError(f"{name}(lambda) is singular at lambda = {lam}")
    return TangentialOperator(sc.basis, blocks, 1)


def stilde_blocks(a_dn, pi1, b):
    """S̃ = A⁻¹Π₁ + S⁻¹Π₂ and S̃₁ = [A, Π₁]A⁻¹Π₁ + Π₂BΠ₂A⁻¹[Π₁, A]A⁻¹."""
    eye = np.eye(a_dn.shape[-1])
    pi2 = eye - pi1
    s, _ = _s_blocks(a_dn, pi1, b)
    ainv = np.linalg.inv(a_dn)
    st = ainv @ pi1 + np.linalg.solve(s, np.broadcast_to(pi2, s.shape))
    comm = a_dn @ pi1 - pi1 @ a_dn
    st1 = comm @ ainv @ pi1 + pi2 @ b @ pi2 @ ainv @ (-comm) @ ainv
    return st, st1


@dataclass(frozen=True)
class ReductionResiduals:
    """Residuals of the reduced problem on one instance."""

    dirichlet: float  # ‖Π₁φ‖ for φ = S⁻¹ψ, ψ ∈ ran Π₂
    neumann: float  # ‖Π₂(A_DN + B)φ − ψ‖
    right_inverse: float  # ‖S S̃ (I + S̃₁)⁻¹ − I‖


def reduction_residuals(md: ModeData, lam: complex, psi: np.ndarray | None = None) -> ReductionResiduals:
    a_dn = dtn_mode(md, lam)
    s, sp = _s_blocks(a_dn, md.pi1, md.b)
    for m in (s, sp):
        if np.linalg.svd(m, compute_uv=False).min() < 1e-12:
            raise SingularBoundaryError(f"reduced operator singular at lambda = {lam}")
    n = md.n
    if psi is None:
        psi = np.eye(n)
    psi = md.pi2 @ np.asarray(psi, dtype=complex).reshape(n, -1)
    phi = np.linalg.solve(s, psi)
    scale = max(1.0, np.abs(psi).max())
    d = np.abs(md.pi1 @ phi).max() / scale
    nres = np.abs(md.pi2 @ (a_dn + md.b) @ phi - psi).max() / scale
    st, st1 = stilde_blocks(a_dn, md.pi1, md.b)
    ri = s @ st @ np.linalg.inv(np.eye(n) + st1) - np.eye(n)
    return ReductionResiduals(float(d), float(nres), float(np.abs(ri).max()))


# ---------------------------------------------------------------------------
# invertibility scan


@dataclass(frozen=True)
class ScanResult:
    r: float
    theta_prime: float
    min_singular_value: float
    monotone: bool
    monotone_from: float  # radius beyond which the profile is nondecreasing
    radii: np.ndarray
    profile: np.ndarray  # min over modes and rays of σ_min(S(−μ²)) per radius


def invertibility_scan(
    sc: Scenario,
    theta_prime: float,
    radii: np.ndarray | None = None,
    delta: float = 1e-6,
    modes=None,
) -> ScanResult:
    """Smallest r with σ_min(S(−μ²)) ≥ δ for arg μ = ±θ′ and |μ| ≥ r.

    ``monotone`` reports whether the profile is nondecreasing on the whole
    tail |μ| ≥ r.  For θ′ > π/4 it need not be, since |(k+a)² + μ²| dips
    near |μ| = |k+a| before growing, so ``monotone_from`` gives the radius
    past which it is.

    The principal-level ellipticity check at θ′ runs first; a failure there
    means no such r exists, whatever the finite mode range shows.
    """
    if not 0 <= theta_prime < sc.theta:
        raise ValueError("need 0 <= theta' < theta")
    rep = check_parameter_ellipticity(sc.pprime, sc.pi1, sc.b, theta_prime, delta=delta)
    if not rep.passed:
        raise AssumptionError(
            "parameter-ellipticity",
            f"no r(theta') below the ceiling: principal symbol singular at mu = {rep.worst_point[1]:.12g}",
        )
    if radii is None:
        radii = np.concatenate([[0.0], np.logspace(-3, np.log10(SCAN_CEILING), 40)])
    modes = sc.modes if modes is None else np.asarray(modes)
    rays = sorted({theta_prime, -theta_prime})
    profile = np.full(len(radii), np.inf)
    for j, r in enumerate(radii):
        for phi in rays:
            mu = r * np.exp(1j * phi)
            lam = -(mu**2)
            for k in modes:
                md = sc.mode_data(int(k))
                if spectrum_distance(md.pk, lam) < 1e-8 * (1 + abs(lam)):
                    continue
                a_dn = dtn_mode(md, lam)
                s, _ = _s_blocks(a_dn, md.pi1, md.b)
                profile[j] = min(profile[j], np.linalg.svd(s, compute_uv=False).min())
    ok = profile >= delta
    if not ok[-1]:
        raise AssumptionError("parameter-ellipticity", "S(-mu^2) singular up to the scan ceiling")
    bad = np.nonzero(~ok)[0]
    start = 0 if bad.size == 0 else bad[-1] + 1
    tail = profile[start:]
    drops = np.nonzero(np.diff(profile) < -1e-12 * np.maximum(1.0, np.abs(profile[1:])))[0]
    mono_start = 0 if drops.size == 0 else drops[-1] + 1
    return ScanResult(
        r=float(radii[start]),
        theta_prime=float(theta_prime),
        min_singular_value=float(tail.min()),
        monotone=bool(mono_start <= start),
        monotone_from=float(radii[max(start, mono_start)]),
        radii=np.asarray(radii),
        profile=profile,
    )


# ---------------------------------------------------------------------------
# resolvent assembly


def _fit_weights(kap: np.ndarray, h: float):
    """Exact weights of ∫₀^h e^{−κ(h−s)} f(s) ds for linear f, per eigenvalue."""
    z = kap * h
    em = -np.expm1(-z)  # 1 − e^{−z}
    inner = em - z * np.exp(-z)  # 1 − e^{−z}(1+z)
    w_end = (em - inner / z) / kap
    w_start = em / kap - w_end
    return w_start, w_end


@dataclass(frozen=True, eq=False)
class AssembledResolvent:
    """R_T(λ) on one λ, acting on sections sampled on ``grid`` per mode."""

    scenario: Scenario
    lam: complex
    grid: np.ndarray
    modes: np.ndarray
    kappa_eig: np.ndarray  # (M, N)
    basis: np.ndarray  # (M, N, N) eigenvectors of pk
    coeff: np.ndarray  # (M, N, N) C in the eigenbasis

    def apply(self, f: np.ndarray, check: bool = True) -> np.ndarray:
        """u = Q₊f + K_D[(S₀ − I)γ₀ + S₁γ₁]Q₊f for f of shape (M, X, N)."""
        f = np.asarray(f, dtype=complex)
        x = self.grid
        h = x[1] - x[0]
        m, nx, n = f.shape
        fe = np.einsum("mji,mxj->mxi", self.basis.conj(), f)
        u = np.empty_like(fe)
        for i in range(m):
            kap = self.kappa_eig[i]
            w0, w1 = _fit_weights(kap, h)
            decay = np.exp(-kap * h)
            left = np.zeros((nx, n), dtype=complex)
            right = np.zeros((nx, n), dtype=complex)
            for j in range(1, nx):
                left[j] = decay * left[j - 1] + w0 * fe[i, j - 1] + w1 * fe[i, j]
            for j in range(nx - 2, -1, -1):
                right[j] = decay * right[j + 1] + w1 * fe[i, j] + w0 * fe[i, j + 1]
            g = right[0]
            q = 0.5 * (left + right) / kap
            u[i] = q + np.exp(-np.outer(x, kap)) * (self.coeff[i] @ g)[None, :]
        out = np.einsum("mij,mxj->mxi", self.basis, u)
        if check:
            res = self.residual(out, f)
            if res > RESIDUAL_REFUSAL:
                raise RefusalError(f"interior residual {res:.2e} above {RESIDUAL_REFUSAL}: grid too coarse")
        return out

    def residual(self, u: np.ndarray, f: np.ndarray) -> float:
        """Relative interior residual ‖(−∂² + P′ − λ)u − f‖/‖f‖ by central differences."""
        h = self.grid[1] - self.grid[0]
        lap = (u[:, :-2] - 2 * u[:, 1:-1] + u[:, 2:]) / h**2
        pk = np.stack([self.scenario.pprime.block(int(k)) for k in self.modes])
        op = -lap + np.einsum("mij,mxj->mxi", pk, u[:, 1:-1]) - self.lam * u[:, 1:-1]
        r = op - f[:, 1:-1]
        return float(np.linalg.norm(r) / max(np.linalg.norm(f[:, 1:-1]), 1e-300))


def assembly_grid(sc: Scenario, lam: complex, modes, points: int = ASSEMBLY_POINTS) -> np.ndarray:
    kmin = min(np.sqrt(np.linalg.eigvalsh(sc.pprime.block(int(k))) - complex(lam)).real.min() for k in modes)
    return np.linspace(0.0, ASSEMBLY_DECAY / kmin, points + 1)


def assemble_resolvent(sc: Scenario, lam: complex, modes=None, points: int = ASSEMBLY_POINTS) -> AssembledResolvent:
    """Build R_T(λ) from Q₊, K_D, γ₀Q₊, γ₁Q₊, S₀ = S⁻¹Π₂A_DN and S₁ = −S⁻¹Π₂.

    T_𝔄-type integrals use recurrences that are exact for piecewise-linear
    data on the grid x ∈ [0, 12/Re κ_min].
    """
    if sc.potential is not None:
        raise ValueError("resolvent assembly is implemented for the exact model")
    lam = complex(lam)
    modes = sc.modes if modes is None else np.asarray(modes)
    grid = assembly_grid(sc, lam, modes, points)
    kap_e, bases, coeffs = [], [], []
    for k in modes:
        md = sc.mode_data(int(k))
        d, v = np.linalg.eigh(md.pk)
        kap = frak_a(md.pk, lam)
        a_dn = -kap
        s, sp = _s_blocks(a_dn, md.pi1, md.b)
        if np.linalg.svd(s, compute_uv=False).min() < 1e-12:
            raise SingularBoundaryError(f"S(lambda) singular on mode {k}")
        s0 = np.linalg.solve(s, md.pi2 @ a_dn)
        s1 = -np.linalg.solve(s, md.pi2)
        kinv = np.linalg.inv(kap)
        # γ₀Q₊f = ½κ⁻¹g and γ₁Q₊f = ½g with g = ∫e^{−yκ}f
        c = -0.5 * kinv + 0.5 * s0 @ kinv + 0.5 * s1
        kap_e.append(np.sqrt(d.astype(complex) - lam))
        bases.append(v)
        coeffs.append(v.conj().T @ c @ v)
    return AssembledResolvent(sc, lam, grid, modes, np.array(kap_e), np.array(bases), np.array(coeffs))


def fd_oracle_solve(
    sc: Scenario,
    lam: complex,
    f: np.ndarray,
    h: float,
    grid: np.ndarray,
    modes=None,
    length: float | None = None,
) -> np.ndarray:
    """Second-order finite differences on [0, L] with far-end Dirichlet.

    ``f`` is sampled on ``grid`` (shape (M, X, N)); it is interpolated to the
    difference grid, solved per mode with one sparse solve, and the result is
    interpolated back to ``grid`` by cubic splines.
    """
    lam = complex(lam)
    modes = sc.modes if modes is None else np.asarray(modes)
    f = np.asarray(f, dtype=complex)
    out = np.empty_like(f)
    for i, k in enumerate(modes):
        md = sc.mode_data(int(k))
        n = md.n
        kmin = np.sqrt(np.linalg.eigvalsh(md.pk) - lam).real.min()
        L = length if length is not None else max(grid[-1], 24.0 / kmin)
        steps = int(round(L / h))
        xs = h * np.arange(steps + 1)
        fi = np.zeros((steps + 1, n), dtype=complex)
        inside = xs <= grid[-1] + 1e-12
        for c in range(n):
            fi[inside, c] = CubicSpline(grid, f[i, :, c])(xs[inside])
        u = _fd_mode(md, lam, fi, h)
        for c in range(n):
            out[i, :, c] = CubicSpline(xs, u[:, c])(grid)
    return out


def _fd_mode(md: ModeData, lam: complex, f: np.ndarray, h: float) -> np.ndarray:
    n = md.n
    npts = f.shape[0]
    eye = sparse.identity(n, format="csr")
    shifted = sparse.csr_matrix(md.pk - lam * np.eye(n))
    unknowns = npts - 1  # u at the far end is zero
    lap = sparse.diags([-np.ones(unknowns - 1), 2 * np.ones(unknowns), -np.ones(unknowns - 1)], [-1, 0, 1])
    big = sparse.kron(lap / h**2, eye) + sparse.kron(sparse.identity(unknowns), shifted)
    big = big.tolil()
    # boundary row: π₁u₀ + π₂((−3u₀ + 4u₁ − u₂)/(2h) + b u₀) = 0
    p1, p2, b = md.pi1, md.pi2, md.b
    row0 = p1 + p2 @ (-1.5 / h * np.eye(n) + b)
    row1 = p2 * (2.0 / h)
    row2 = p2 * (-0.5 / h)
    for bi in range(3):
        big[0:n, bi * n : (bi + 1) * n] = [row0, row1, row2][bi]
    rhs = f[:unknowns].ravel().copy()
    rhs[:n] = 0.0
    mat = big.tocsc()
    try:
        sol = spsolve(mat, rhs)
    except RuntimeError as exc:
        raise ArithmeticError(f"singular finite-difference system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise ArithmeticError("singular finite-difference system")
    u = np.zeros((npts, n), dtype=complex)
    u[:unknowns] = sol.reshape(unknowns, n)
    return u


def gaussian_section(grid: np.ndarray, modes, n: int, center: float, width: float, seed: int = 0) -> np.ndarray:
    """Smooth test section with random fiber directions per mode, unit L₂ norm."""
    rng = np.random.default_rng(seed)
    prof = np.exp(-(((grid - center) / width) ** 2))
    dirs = rng.normal(size=(len(modes), n)) + 1j * rng.normal(size=(len(modes), n))
    f = dirs[:, None, :] * prof[None, :, None]
    return f / section_norm(f, grid)


def section_norm(f: np.ndarray, grid: np.ndarray) -> float:
    return float(np.sqrt(trapezoid((np.abs(f) ** 2).sum(axis=(0, 2)), grid)))


__all__ = [
    "Scenario",
    "AssumptionError",
    "RefusalError",
    "ReductionResiduals",
    "ScanResult",
    "AssembledResolvent",
    "validate_scenario",
    "dtn",
    "dtn_mode",
    "dtn_family",
    "s_family",
    "stilde_blocks",
    "reduction_residuals",
    "invertibility_scan",
    "assemble_resolvent",
    "assembly_grid",
    "fd_oracle_solve",
    "gaussian_section",
    "section_norm",
]
