"""Per-mode kernels of −∂² + P′_k − λ on the half-line with a projection boundary condition.

Boundary condition: π₁u(0) = 0 and π₂(u′(0) + b u(0)) = 0.  For the exact
model the resolvent is the whole-line kernel ½κ⁻¹e^{−κ|x−y|} plus the singular
Green kernel e^{−xκ} C e^{−yκ} with κ = (P′_k − λ)^{1/2}.

λ-derivatives are carried as truncated Taylor series (arrays with a leading
series axis) through every arithmetic step of the assembly, so that
∂_λ^j/j! of the normal trace is exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm, solve_sylvester
from scipy.special import binom

BRANCH_EPS = 1e-8
MAX_DERIVATIVE = 6
ROUTE_TOL = 1e-10
HEAT_NODES = 48
TAIL_TOL = 1e-12
EXP_CUTOFF = 700.0


class SingularBoundaryError(ArithmeticError):
    """The reduced boundary operator S(λ) is not invertible."""


class ContourError(ArithmeticError):
    """Heat contour quadrature failed its sanity checks."""


@dataclass(frozen=True, eq=False)
class ModeData:
    """Data of one Fourier mode.

    Attributes
    ----------
    pk : ndarray (N, N)
        Hermitian nonnegative block of P′.
    pi1 : ndarray (N, N)
        Dirichlet projection block; π₂ = I − π₁.
    b : ndarray (N, N)
        Block of B.
    potential : callable or None
        Scalar potential v(x) supported in [0, support].
    """

    pk: np.ndarray
    pi1: np.ndarray
    b: np.ndarray
    potential: Callable | None = None
    support: float = 1.0

    def __post_init__(self):
        pk = np.atleast_2d(np.asarray(self.pk, dtype=complex))
        pi1 = np.atleast_2d(np.asarray(self.pi1, dtype=complex))
        b = np.atleast_2d(np.asarray(self.b, dtype=complex))
        n = pk.shape[0]
        if pk.shape != (n, n) or pi1.shape != (n, n) or b.shape != (n, n):
            raise ValueError("pk, pi1 and b must be square of equal size")
        if np.abs(pk - pk.conj().T).max() > 1e-12 * max(1.0, np.abs(pk).max()):
            raise ValueError("pk must be Hermitian")
        if np.linalg.eigvalsh(pk).min() < -1e-10 * max(1.0, np.abs(pk).max()):
            raise ValueError("pk must be nonnegative")
        if np.abs(pi1 @ pi1 - pi1).max() > 1e-10 * max(1.0, np.abs(pi1).max()) ** 2:
            raise ValueError("pi1 must be idempotent")
        object.__setattr__(self, "pk", pk)
        object.__setattr__(self, "pi1", pi1)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.pk.shape[0]

    @property
    def pi2(self) -> np.ndarray:
        return np.eye(self.n) - self.pi1


def spectrum_distance(pk: np.ndarray, lam: complex) -> float:
    """Distance from λ to spec(pk) + [0, ∞)."""
    d = np.linalg.eigvalsh(pk)
    out = np.where(lam.real >= d, abs(lam.imag), np.abs(lam - d))
    return float(out.min())


def frak_a(pk: np.ndarray, lam: complex, eps: float = BRANCH_EPS) -> np.ndarray:
    """κ = (pk − λ)^{1/2} with the principal branch on each eigenvalue."""
    pk = np.atleast_2d(np.asarray(pk, dtype=complex))
    lam = complex(lam)
    if spectrum_distance(pk, lam) < eps * (1 + abs(lam)):
        raise ValueError(f"lambda = {lam} is too close to spec(pk) + [0, inf)")
    d, v = np.linalg.eigh(pk)
    root = np.sqrt(d.astype(complex) - lam)
    return (v * root) @ v.conj().T


@dataclass(frozen=True, eq=False)
class ElementaryKernels:
    """K_𝔄, T_𝔄, G_𝔄 and tr_n G_𝔄 for one κ."""

    kappa: np.ndarray
    trn_G: np.ndarray

    def K(self, x) -> np.ndarray:
        """e^{−xκ} for each x, shape (len(x), N, N)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([expm(-xi * self.kappa) for xi in x])

    def G(self, x: float, y: float) -> np.ndarray:
        return expm(-x * self.kappa) @ expm(-y * self.kappa)

    def T(self, f: np.ndarray, y: np.ndarray) -> np.ndarray:
        """∫₀^∞ e^{−yκ} f(y) dy for samples f of shape (len(y), N), trapezoid rule."""
        ky = self.K(y)
        return trapezoid(np.einsum("yij,yj->yi", ky, f), y, axis=0)

    def T_exp(self, m: np.ndarray) -> np.ndarray:
        """∫₀^∞ e^{−yκ} M e^{−yκ} dy, exact through κX + Xκ = M."""
        return solve_sylvester(self.kappa, self.kappa, m)


def elementary_kernels(kappa: np.ndarray) -> ElementaryKernels:
    kappa = np.atleast_2d(np.asarray(kappa, dtype=complex))
    if np.linalg.eigvals(kappa).real.min() <= 0:
        raise ValueError("kappa must have spectrum in the open right half-plane")
    n = kappa.shape[0]
    x = solve_sylvester(kappa, kappa, np.eye(n, dtype=complex))
    if not np.all(np.isfinite(x)):
        raise ArithmeticError("Sylvester solve for tr_n G failed")
    return ElementaryKernels(kappa, x)


# ---------------------------------------------------------------------------
# truncated power series in λ: arrays with the series index on axis 0


def _smul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    order = min(a.shape[0], b.shape[0])
    out = np.zeros((order,) + np.matmul(a[0], b[0]).shape, dtype=complex)
    for n in range(order):
        for i in range(n + 1):
            out[n] += a[i] @ b[n - i]
    return out


def _sinv(a: np.ndarray) -> np.ndarray:
    x0 = np.linalg.inv(a[0])
    out = np.empty_like(a, dtype=complex)
    out[0] = x0
    for n in range(1, a.shape[0]):
        acc = np.zeros_like(x0)
        for i in range(1, n + 1):
            acc = acc + a[i] @ out[n - i]
        out[n] = -x0 @ acc
    return out


def _sqrt_series(z0: np.ndarray, order: int, power: float) -> np.ndarray:
    """Taylor coefficients in ε of (z0 − ε)^{power}, principal branch."""
    root = np.sqrt(z0) ** (2 * power)
    out = np.empty((order,) + z0.shape, dtype=complex)
    for j in range(order):
        out[j] = root * binom(power, j) * (-1.0 / z0) ** j
    return out


@dataclass(frozen=True, eq=False)
class _Assembly:
    """Series data of one batch in the eigenbasis of pk."""

    kappa: np.ndarray  # (J, ..., N) eigenvalues of κ
    coeff: np.ndarray  # (J, ..., N, N) C in the eigenbasis
    basis: np.ndarray  # (..., N, N) eigenvectors of pk


def _assemble(pk, pi1, b, lam, order: int, route: str = "direct") -> _Assembly:
    """C(λ + ε) as a series in ε for batched (pk, π₁, b) and λ.

    pk, pi1, b have shape (..., N, N) and λ broadcasts against (...).
    """
    d, v = np.linalg.eigh(pk)
    vh = v.conj().swapaxes(-1, -2)
    p1 = vh @ pi1 @ v
    bt = vh @ b @ v
    lam = np.asarray(lam, dtype=complex)
    z0 = d.astype(complex) - lam[..., None]
    n = pk.shape[-1]
    eye = np.eye(n)
    p2 = eye - p1
    kap = _sqrt_series(z0, order, 0.5)
    kinv = _sqrt_series(z0, order, -0.5)
    shape = np.broadcast_shapes(z0.shape[:-1], p1.shape[:-2]) + (n, n)
    p1 = np.broadcast_to(p1, shape)
    p2 = np.broadcast_to(p2, shape)
    bt = np.broadcast_to(bt, shape)
    if route == "direct":
        m = np.zeros((order,) + shape, dtype=complex)
        m[0] = p1 + p2 @ bt
        m -= p2[None] * kap[..., None, :]
        rhs = np.zeros_like(m)
        rhs -= 0.5 * p1[None] * kinv[..., None, :]
        rhs[0] -= 0.5 * p2
        rhs -= 0.5 * (p2 @ bt)[None] * kinv[..., None, :]
        c = _smul(_sinv(m), rhs)
    elif route == "reduced":
        kd = np.zeros((order,) + shape, dtype=complex)
        idx = np.arange(n)
        kd[..., idx, idx] = kap
        kdi = np.zeros_like(kd)
        kdi[..., idx, idx] = kinv
        p1s = np.zeros_like(kd)
        p1s[0] = p1
        p2s = np.zeros_like(kd)
        p2s[0] = p2
        comm = _smul(p1s, kd) - _smul(kd, p1s)
        s = -kd + comm
        s[0] += p2 @ bt @ p2
        c = -0.5 * kdi - _smul(_sinv(s), p2s)
    else:
        raise ValueError(f"unknown route {route!r}")
    return _Assembly(kap, c, v)


def _sylvester_diag(kap: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Series of Y solving κY + Yκ = C with κ diagonal (eigenvalue series given)."""
    denom = kap[..., :, None] + kap[..., None, :]
    return _smul_elementwise_div(c, denom)


def _smul_elementwise_div(c: np.ndarray, d: np.ndarray) -> np.ndarray:
    out = np.empty_like(c)
    for n in range(c.shape[0]):
        acc = c[n].copy()
        for i in range(1, n + 1):
            acc -= d[i] * out[n - i]
        out[n] = acc / d[0]
    return out


@dataclass(frozen=True)
class MorphismWeight:
    """Weight by a bundle morphism φ (N×N, or stacked per mode)."""

    phi: np.ndarray


@dataclass(frozen=True)
class FirstOrderWeight:
    """Weight by D₁ = ψ(∂_{x_n} + B₁); ψ, B₁ are N×N or stacked per mode."""

    psi: np.ndarray
    b1: np.ndarray


def _trace_series(asm: _Assembly, weight) -> np.ndarray:
    """tr(W ∫ e^{−xκ} C e^{−xκ} dx) as a series, shape (J, ...)."""
    y = _sylvester_diag(asm.kappa, asm.coeff)
    if weight is None:
        return np.trace(y, axis1=-2, axis2=-1)
    v = asm.basis
    vh = v.conj().swapaxes(-1, -2)
    if isinstance(weight, MorphismWeight):
        w = vh @ np.asarray(weight.phi, dtype=complex) @ v
        return np.trace(w[None] @ y, axis1=-2, axis2=-1)
    if isinstance(weight, FirstOrderWeight):
        psi = vh @ np.asarray(weight.psi, dtype=complex) @ v
        b1 = vh @ np.asarray(weight.b1, dtype=complex) @ v
        order = asm.kappa.shape[0]
        shape = np.broadcast_shapes(psi.shape, b1.shape, y.shape[1:])
        op = np.zeros((order,) + shape, dtype=complex)
        op[0] = psi @ b1
        op -= np.broadcast_to(psi, shape)[None] * asm.kappa[..., None, :]
        return np.trace(_smul(op, y), axis1=-2, axis2=-1)
    raise TypeError(f"unsupported weight {weight!r}")


# ---------------------------------------------------------------------------
# mode kernels


@dataclass(frozen=True, eq=False)
class ModeKernel:
    """Structured resolvent kernel of one mode.

    Attributes
    ----------
    kappa : ndarray (N, N)
    sg_coeff : ndarray (N, N)
        C in the singular Green kernel e^{−xκ} C e^{−yκ}.
    lam : complex
    data : ModeData
    """

    kappa: np.ndarray
    sg_coeff: np.ndarray
    lam: complex
    data: ModeData

    def whole_line(self, x: float, y: float) -> np.ndarray:
        return 0.5 * np.linalg.solve(self.kappa, expm(-abs(x - y) * self.kappa))

    def singular_green(self, x: float, y: float) -> np.ndarray:
        return expm(-x * self.kappa) @ self.sg_coeff @ expm(-y * self.kappa)

    def kernel(self, x: float, y: float) -> np.ndarray:
        return self.whole_line(x, y) + self.singular_green(x, y)

    def boundary_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """γ₀ and γ₁ of the full kernel as matrices acting on ∫e^{−yκ}f."""
        kinv = np.linalg.inv(self.kappa)
        g0 = 0.5 * kinv + self.sg_coeff
        g1 = 0.5 * np.eye(self.data.n) - self.kappa @ self.sg_coeff
        return g0, g1

    def boundary_residual(self) -> float:
        g0, g1 = self.boundary_rows()
        md = self.data
        r1 = md.pi1 @ g0
        r2 = md.pi2 @ (g1 + md.b @ g0)
        scale = max(1.0, np.abs(g0).max(), np.abs(g1).max())
        return float(max(np.abs(r1).max(), np.abs(r2).max()) / scale)

    def interior_residual(self) -> float:
        """‖(−κ² + pk − λ)e^{−xκ}C‖ relative, i.e. ‖κ² − (pk − λ)‖."""
        md = self.data
        r = self.kappa @ self.kappa - (md.pk - self.lam * np.eye(md.n))
        return float(np.abs(r).max() / max(1.0, np.abs(md.pk).max(), abs(self.lam)))


def _mode_coeff(md: ModeData, lam: complex, route: str) -> np.ndarray:
    asm = _assemble(md.pk, md.pi1, md.b, lam, 1, route)
    v = asm.basis
    return v @ asm.coeff[0] @ v.conj().T


def reduced_operator(md: ModeData, lam: complex) -> np.ndarray:
    """S = −κ + [−κ, π₁] + π₂bπ₂."""
    kap = frak_a(md.pk, lam)
    return -kap + (md.pi1 @ kap - kap @ md.pi1) + md.pi2 @ md.b @ md.pi2


def mode_resolvent(md: ModeData, lam: complex, route: str = "reduced", check: bool = True) -> ModeKernel:
    """Resolvent kernel of one exactly solvable mode.

    ``reduced`` inverts S = −κ + [−κ, π₁] + π₂bπ₂ and sets C = −½κ⁻¹ − S⁻¹π₂.
    ``direct`` solves the boundary system π₁v = −½π₁κ⁻¹,
    π₂(b − κ)v = −½π₂(I + bκ⁻¹) for the full matrix unknown.  With ``check``
    both routes are evaluated and must agree.
    """
    if md.potential is not None:
        raise ValueError("mode_resolvent handles the exact case only; use reduction.dtn for potentials")
    lam = complex(lam)
    kap = frak_a(md.pk, lam)
    s = reduced_operator(md, lam)
    sv = np.linalg.svd(s, compute_uv=False)
    if sv.min() <= 1e-13 * max(1.0, sv.max()):
        raise SingularBoundaryError(
            f"S(lambda) singular at lambda = {lam} (sigma_min = {sv.min():.2e})"
        )
    c = _mode_coeff(md, lam, route)
    if check:
        other = _mode_coeff(md, lam, "direct" if route == "reduced" else "reduced")
        diff = np.abs(c - other).max() / max(1.0, np.abs(c).max())
        if diff > ROUTE_TOL:
            raise ArithmeticError(f"reduced and direct routes disagree by {diff:.2e}")
    return ModeKernel(kap, c, lam, md)


def trn_resolvent_sg(mk: ModeKernel, m: int = 1, weight=None) -> complex:
    """tr ∂_λ^{m−1}/(m−1)! ∫₀^∞ W e^{−xκ}Ce^{−xκ} dx.

    m = 1 gives the normal trace of the singular Green part itself.
    """
    if m < 1:
        raise ValueError("derivative order m must be >= 1")
    if m > MAX_DERIVATIVE:
        raise ValueError(f"m = {m} exceeds the maximum {MAX_DERIVATIVE}")
    md = mk.data
    asm = _assemble(md.pk, md.pi1, md.b, mk.lam, m)
    return complex(_trace_series(asm, weight)[m - 1])


def trn_series(md: ModeData, lam: complex, order: int, weight=None, route: str = "direct") -> np.ndarray:
    """Taylor coefficients of the normal trace around λ, length ``order``."""
    asm = _assemble(md.pk, md.pi1, md.b, complex(lam), order, route)
    return _trace_series(asm, weight)


# ---------------------------------------------------------------------------
# heat via a deformed Bromwich contour


def _parabola(nodes: int):
    h = 3.0 / nodes
    u = h * np.arange(-nodes, nodes + 1)
    w = 0.1309 - 0.1194 * u**2 + 0.25j * u
    dw = -0.2388 * u + 0.25j
    return u, w, dw, h


def spectrum_floor(pk, pi1, b) -> np.ndarray:
    """Lower bound on the real spectrum of each mode problem.

    A bound state needs ⟨κφ, φ⟩ = Re⟨bφ, φ⟩ for some unit φ ∈ ran π₂, hence
    λ ≥ λ_min(pk) − β² with β the top of the Hermitian part of π₂bπ₂.
    """
    pk = np.asarray(pk)
    n = pk.shape[-1]
    p2 = np.eye(n) - np.asarray(pi1)
    m = p2 @ np.asarray(b) @ p2
    herm = 0.5 * (m + m.conj().swapaxes(-1, -2))
    beta = np.maximum(0.0, np.linalg.eigvalsh(herm)[..., -1])
    orth = np.abs(np.asarray(pi1) - np.asarray(pi1).conj().swapaxes(-1, -2)).max(axis=(-1, -2))
    beta = np.where(orth > 1e-12, np.linalg.norm(m, 2, axis=(-2, -1)), beta)
    return np.linalg.eigvalsh(pk)[..., 0] - beta**2


def heat_sg_modes(pk, pi1, b, t_values, weight=None, nodes: int = HEAT_NODES) -> np.ndarray:
    """Heat normal traces for a batch of modes.

    For each t the trace h(t) = (2πi)⁻¹∮ e^{−tλ} F(λ) dλ of the resolvent
    normal trace F is evaluated on λ = λ₀ − w, w on a t-scaled parabola
    (Weideman–Trefethen parameters), so h(t) = e^{−λ₀t} Σ_j e^{w_j t} F(λ₀−w_j) w′_j h / 2πi.

    Parameters
    ----------
    pk, pi1, b : ndarray (M, N, N)
    t_values : array of positive reals
    weight : MorphismWeight or FirstOrderWeight with matrices of shape (N, N) or (M, N, N)

    Returns
    -------
    ndarray (M, T) complex
    """
    pk = np.asarray(pk, dtype=complex)
    pi1 = np.broadcast_to(np.asarray(pi1, dtype=complex), pk.shape)
    b = np.broadcast_to(np.asarray(b, dtype=complex), pk.shape)
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    if np.any(t_values <= 0):
        raise ValueError("t must be positive")
    floor = spectrum_floor(pk, pi1, b)
    _, w, dw, h = _parabola(nodes)
    out = np.zeros((pk.shape[0], t_values.size), dtype=complex)
    for ti, t in enumerate(t_values):
        lam0 = floor - 1.0 / t
        active = lam0 * t < EXP_CUTOFF
        if not active.any():
            continue
        idx = np.nonzero(active)[0]
        wt = w * nodes / t
        dwt = dw * nodes / t
        lam = lam0[idx, None] - wt[None, :]
        wsel = _select_weight(weight, idx)
        asm = _assemble(pk[idx, None], pi1[idx, None], b[idx, None], lam, 1)
        f = _trace_series(asm, wsel)[0]
        terms = np.exp(wt * t)[None, :] * f * dwt[None, :]
        total = terms.sum(axis=1)
        mag = np.abs(terms).sum(axis=1)
        tail = np.maximum(np.abs(terms[:, 0]), np.abs(terms[:, -1])) / np.maximum(mag, 1e-300)
        if tail.max() > TAIL_TOL:
            raise ContourError(f"contour tail ratio {tail.max():.2e} at t = {t}")
        out[idx, ti] = np.exp(-lam0[idx] * t) * total * h / (2j * np.pi)
    return out


def _select_weight(weight, idx):
    if weight is None:
        return None

    def pick(m):
        m = np.asarray(m, dtype=complex)
        return m[idx, None] if m.ndim == 3 else m

    if isinstance(weight, MorphismWeight):
        return MorphismWeight(pick(weight.phi))
    if isinstance(weight, FirstOrderWeight):
        return FirstOrderWeight(pick(weight.psi), pick(weight.b1))
    raise TypeError(f"unsupported weight {weight!r}")


def mode_heat_sg(md: ModeData, t: float, weight=None, nodes: int = HEAT_NODES) -> complex:
    """Normal trace of the singular Green part of e^{−tP_T} on one mode."""
    if md.potential is not None:
        raise ValueError("heat traces are computed for the exact model only")
    if not 0 < t:
        raise ValueError("t must be positive")
    val = heat_sg_modes(md.pk[None], md.pi1[None], md.b[None], [t], weight, nodes)
    return complex(val[0, 0])


__all__ = [
    "ModeData",
    "ModeKernel",
    "ElementaryKernels",
    "MorphismWeight",
    "FirstOrderWeight",
    "SingularBoundaryError",
    "ContourError",
    "frak_a",
    "elementary_kernels",
    "reduced_operator",
    "mode_resolvent",
    "trn_resolvent_sg",
    "trn_series",
    "mode_heat_sg",
    "heat_sg_modes",
    "spectrum_floor",
    "spectrum_distance",
]
