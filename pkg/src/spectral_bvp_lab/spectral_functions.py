"""Boundary heat traces, expansion fits, zeta and eta functions, index and stability.

Mode sums over the circle are continued past the cutoff with the eigenvalue
branches attached to the named operator families, using an Euler–Maclaurin
Hurwitz zeta function.  Heat traces keep only the singular Green part of the
heat operator: the whole-line part is a volume term with no boundary
logarithms and cancels in every difference that is asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import bernoulli, binom

from .halfline import FirstOrderWeight, MorphismWeight, heat_sg_modes
from .projections import (
    Projection,
    check_parameter_ellipticity,
    check_sigma_compat,
    perturb_projection,
    spectral_projection,
)
from .reduction import AssumptionError, RefusalError, Scenario
from .tangential import EigenBranch, TangentialOperator, noncommutative_residue

TAIL_BOUND = 1e-14
T_RANGE = (1e-6, 10.0)
FIT_COND_LIMIT = 1e12
INDETERMINATE_FRACTION = 0.1
STRIP_LEFT = -2.0
EULER_GAMMA = 0.5772156649015329


class IdentityViolation(ArithmeticError):
    """An asserted identity failed its tolerance."""


# ---------------------------------------------------------------------------
# Hurwitz zeta by Euler–Maclaurin

_EM_TERMS = 24
_EM_SHIFT = 24
_BERNOULLI = bernoulli(2 * _EM_TERMS)


def hurwitz_zeta(z: complex, q) -> np.ndarray:
    """ζ_H(z, q) = Σ_{j≥0} (q + j)^{−z} for complex z ≠ 1 and real q > 0.

    The first ``_EM_SHIFT`` terms are summed directly and the remainder is
    replaced by its Euler–Maclaurin expansion with ``_EM_TERMS`` Bernoulli
    corrections, which continues the sum to all z ≠ 1.
    """
    z = complex(z)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("Hurwitz parameter must be positive")
    if abs(z - 1) < 1e-14:
        raise ValueError("Hurwitz zeta has a pole at z = 1")
    j = np.arange(_EM_SHIFT)
    head = ((q[..., None] + j) ** (-z)).sum(axis=-1)
    qm = q + _EM_SHIFT
    out = head + qm ** (1 - z) / (z - 1) + 0.5 * qm ** (-z)
    rising = z
    for r in range(1, _EM_TERMS + 1):
        term = _BERNOULLI[2 * r] / math.factorial(2 * r) * rising * qm ** (-z - 2 * r + 1)
        out = out + term
        rising *= (z + 2 * r - 1) * (z + 2 * r)
    return out


def _branch_tail(branch: EigenBranch, cutoff: int, z: complex, terms: int = 16) -> complex:
    """Σ over |k| > cutoff on the branch side of |λ_k|^{−z}."""
    if branch.kind == "linear":
        return complex(hurwitz_zeta(z, cutoff + 1 + branch.shift))
    if branch.kind == "quadratic":
        total = 0j
        for r in range(terms):
            c = _cbinom(-z / 2, r)
            if c == 0:
                break
            total += c * branch.shift**r * complex(hurwitz_zeta(z + 2 * r, cutoff + 1))
        return total
    raise ValueError(f"unknown branch kind {branch.kind!r}")


def _cbinom(a: complex, r: int) -> complex:
    out = 1.0 + 0j
    for i in range(r):
        out *= (a - i) / (i + 1)
    return out


# ---------------------------------------------------------------------------
# zeta and eta of tangential operators


@dataclass(frozen=True)
class SpectralFunctionValue:
    """Value of a spectral function at s, with pole data at lattice points."""

    s: complex
    value: complex
    residue_simple: float | None = None
    residue_double: float | None = None


def _pole_lattice(op: TangentialOperator) -> list[float]:
    if op.basis.geometry == "point" or not op.branches:
        return []
    lattice = [1.0]
    if any(b.kind == "quadratic" for b in op.branches):
        lattice.append(-1.0)
    return lattice


def power_sum(op: TangentialOperator, z: complex, signed: bool = False, null_tol: float = 1e-10) -> complex:
    """Σ (sign λ)|λ|^{−z} over nonzero eigenvalues, continued past the cutoff.

    Eigenvalues inside the cutoff are taken from the blocks; beyond it the
    operator's branches supply exact Hurwitz tails.  Nullspaces contribute 0.
    """
    z = complex(z)
    if z.real <= STRIP_LEFT:
        raise ValueError(f"continuation valid for Re z > {STRIP_LEFT}")
    ev = op.eigvals().ravel()
    scale = max(1.0, np.abs(ev).max())
    ev = ev[np.abs(ev) > null_tol * scale]
    mags = np.abs(ev) ** (-z)
    total = complex((np.sign(ev) * mags).sum() if signed else mags.sum())
    if op.basis.geometry == "circle":
        if not op.branches:
            raise ValueError("continuation past the cutoff needs eigenvalue branches")
        for br in op.branches:
            tail = _branch_tail(br, op.basis.cutoff, z)
            total += br.sign * tail if signed else tail
    return total


def _laurent(f, s0: complex, radius: float = 1e-2, nodes: int = 64):
    """Residue and constant term of f at s0 by the trapezoid rule on a circle."""
    ang = 2 * np.pi * np.arange(nodes) / nodes
    pts = s0 + radius * np.exp(1j * ang)
    vals = np.array([f(p) for p in pts])
    residue = np.mean(vals * radius * np.exp(1j * ang))
    constant = np.mean(vals)
    return residue, constant


def _evaluate(fun, s: complex, lattice) -> SpectralFunctionValue:
    for p in lattice:
        if abs(s - p) < 1e-8:
            res, const = _laurent(fun, p)
            return SpectralFunctionValue(s, complex(const), residue_simple=float(res.real))
    return SpectralFunctionValue(s, complex(fun(s)))


def zeta(op: TangentialOperator, s: complex) -> SpectralFunctionValue:
    """ζ(op, s) = Σ |λ|^{−s} over nonzero eigenvalues."""
    return _evaluate(lambda z: power_sum(op, z), complex(s), _pole_lattice(op))


def eta(op: TangentialOperator, s: complex) -> SpectralFunctionValue:
    """η(op, s) = Σ sign(λ)|λ|^{−s} over nonzero eigenvalues."""
    return _evaluate(lambda z: power_sum(op, z, signed=True), complex(s), _pole_lattice(op))


@dataclass(frozen=True)
class ZetaEta:
    zeta: tuple[SpectralFunctionValue, ...]
    eta: tuple[SpectralFunctionValue, ...]


def zeta_eta(op: TangentialOperator, s_grid: Sequence[complex]) -> ZetaEta:
    if not op.selfadjoint:
        raise ValueError("zeta and eta need a selfadjoint operator")
    return ZetaEta(tuple(zeta(op, s) for s in s_grid), tuple(eta(op, s) for s in s_grid))


def half_projection_trace(c: TangentialOperator, pi1: Projection, s: complex) -> complex:
    """Tr[½Π₂(C²)^{−s}] with (C²)^{−s} = 0 on the nullspace.

    Inside the cutoff the matrix power of each C_k² is formed and multiplied
    by Π₂,k; beyond it Π₂ is the negative spectral projection, so the
    negative branches supply the tail.
    """
    sq = c.blocks @ c.blocks
    sq = 0.5 * (sq + sq.conj().transpose(0, 2, 1))
    w, v = np.linalg.eigh(sq)
    scale = max(1.0, np.abs(w).max())
    live = w > 1e-10 * scale
    pw = np.where(live, np.where(live, np.abs(w), 1.0) ** (-complex(s)), 0.0)
    power = (v * pw[:, None, :]) @ v.conj().transpose(0, 2, 1)
    pi2 = np.eye(c.fiber_dim) - pi1.blocks
    total = 0.5 * np.trace(pi2 @ power, axis1=1, axis2=2).sum()
    if c.basis.geometry == "circle":
        for br in c.branches:
            if br.sign < 0:
                total += 0.5 * _branch_tail(br, c.basis.cutoff, 2 * complex(s))
    return complex(total)


def zeta_eta_identity(c: TangentialOperator, pi1: Projection, s: complex) -> tuple[complex, complex]:
    """Both sides of Tr[½Π₂(C²)^{−s}] = ¼ζ(C², s) − ¼η(C, 2s)."""
    lhs = half_projection_trace(c, pi1, s)
    rhs = 0.25 * power_sum(c, 2 * s) - 0.25 * power_sum(c, 2 * s, signed=True)
    return lhs, complex(rhs)


def eta_invariant(c: TangentialOperator, v0_selector=None, sigma: TangentialOperator | None = None) -> float:
    """η(C, 0) + dim V′₀ − dim V″₀ for the spectral projection picked by the selector."""
    p = spectral_projection(c, v0_selector, sigma=sigma)
    d_in, d_out = p.null_dims
    return float(eta(c, 0.0).value.real) + d_in - d_out


# ---------------------------------------------------------------------------
# weighted zeta residues


@dataclass(frozen=True)
class QuadraticTail:
    """Model tr(W_k Q_k^{−s}) = c_± (k² + shift)^{−power/2 − s} for ±k > cutoff."""

    coeff_plus: float
    coeff_minus: float
    power: float
    shift: float


def weighted_zeta(w_blocks: np.ndarray, q: TangentialOperator, s: complex, tail: QuadraticTail) -> complex:
    """Σ_k tr(W_k (Q_k + Π₀,k)^{−s}) with an exact quadratic tail past the cutoff."""
    w_vals, v = np.linalg.eigh(q.blocks)
    scale = max(1.0, np.abs(w_vals).max())
    safe = np.where(np.abs(w_vals) > 1e-10 * scale, np.abs(w_vals), 1.0)
    pw = safe ** (-complex(s))
    power = (v * pw[:, None, :]) @ v.conj().transpose(0, 2, 1)
    total = np.trace(w_blocks @ power, axis1=1, axis2=2).sum()
    kk = q.basis.cutoff
    # validate the tail model at the outermost modes
    for idx, c in ((0, tail.coeff_minus), (-1, tail.coeff_plus)):
        model = c * (kk**2 + tail.shift) ** (-tail.power / 2)
        actual = np.trace(w_blocks[idx]).real
        if abs(model - actual) > 1e-10 * max(1.0, abs(actual)):
            raise ValueError("tail model does not match the outermost modes")
    z = 2 * complex(s) + tail.power
    br = EigenBranch("quadratic", 1, 1, tail.shift)
    total += (tail.coeff_plus + tail.coeff_minus) * _branch_tail(br, kk, z)
    return complex(total)


def zeta_residue(fun, s0: float = 0.0) -> float:
    res, _ = _laurent(fun, s0)
    return float(res.real)


# ---------------------------------------------------------------------------
# heat traces


@dataclass(frozen=True)
class HeatSamples:
    """Boundary heat trace samples."""

    t: np.ndarray
    values: np.ndarray
    cutoff: int
    tail_bound: float
    precision: str
    max_imag_ratio: float


def _tail_bound(pprime: TangentialOperator, cutoff: int, t: float) -> float:
    """Bound Σ_{|k|>K} N e^{−t λ_min(P′_k)} assuming λ_min(P′_k) ≥ q (|k|/K)²."""
    full = pprime.basis.cutoff
    if cutoff >= full:
        cutoff = full
    lo = np.linalg.eigvalsh(pprime.block(-cutoff))[0]
    hi = np.linalg.eigvalsh(pprime.block(cutoff))[0]
    q = max(min(lo, hi), 0.0)
    if cutoff == 0:
        return 0.0
    growth = t * q / cutoff**2
    if growth <= 0:
        return np.inf
    j0 = cutoff + 1
    # Σ_{j≥j0} e^{−g j²} ≤ e^{−g j0²} (1 + 1/(2 g j0))
    bound = math.exp(-growth * j0**2) * (1 + 1 / (2 * growth * j0))
    return 2 * pprime.fiber_dim * bound


def choose_cutoff(pprime: TangentialOperator, t_min: float, ceiling: int | None = None) -> tuple[int, float]:
    """Smallest K ≤ ceiling with tail bound ≤ TAIL_BOUND at t_min."""
    full = pprime.basis.cutoff if ceiling is None else min(ceiling, pprime.basis.cutoff)
    if pprime.basis.geometry == "point":
        return 0, 0.0
    lo, hi = 1, full
    if _tail_bound(pprime, full, t_min) > TAIL_BOUND:
        raise RefusalError(
            f"tail bound {_tail_bound(pprime, full, t_min):.2e} above {TAIL_BOUND} at t = {t_min} "
            f"with cutoff {full}"
        )
    while lo < hi:
        mid = (lo + hi) // 2
        if _tail_bound(pprime, mid, t_min) <= TAIL_BOUND:
            hi = mid
        else:
            lo = mid + 1
    return lo, _tail_bound(pprime, lo, t_min)


def _restrict(blocks: np.ndarray, full: int, cutoff: int) -> np.ndarray:
    return blocks[full - cutoff : full + cutoff + 1]


def _weight_for(sc: Scenario, weight, full: int, cutoff: int):
    if weight is None:
        return None
    if isinstance(weight, MorphismWeight):
        phi = np.asarray(weight.phi, dtype=complex)
        if phi.ndim == 3:
            phi = _restrict(phi, full, cutoff)
        return MorphismWeight(phi)
    if isinstance(weight, FirstOrderWeight):
        psi = np.asarray(weight.psi, dtype=complex)
        b1 = weight.b1
        if isinstance(b1, TangentialOperator):
            b1 = b1.blocks
        b1 = np.asarray(b1, dtype=complex)
        if psi.ndim == 3:
            psi = _restrict(psi, full, cutoff)
        if b1.ndim == 3:
            b1 = _restrict(b1, full, cutoff)
        return FirstOrderWeight(psi, b1)
    raise TypeError(f"unsupported weight {weight!r}")


def _mode_order(modes: np.ndarray) -> np.ndarray:
    return np.argsort(np.abs(modes), kind="stable")


def _accumulate(per_mode: np.ndarray, modes: np.ndarray, precision: str) -> np.ndarray:
    """Sum (M, T) mode contributions in ascending |k|."""
    ordered = per_mode[_mode_order(modes)]
    if precision == "f64":
        return ordered.sum(axis=0)
    if precision != "dd":
        raise ValueError(f"unknown precision {precision!r}")
    re = [math.fsum(col) for col in ordered.real.T]
    im = [math.fsum(col) for col in ordered.imag.T]
    return np.array(re) + 1j * np.array(im)


_DEFAULT = object()


def boundary_heat_trace(
    sc: Scenario,
    t_grid,
    weight=_DEFAULT,
    precision: str = "dd",
    cutoff: int | None = None,
    nodes: int = 48,
) -> HeatSamples:
    """Σ_k tr_n of the singular Green heat kernel, optionally weighted.

    The mode cutoff is the smallest one whose Gaussian tail bound at the
    smallest t is below TAIL_BOUND.  x′-dependent morphism weights act
    diagonally in k through their mean, since every operator here is
    mode-diagonal.
    """
    t = np.sort(np.atleast_1d(np.asarray(t_grid, dtype=float)))
    if t[0] < T_RANGE[0] or t[-1] > T_RANGE[1]:
        raise ValueError(f"t must lie in [{T_RANGE[0]}, {T_RANGE[1]}]")
    if weight is _DEFAULT:
        weight = sc.weight
    full = sc.basis.cutoff
    kc, bound = (0, 0.0) if sc.basis.geometry == "point" else choose_cutoff(sc.pprime, t[0], cutoff)
    pk = _restrict(sc.pprime.blocks, full, kc)
    pi1 = _restrict(sc.pi1.blocks, full, kc)
    b = _restrict(sc.b.blocks, full, kc)
    w = _weight_for(sc, weight, full, kc)
    per_mode = heat_sg_modes(pk, pi1, b, t, w, nodes)
    modes = np.arange(-kc, kc + 1)
    vals = _accumulate(per_mode, modes, precision)
    mag = np.maximum(np.abs(vals), 1e-300)
    return HeatSamples(t, vals, kc, bound, precision, float((np.abs(vals.imag) / mag).max()))


def d_route_trace(sc: Scenario, t_grid, psi, precision: str = "dd") -> HeatSamples:
    """−½ Σ_k tr(ψ Π₂,k e^{−tP′_k}) (πt)^{−1/2}, the heat-side image of −½Tr(ψΠ₂(P′−λ)^{−1/2})."""
    t = np.sort(np.atleast_1d(np.asarray(t_grid, dtype=float)))
    full = sc.basis.cutoff
    kc, bound = (0, 0.0) if sc.basis.geometry == "point" else choose_cutoff(sc.pprime, t[0])
    pk = _restrict(sc.pprime.blocks, full, kc)
    pi2 = np.eye(sc.basis.fiber_dim) - _restrict(sc.pi1.blocks, full, kc)
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 3:
        psi = _restrict(psi, full, kc)
    w, v = np.linalg.eigh(pk)
    m = psi @ pi2 @ v  # tr(ψΠ₂ V e^{−tD} V*) = Σ_j (V* ψ Π₂ V)_jj e^{−t d_j}
    diag = np.einsum("mij,mji->mj", v.conj().transpose(0, 2, 1), m)
    per_mode = -0.5 * np.einsum("mj,mjt->mt", diag, np.exp(-w[:, :, None] * t[None, None, :]))
    per_mode = per_mode / np.sqrt(np.pi * t)[None, :]
    vals = _accumulate(per_mode, np.arange(-kc, kc + 1), precision)
    mag = np.maximum(np.abs(vals), 1e-300)
    return HeatSamples(t, vals, kc, bound, precision, float((np.abs(vals.imag) / mag).max()))


# ---------------------------------------------------------------------------
# expansion fitting


@dataclass(frozen=True)
class ExpansionFit:
    """Coefficients of Σ_{−n≤k<0} a_k t^{(k−m′)/2} + Σ_{k≥0} (−a′_k log t + a″_k) t^{(k−m′)/2}.

    ``coefficients[k]`` is (a_k, a′_k, a″_k) with None where the basis has no
    such term; ``uncertainties`` has the same layout.
    """

    coefficients: dict
    uncertainties: dict
    t_window: tuple[float, float]
    condition_number: float
    n: int
    m_prime: int
    k_max: int
    indeterminate: tuple[str, ...] = ()
    residual: float = 0.0

    def log_coefficient(self, k: int = 0):
        return self.coefficients[k][1], self.uncertainties[k][1]

    def constant_coefficient(self, k: int = 0):
        return self.coefficients[k][2], self.uncertainties[k][2]


def _design(t: np.ndarray, n: int, m_prime: int, k_max: int):
    cols, labels = [], []
    lt = np.log(t)
    for k in range(-n, 0):
        cols.append(t ** ((k - m_prime) / 2))
        labels.append((k, 0))
    for k in range(0, k_max + 1):
        p = t ** ((k - m_prime) / 2)
        cols.append(-p * lt)
        labels.append((k, 1))
        cols.append(p)
        labels.append((k, 2))
    return np.stack(cols, axis=1), labels


def _solve(t, y, n, m_prime, k_max):
    x, labels = _design(t, n, m_prime, k_max)
    scale_y = np.abs(y).max()
    w = 1.0 / np.maximum(np.abs(y), 1e-8 * scale_y)
    xw = x * w[:, None]
    norms = np.linalg.norm(xw, axis=0)
    xn = xw / norms
    yw = y * w
    coef, _, _, sv = np.linalg.lstsq(xn, yw, rcond=None)
    cond = sv[0] / sv[-1]
    resid = yw - xn @ coef
    dof = max(len(t) - len(coef), 1)
    sigma2 = float(np.vdot(resid, resid).real) / dof
    cov = sigma2 * np.linalg.inv(xn.T @ xn)
    stderr = np.sqrt(np.abs(np.diag(cov))) / norms
    return coef / norms, stderr, cond, labels, float(np.sqrt(np.mean(np.abs(resid) ** 2)))


def fit_expansion(samples, n: int, m_prime: int = 0, k_max: int = 4, t=None) -> ExpansionFit:
    """Weighted least squares in the small-t expansion basis.

    Rows are weighted by 1/|y| (relative errors), columns are normalized, and
    the uncertainty of each coefficient is the larger of its standard error
    and its spread over three sub-windows that drop about a tenth of the
    samples at one or both ends.
    """
    if isinstance(samples, HeatSamples):
        t, y = samples.t, samples.values
    else:
        y = np.asarray(samples)
        t = np.asarray(t, dtype=float)
        if t.shape != y.shape:
            raise ValueError(f"t has shape {t.shape} but samples have shape {y.shape}")
    y = np.asarray(y)
    if np.iscomplexobj(y) and np.abs(y.imag).max() <= 1e-8 * max(np.abs(y).max(), 1e-300):
        y = y.real
    order = np.argsort(t)
    t, y = t[order], y[order]
    nbasis = n + 2 * (k_max + 1)
    if len(t) < 4 * nbasis:
        raise ValueError(f"need at least {4 * nbasis} samples, got {len(t)}")
    if np.log10(t[-1] / t[0]) < 3 - 1e-9:
        raise ValueError("samples must span at least three decades")
    coef, stderr, cond, labels, resid = _solve(t, y, n, m_prime, k_max)
    if cond > FIT_COND_LIMIT:
        raise RefusalError(f"design condition number {cond:.2e} exceeds {FIT_COND_LIMIT:.0e}")
    cut = max(1, int(round(0.12 * len(t))))
    half = max(1, cut // 2)
    spread = np.zeros(len(coef))
    for sl in (slice(cut, None), slice(None, -cut), slice(half, -half)):
        c_sub, _, _, _, _ = _solve(t[sl], y[sl], n, m_prime, k_max)
        spread = np.maximum(spread, np.abs(c_sub - coef))
    unc = np.maximum(spread, stderr)
    coefs: dict[int, list] = {}
    uncs: dict[int, list] = {}
    flagged = []
    names = {0: "a", 1: "a'", 2: "a''"}
    for (k, slot), c, u in zip(labels, coef, unc):
        coefs.setdefault(k, [None, None, None])
        uncs.setdefault(k, [None, None, None])
        val = complex(c) if np.iscomplexobj(c) else float(c)
        coefs[k][slot] = val
        uncs[k][slot] = float(u)
        if u > INDETERMINATE_FRACTION * abs(c):
            flagged.append(f"{names[slot]}_{k}")
    return ExpansionFit(
        coefficients={k: tuple(v) for k, v in coefs.items()},
        uncertainties={k: tuple(v) for k, v in uncs.items()},
        t_window=(float(t[0]), float(t[-1])),
        condition_number=float(cond),
        n=n,
        m_prime=m_prime,
        k_max=k_max,
        indeterminate=tuple(flagged),
        residual=resid,
    )


def zeta_from_fit(fit: ExpansionFit) -> SpectralFunctionValue:
    """Boundary contribution to ζ(P_T, s) at s = 0 from the order-zero coefficients.

    Γ(s)ζ(s) = ∫ t^{s−1}Tr e^{−tP} dt turns −a′₀ log t + a″₀ into
    a′₀/s² + a″₀/s, so ζ has residue a′₀ at 0 and finite part a″₀ − γa′₀.
    Only the k = 0 slot is translated.
    """
    if fit.m_prime != 0:
        raise ValueError("zeta dictionary applies to morphism weights")
    a1 = fit.coefficients[0][1]
    a2 = fit.coefficients[0][2]
    return SpectralFunctionValue(0.0, a2 - EULER_GAMMA * a1, residue_simple=float(np.real(a1)))


def log_t_grid(t_min: float, t_max: float, points: int) -> np.ndarray:
    return np.logspace(np.log10(t_min), np.log10(t_max), points)


# ---------------------------------------------------------------------------
# index and symmetry identities


@dataclass(frozen=True)
class IndexResult:
    index: int
    flatness: float
    t: np.ndarray
    supertrace: np.ndarray


def _dirac_pair(sc: Scenario):
    if sc.a is None or sc.sigma is None:
        raise AssumptionError("dirac-structure", "index needs the tangential operator A and sigma")
    s = sc.sigma.blocks
    a = sc.a.blocks
    eye = np.eye(sc.basis.fiber_dim)
    if np.abs(s @ s + eye).max() > 1e-12 or np.abs(s @ a + a @ s).max() > 1e-12:
        raise AssumptionError("dirac-structure", "sigma must satisfy sigma^2 = -I and anticommute with A")
    return a


def index_supertrace(sc: Scenario, t_grid, flatness_tol: float = 1e-5, precision: str = "dd") -> IndexResult:
    """Tr e^{−tD_Π*D_Π} − Tr e^{−tD_ΠD_Π*} from the singular Green traces.

    D_Π*D_Π has Π₁ = Π and B = A; after conjugation by σ, D_ΠD_Π* has
    Π₁ = Π^⊥ and B = −A.  Both share P′ = A², so the whole-line parts cancel.
    """
    a = _dirac_pair(sc)
    t = np.sort(np.atleast_1d(np.asarray(t_grid, dtype=float)))
    full = sc.basis.cutoff
    kc, _ = (0, 0.0) if sc.basis.geometry == "point" else choose_cutoff(sc.pprime, t[0])
    pk = _restrict(a @ a, full, kc)
    pk = 0.5 * (pk + pk.conj().transpose(0, 2, 1))
    pi = _restrict(sc.pi1.blocks, full, kc)
    ak = _restrict(a, full, kc)
    eye = np.eye(sc.basis.fiber_dim)
    h1 = heat_sg_modes(pk, pi, ak, t)
    h2 = heat_sg_modes(pk, eye - pi, -ak, t)
    s = _accumulate(h1 - h2, np.arange(-kc, kc + 1), precision).real
    idx = int(np.rint(np.median(s)))
    flat = float(np.abs(s - idx).max())
    if flat > flatness_tol:
        raise IdentityViolation(f"supertrace not flat: max deviation {flat:.2e} from {idx}")
    return IndexResult(idx, flat, t, s)


@dataclass(frozen=True)
class SymmetryResiduals:
    resolvent: float  # |Tr(Π₂R_{m,1}) − ½Tr(R_{m,1})|
    half_power: float  # |Tr(σΠ₂R_{m,2}) − ½Tr(σR_{m,2})|
    scale: float


def symmetry_identities(sc: Scenario, lam: complex, m_values=(1, 2, 3)) -> SymmetryResiduals:
    """Truncated mode sums of the trace identities under σ-symmetry.

    R_{m,1} = ∂_λ^{m−1}/(m−1)! (P′−λ)⁻¹ and R_{m,2} the same for (P′−λ)^{−1/2}.
    """
    if sc.sigma is None:
        raise AssumptionError("sigma-symmetry", "no sigma on the scenario")
    s = sc.sigma.blocks
    p = sc.pprime.blocks
    if np.abs(s @ p - p @ s).max() > 1e-12 * max(1.0, np.abs(p).max()):
        raise AssumptionError("sigma-symmetry", "sigma does not commute with P'")
    if not check_sigma_compat(sc.pi1, sc.sigma):
        raise AssumptionError("sigma-symmetry", "projection is not sigma-compatible")
    pi2 = np.eye(sc.basis.fiber_dim) - sc.pi1.blocks
    w, v = np.linalg.eigh(p)
    vh = v.conj().transpose(0, 2, 1)
    z = w.astype(complex) - complex(lam)
    r1 = r2 = 0.0
    scale = 0.0
    for m in m_values:
        d1 = z ** (-m)
        d2 = binom(-0.5, m - 1) * (-1) ** (m - 1) * np.sqrt(z) ** (-(2 * m - 1))
        rm1 = (v * d1[:, None, :]) @ vh
        rm2 = (v * d2[:, None, :]) @ vh
        t1 = np.trace(pi2 @ rm1, axis1=1, axis2=2)
        t1h = 0.5 * np.trace(rm1, axis1=1, axis2=2)
        t2 = np.trace(s @ pi2 @ rm2, axis1=1, axis2=2)
        t2h = 0.5 * np.trace(s @ rm2, axis1=1, axis2=2)
        r1 = max(r1, abs(math.fsum((t1 - t1h).real) + 1j * math.fsum((t1 - t1h).imag)))
        r2 = max(r2, abs(math.fsum((t2 - t2h).real) + 1j * math.fsum((t2 - t2h).imag)))
        scale = max(scale, float(np.abs(t1h).sum()), float(np.abs(t2h).sum()))
    return SymmetryResiduals(float(r1), float(r2), scale)


# ---------------------------------------------------------------------------
# residue and stability experiments


def residue_of_weighted_projection(psi: np.ndarray, pi1: Projection) -> float:
    """res(ψΠ₂) from the symbol of Π₂ = I − Π₁."""
    comp = pi1.complement()
    if comp.symbol is None:
        raise ValueError("projection carries no symbol expansion")
    return noncommutative_residue(comp.symbol.left_multiply(psi))


@dataclass(frozen=True)
class CoefficientSet:
    """Order-zero coefficients of the plain and D-weighted traces."""

    a1_I: float
    a2_I: float
    a1_D: float
    a2_D: float
    u_a1_I: float
    u_a2_I: float
    u_a1_D: float
    u_a2_D: float


@dataclass(frozen=True)
class StabilityReport:
    base: CoefficientSet
    trials: tuple[CoefficientSet, ...]
    decay_order: int
    eps: float
    resampled: int
    max_delta_a2_I: float
    max_delta_a2_D: float
    max_abs_a1: float
    a2_within: bool
    a1_within: bool
    ratio_I: float
    ratio_D: float
    deltas: dict = field(default_factory=dict)


def order_zero_coefficients(sc: Scenario, t, k_max: int = 4, precision: str = "dd") -> CoefficientSet:
    """Fit a′₀, a″₀ for the plain trace and for D = σ(∂ + A)."""
    if sc.sigma is None or sc.a is None:
        raise AssumptionError("dirac-structure", "stability needs sigma and A")
    n = sc.basis.boundary_dim + 1
    plain = fit_expansion(boundary_heat_trace(sc, t, weight=None, precision=precision), n, 0, k_max)
    d = FirstOrderWeight(sc.sigma.blocks, sc.a.blocks)
    dfit = fit_expansion(boundary_heat_trace(sc, t, weight=d, precision=precision), n, 1, k_max)

    def re(x):
        return float(np.real(x))

    return CoefficientSet(
        re(plain.coefficients[0][1]),
        re(plain.coefficients[0][2]),
        re(dfit.coefficients[0][1]),
        re(dfit.coefficients[0][2]),
        plain.uncertainties[0][1],
        plain.uncertainties[0][2],
        dfit.uncertainties[0][1],
        dfit.uncertainties[0][2],
    )


def stability_experiment(
    sc: Scenario,
    decay_order: int,
    eps: float,
    trials: int,
    seed: int = 0,
    t=None,
    k_max: int = 4,
    log_tol: float = 1e-4,
    max_resample: int = 20,
) -> StabilityReport:
    """Perturb Π by σ-preserving conjugations and compare order-zero coefficients.

    For decay_order ≤ −dim X the a″₀ shifts must stay within twice the
    combined fit uncertainty; for every order a′₀ must stay below log_tol.
    Perturbations that break parameter-ellipticity are resampled.
    """
    if sc.sigma is None or not check_sigma_compat(sc.pi1, sc.sigma):
        raise AssumptionError("sigma-symmetry", "base projection must be sigma-compatible")
    t = log_t_grid(1e-4, 1e-1, 160) if t is None else np.asarray(t)
    base = order_zero_coefficients(sc, t, k_max)
    out = []
    resampled = 0
    s = seed
    while len(out) < trials:
        if resampled > max_resample:
            raise RefusalError("too many perturbations lost ellipticity")
        pi = perturb_projection(sc.pi1, decay_order, eps, s, preserve_sigma=sc.sigma)
        s += 1
        rep = check_parameter_ellipticity(sc.pprime, pi, sc.b, sc.theta)
        if not rep.passed:
            resampled += 1
            continue
        out.append(order_zero_coefficients(sc.with_projection(pi), t, k_max))
    d2i = [abs(c.a2_I - base.a2_I) for c in out]
    d2d = [abs(c.a2_D - base.a2_D) for c in out]
    u2i = [c.u_a2_I + base.u_a2_I for c in out]
    u2d = [c.u_a2_D + base.u_a2_D for c in out]
    a1 = [abs(c.a1_I) for c in out] + [abs(c.a1_D) for c in out]
    ratio_i = max(d / u if u > 0 else np.inf for d, u in zip(d2i, u2i))
    ratio_d = max(d / u if u > 0 else np.inf for d, u in zip(d2d, u2d))
    n = sc.basis.boundary_dim + 1
    return StabilityReport(
        base=base,
        trials=tuple(out),
        decay_order=decay_order,
        eps=eps,
        resampled=resampled,
        max_delta_a2_I=max(d2i),
        max_delta_a2_D=max(d2d),
        max_abs_a1=max(a1),
        a2_within=bool(decay_order <= -n and ratio_i <= 2 and ratio_d <= 2),
        a1_within=bool(max(a1) <= log_tol),
        ratio_I=float(ratio_i),
        ratio_D=float(ratio_d),
        deltas={"a2_I": d2i, "a2_D": d2d, "unc_a2_I": u2i, "unc_a2_D": u2d},
    )


__all__ = [
    "IdentityViolation",
    "SpectralFunctionValue",
    "ZetaEta",
    "HeatSamples",
    "ExpansionFit",
    "IndexResult",
    "SymmetryResiduals",
    "CoefficientSet",
    "StabilityReport",
    "QuadraticTail",
    "hurwitz_zeta",
    "power_sum",
    "zeta",
    "eta",
    "zeta_eta",
    "half_projection_trace",
    "zeta_eta_identity",
    "eta_invariant",
    "weighted_zeta",
    "zeta_residue",
    "boundary_heat_trace",
    "d_route_trace",
    "choose_cutoff",
    "fit_expansion",
    "zeta_from_fit",
    "log_t_grid",
    "index_supertrace",
    "symmetry_identities",
    "residue_of_weighted_projection",
    "order_zero_coefficients",
    "stability_experiment",
]
