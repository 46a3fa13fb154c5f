"""Boundary projections: construction, orthogonalization, perturbation, checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import binom

from .tangential import (
    SIGMA1,
    SIGMA3,
    EigenBranch,
    ModeBasis,
    SymbolExpansion,
    TangentialOperator,
    principal_values,
)

IDEMPOTENT_TOL = 1e-12
SIGMA_COMPAT_TOL = 1e-10
OPEN_SECTOR_MARGIN = 1e-6


def _herm(a: np.ndarray) -> np.ndarray:
    return a.conj().swapaxes(-1, -2)


@dataclass(frozen=True, eq=False)
class Projection:
    """Mode-blocked idempotent.

    Attributes
    ----------
    basis : ModeBasis
    blocks : ndarray, shape (2K+1, N, N)
    orthogonal : bool
        Blocks are Hermitian.
    sigma_compatible : bool
        Π = −σΠ^⊥σ was verified for the σ the projection was built with.
    symbol : SymbolExpansion or None
    principal : ndarray or None
        Principal symbol at ξ = −1, +1, shape (2, N, N), kept when the full
        expansion is unknown but the leading term is (order ≤ −1 changes).
    null_dims : (int, int) or None
        (dim V′₀, dim V″₀) for spectral projections.
    """

    basis: ModeBasis
    blocks: np.ndarray
    orthogonal: bool = False
    sigma_compatible: bool = False
    symbol: SymbolExpansion | None = None
    principal: np.ndarray | None = None
    null_dims: tuple[int, int] | None = None

    def __post_init__(self):
        b = np.array(self.blocks, dtype=complex)
        n = self.basis.fiber_dim
        if b.shape != (self.basis.size, n, n):
            raise ValueError(f"blocks have shape {b.shape}")
        scale = max(1.0, np.abs(b).max(initial=0.0))
        err = np.abs(b @ b - b).max(initial=0.0)
        if err > IDEMPOTENT_TOL * scale**2:
            raise ValueError(f"projection is not idempotent (residual {err:.2e})")
        if self.orthogonal:
            herr = np.abs(b - _herm(b)).max(initial=0.0)
            if herr > IDEMPOTENT_TOL * scale:
                raise ValueError(f"orthogonal flag set but blocks deviate by {herr:.2e}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def order(self) -> int:
        return 0

    def block(self, k: int) -> np.ndarray:
        return self.blocks[self.basis.index(k)]

    def complement(self) -> "Projection":
        n = self.basis.fiber_dim
        eye = np.eye(n)
        sym = None
        if self.symbol is not None:
            sym = SymbolExpansion.from_components(n, [(0, (eye, eye))]) - self.symbol
        prin = None if self.principal is None else eye - self.principal
        dims = None if self.null_dims is None else self.null_dims[::-1]
        return Projection(
            self.basis,
            eye - self.blocks,
            orthogonal=self.orthogonal,
            sigma_compatible=self.sigma_compatible,
            symbol=sym,
            principal=prin,
            null_dims=dims,
        )

    def as_operator(self) -> TangentialOperator:
        return TangentialOperator(
            self.basis, self.blocks, 0, selfadjoint=self.orthogonal, symbol=self.symbol
        )

    def rank(self) -> np.ndarray:
        return np.rint(np.trace(self.blocks, axis1=1, axis2=2).real).astype(int)


def projection_principal(p: Projection) -> np.ndarray:
    if p.principal is not None:
        return p.principal
    return principal_values(p, 0)


# ---------------------------------------------------------------------------
# construction


def _positive_projection_symbol(c: TangentialOperator) -> SymbolExpansion | None:
    """Analytic symbol of Π_>(C) for the named circle families."""
    fam = c.family.get("family") if c.family else None
    if c.basis.geometry != "circle":
        return None
    if fam == "ScalarShift":
        return SymbolExpansion.from_components(1, [(0, (0.0, 1.0))])
    if fam == "DiracPair":
        m = float(c.family.get("m", 0.0))
        eye = np.eye(2)
        comps = [(0, (0.5 * eye - 0.5 * SIGMA3, 0.5 * eye + 0.5 * SIGMA3))]
        if m != 0:
            # A/|A| = (ξσ₃ + mσ₁)|ξ|^{-1} Σ_j binom(-1/2, j) (m/|ξ|)^{2j}
            for j in range(3):
                cj = 0.5 * binom(-0.5, j) * m ** (2 * j)
                if j > 0:
                    comps.append((-2 * j, (-cj * SIGMA3, cj * SIGMA3)))
                comps.append((-2 * j - 1, (cj * m * SIGMA1, cj * m * SIGMA1)))
        return SymbolExpansion.from_components(2, comps)
    return None


def _resolve_null_selector(selector, k, null_basis, sigma_k, tol):
    """Return an orthonormal basis (columns) of V′₀ at mode k."""
    n0 = null_basis.shape[1]
    if selector is None or selector == "empty":
        return null_basis[:, :0]
    if selector == "full":
        return null_basis
    if selector == "lagrangian":
        if sigma_k is None:
            raise ValueError("lagrangian selector needs sigma")
        if n0 == 0:
            return null_basis
        # L = span{(u_j + w_j)/√2} with u_j, w_j in the ±i eigenspaces of σ on V₀,
        # so that σL ⊥ L and V₀ = L ⊕ σL
        m = null_basis.conj().T @ (1j * sigma_k) @ null_basis
        m = 0.5 * (m + m.conj().T)
        w, v = np.linalg.eigh(m)
        minus = np.abs(w + 1) < 1e-8  # iσ = −1 on the +i eigenspace of σ
        plus = np.abs(w - 1) < 1e-8
        if minus.sum() != plus.sum() or 2 * minus.sum() != n0:
            raise ValueError(f"nullspace at mode {k} has no sigma-Lagrangian splitting")
        u = null_basis @ v[:, minus]
        if np.abs(sigma_k.imag).max() == 0:
            wv = u.conj()  # real σ: conjugation maps the +i to the −i eigenspace
        else:
            wv = null_basis @ v[:, plus]
        q, _ = np.linalg.qr((u + wv) / np.sqrt(2))
        return q
    if isinstance(selector, Mapping):
        vecs = selector.get(k)
        if vecs is None:
            return null_basis[:, :0]
        vecs = np.atleast_2d(np.asarray(vecs, dtype=complex))
        if vecs.shape[0] != null_basis.shape[0]:
            vecs = vecs.T
        q, _ = np.linalg.qr(vecs)
        resid = q - null_basis @ (null_basis.conj().T @ q)
        if np.abs(resid).max(initial=0.0) > 1e-8:
            raise ValueError(f"selector at mode {k} is not inside the nullspace")
        return q
    raise ValueError(f"unknown null selector {selector!r}")


def spectral_projection(
    c: TangentialOperator,
    null_selector=None,
    sigma: TangentialOperator | None = None,
    tol: float = 1e-10,
) -> Projection:
    """Π = Π_>(C) + Π_{V′₀} for selfadjoint C.

    Parameters
    ----------
    null_selector : None | "empty" | "full" | "lagrangian" | mapping
        Choice of V′₀ ⊆ V₀(C).  "lagrangian" picks L ⊆ V₀ with σL ⊥ L and
        V₀ = L ⊕ σL; a mapping sends mode k to spanning column vectors.
    """
    if not c.selfadjoint:
        raise ValueError("spectral projection needs a selfadjoint operator")
    w, v = np.linalg.eigh(c.blocks)
    blocks = np.empty_like(c.blocks)
    dim_v0p = dim_v0 = 0
    for idx, k in enumerate(c.basis.modes):
        scale = max(1.0, np.abs(w[idx]).max())
        null = np.abs(w[idx]) <= tol * scale
        pos = (w[idx] > 0) & ~null
        vp = v[idx][:, pos]
        proj = vp @ vp.conj().T
        if null.any() or isinstance(null_selector, Mapping):
            nb = v[idx][:, null]
            sig = None if sigma is None else sigma.blocks[idx]
            q = _resolve_null_selector(null_selector, int(k), nb, sig, tol)
            proj = proj + q @ q.conj().T
            dim_v0p += q.shape[1]
            dim_v0 += nb.shape[1]
        blocks[idx] = 0.5 * (proj + proj.conj().T)
    p = Projection(
        c.basis,
        blocks,
        orthogonal=True,
        symbol=_positive_projection_symbol(c),
        null_dims=(dim_v0p, dim_v0 - dim_v0p),
    )
    if sigma is not None and check_sigma_compat(p, sigma):
        p = _with(p, sigma_compatible=True)
    return p


def _with(p: Projection, **changes) -> Projection:
    kw = dict(
        basis=p.basis,
        blocks=p.blocks,
        orthogonal=p.orthogonal,
        sigma_compatible=p.sigma_compatible,
        symbol=p.symbol,
        principal=p.principal,
        null_dims=p.null_dims,
    )
    kw.update(changes)
    return Projection(**kw)


def aps_projection(
    a: TangentialOperator, variant: str = "ge", sigma: TangentialOperator | None = None
) -> Projection:
    """Π_≥(A) ("ge"), Π_>(A) ("gt") or Π₊ = Π_>(A) + Π_L ("plus")."""
    selector = {"ge": "full", "gt": "empty", "plus": "lagrangian"}.get(variant)
    if selector is None:
        raise ValueError(f"unknown APS variant {variant!r}")
    return spectral_projection(a, selector, sigma=sigma)


def constant_projection(basis: ModeBasis, m) -> Projection:
    """Mode-independent projection given by one N×N idempotent."""
    m = np.asarray(m, dtype=complex)
    n = basis.fiber_dim
    orth = bool(np.allclose(m, m.conj().T, atol=1e-14))
    sym = None
    if basis.geometry == "circle":
        sym = SymbolExpansion.from_components(n, [(0, (m, m))])
    return Projection(basis, np.broadcast_to(m, (basis.size, n, n)), orthogonal=orth, symbol=sym)


def orthogonalize(p: Projection) -> tuple[Projection, TangentialOperator]:
    """Orthogonal projection with the same range, plus the conjugating R.

    Π_ort = ΠΠ*[ΠΠ* + (I−Π*)(I−Π)]⁻¹, R = Π + (I−Π_ort)(I−Π), and
    R Π R⁻¹ = Π_ort with R⁻¹ = Π_ort + (I−Π)(I−Π_ort).
    """
    pi = p.blocks
    eye = np.eye(p.basis.fiber_dim)
    pis = _herm(pi)
    bracket = pi @ pis + (eye - pis) @ (eye - pi)
    cond = np.linalg.cond(bracket)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e12:
        raise ValueError("orthogonalization bracket is singular: input is not a projection")
    port = np.linalg.solve(_herm(bracket), _herm(pi @ pis))
    port = _herm(port)
    port = 0.5 * (port + _herm(port))
    r = pi + (eye - port) @ (eye - pi)
    q = Projection(p.basis, port, orthogonal=True, principal=None)
    return q, TangentialOperator(p.basis, r, 0)


def orthogonalize_inverse(p: Projection, p_ort: Projection) -> np.ndarray:
    """Blocks of R⁻¹ = Π_ort + (I−Π)(I−Π_ort)."""
    eye = np.eye(p.basis.fiber_dim)
    return p_ort.blocks + (eye - p.blocks) @ (eye - p_ort.blocks)


def default_c1(basis: ModeBasis) -> TangentialOperator:
    k = np.abs(basis.modes).astype(float)
    blocks = (1.0 + k)[:, None, None] * np.eye(basis.fiber_dim)
    return TangentialOperator(basis, blocks, 1, selfadjoint=True, nonnegative=True)


def generating_operator(p: Projection, c1: TangentialOperator | None = None) -> TangentialOperator:
    """Selfadjoint invertible C with Π_>(C) = Π.

    C′ = ΠC₁Π − Π^⊥C₁Π^⊥ commutes with Π; any nullspace left over is split by Π
    and filled with +1 on its part in ran Π and −1 on the rest.
    """
    if not p.orthogonal:
        raise ValueError("generating operator needs an orthogonal projection; orthogonalize first")
    attach = c1 is None
    c1 = default_c1(p.basis) if c1 is None else c1
    if not c1.selfadjoint:
        raise ValueError("c1 must be selfadjoint")
    pi = p.blocks
    eye = np.eye(p.basis.fiber_dim)
    perp = eye - pi
    cp = pi @ c1.blocks @ pi - perp @ c1.blocks @ perp
    cp = 0.5 * (cp + _herm(cp))
    w, v = np.linalg.eigh(cp)
    out = cp.copy()
    for idx in range(cp.shape[0]):
        scale = max(1.0, np.abs(w[idx]).max())
        null = np.abs(w[idx]) <= 1e-10 * scale
        if null.any():
            nb = v[idx][:, null]
            pn = nb @ nb.conj().T
            plus = pi[idx] @ pn @ pi[idx]
            minus = perp[idx] @ pn @ perp[idx]
            out[idx] = cp[idx] + plus - minus
    branches = ()
    if attach and p.basis.geometry == "circle":
        # with C₁ = 1 + |k| the eigenvalues are ±(1 + |k|), signs counted at ±K
        kk = p.basis.cutoff
        for side in (-1, 1):
            r = int(round(np.trace(p.block(side * kk)).real))
            n = p.basis.fiber_dim
            branches += (EigenBranch("linear", side, 1, 1.0),) * r
            branches += (EigenBranch("linear", side, -1, 1.0),) * (n - r)
    return TangentialOperator(
        p.basis, 0.5 * (out + _herm(out)), c1.order, selfadjoint=True, branches=branches
    )


def _hermitian_unit(rng, n, sigma=None):
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = h + h.conj().T
    if sigma is not None:
        h = 0.5 * (h - sigma @ h @ sigma)
    nrm = np.linalg.norm(h, 2)
    if nrm < 1e-12:
        h = np.eye(n, dtype=complex)
        nrm = 1.0
    return 0.5 * h / nrm


def perturb_projection(
    base: Projection,
    decay_order: int,
    eps: float,
    seed: int,
    preserve_sigma: TangentialOperator | None = None,
) -> Projection:
    """Conjugate Π̄ by U = exp(iεS) with ‖S_k‖ = ½(1+|k|)^{decay_order}.

    S_k = (1+|k|)^{decay_order} H_{sign k} with two seeded random Hermitian
    H_± of norm ½, so S is a classical symbol of the given order.  With
    ``preserve_sigma`` the H_± are projected onto the commutant of σ, which
    keeps Π = −σΠ^⊥σ intact.
    """
    if not base.orthogonal:
        raise ValueError("perturbation needs an orthogonal base projection")
    if decay_order > -1:
        raise ValueError("decay_order must be <= -1")
    if eps == 0:
        return base
    sig = None
    if preserve_sigma is not None:
        if not check_sigma_compat(base, preserve_sigma):
            raise ValueError("sigma incompatible with the base projection")
        sig = preserve_sigma.blocks[0]
    n = base.basis.fiber_dim
    rng = np.random.default_rng(seed)
    h_plus = _hermitian_unit(rng, n, sig)
    h_minus = _hermitian_unit(rng, n, sig)
    k = base.basis.modes
    weight = (1.0 + np.abs(k)) ** float(decay_order)
    s = np.where((k >= 0)[:, None, None], h_plus, h_minus) * weight[:, None, None]
    w, v = np.linalg.eigh(s)
    u = (v * np.exp(1j * eps * w)[:, None, :]) @ _herm(v)
    blocks = u @ base.blocks @ _herm(u)
    blocks = 0.5 * (blocks + _herm(blocks))
    return Projection(
        base.basis,
        blocks,
        orthogonal=True,
        sigma_compatible=base.sigma_compatible and sig is not None,
        principal=projection_principal(base) if base.basis.geometry == "circle" else None,
        null_dims=base.null_dims,
    )


def rotate_projection(base: Projection, angle: float) -> Projection:
    """Conjugate every block by the real rotation exp(angle·[[0,−1],[1,0]]) (N = 2)."""
    if base.basis.fiber_dim != 2:
        raise ValueError("rotation defined for N = 2")
    c, s = np.cos(angle), np.sin(angle)
    r = np.array([[c, -s], [s, c]], dtype=complex)
    blocks = r @ base.blocks @ r.T
    prin = None
    if base.basis.geometry == "circle":
        prin = r @ projection_principal(base) @ r.T
    return Projection(base.basis, blocks, orthogonal=base.orthogonal, principal=prin)


# ---------------------------------------------------------------------------
# checks


def check_sigma_compat(p: Projection, sigma: TangentialOperator, tol: float = SIGMA_COMPAT_TOL) -> bool:
    """True iff max_k ‖Π_k + σ_k(I − Π_k)σ_k‖ ≤ tol."""
    eye = np.eye(p.basis.fiber_dim)
    s = sigma.blocks
    res = p.blocks + s @ (eye - p.blocks) @ s
    return bool(np.abs(res).max(initial=0.0) <= tol)


@dataclass(frozen=True)
class WellposednessReport:
    passed: bool
    rank_ok: bool
    margin: float
    ranks: tuple[int, int]
    delta: float


def check_wellposed(p: Projection, a: TangentialOperator, delta: float = 1e-6) -> WellposednessReport:
    """Rank π⁰ = N/2 and π⁰ : N₊ → ran π⁰ bijective at ξ = ±1.

    N₊ is the positive eigenspace of the principal symbol a⁰; the margin is
    the smallest singular value of π⁰ restricted to N₊ in orthonormal bases.
    """
    n = p.basis.fiber_dim
    if n % 2:
        raise ValueError("well-posedness needs even fiber dimension (rank N/2)")
    if p.basis.geometry == "circle":
        pi0 = projection_principal(p)
        a0 = principal_values(a, 1)
    else:
        pi0 = p.blocks[:1]
        a0 = a.blocks[:1]
    ranks = []
    margins = []
    rank_ok = True
    for side in range(pi0.shape[0]):
        sv = np.linalg.svd(pi0[side], compute_uv=False)
        r = int((sv > 1e-8).sum())
        ranks.append(r)
        if r != n // 2:
            rank_ok = False
            margins.append(0.0)
            continue
        w, v = np.linalg.eigh(0.5 * (a0[side] + a0[side].conj().T))
        qplus = v[:, w > 1e-12]
        if qplus.shape[1] != n // 2:
            rank_ok = False
            margins.append(0.0)
            continue
        u, _, _ = np.linalg.svd(pi0[side])
        qran = u[:, :r]
        m = qran.conj().T @ pi0[side] @ qplus
        margins.append(float(np.linalg.svd(m, compute_uv=False).min()))
    margin = min(margins)
    if len(ranks) == 1:
        ranks.append(ranks[0])
    return WellposednessReport(
        passed=rank_ok and margin >= delta,
        rank_ok=rank_ok,
        margin=margin,
        ranks=(ranks[0], ranks[1]),
        delta=delta,
    )


@dataclass(frozen=True)
class EllipticityGrid:
    rays: int = 17
    radii: int = 40
    r_min: float = 1e-3
    r_max: float = 1e3


@dataclass(frozen=True)
class EllipticityReport:
    """Outcome of the parameter-ellipticity scan.

    ``worst_point`` is (ξ, μ) with ξ ∈ {−1, +1} (or 0 on the point).
    """

    passed: bool
    min_singular_value: float
    worst_point: tuple[float, complex]
    theta: float
    delta: float
    a1: float
    sufficient_conditions: tuple[str, ...] = ()
    xi_zero_limit: float = 1.0


def _principal_data(pprime, p, b):
    n = pprime.basis.fiber_dim
    if pprime.basis.geometry == "point":
        pk = pprime.blocks[:1]
        pi = p.blocks[:1]
        bb = b.blocks[:1]
        return pk, np.eye(n) - pi, bb, np.array([0.0])
    p0 = principal_values(pprime, 2)
    pi0 = projection_principal(p)
    if b.order >= 1:
        b0 = principal_values(b, 1)
    else:
        b0 = np.zeros((2, n, n), dtype=complex)
    return p0, np.eye(n) - pi0, b0, np.array([-1.0, 1.0])


def _sigma_min_at(p0, pi2, b0, mu):
    """σ_min((p′⁰ + μ²)^{1/2} − π₂bπ₂) for an array of μ, shape (sides, len(mu))."""
    mu = np.atleast_1d(np.asarray(mu, dtype=complex))
    w, v = np.linalg.eigh(p0)
    out = np.empty((p0.shape[0], mu.size))
    for s in range(p0.shape[0]):
        root = np.sqrt(w[s][None, :] + (mu**2)[:, None])
        a = (v[s][None] * root[:, None, :]) @ v[s].conj().T[None]
        m = a - (pi2[s] @ b0[s] @ pi2[s])[None]
        out[s] = np.linalg.svd(m, compute_uv=False).min(axis=-1)
    return out


def _remark_conditions(p0, pi2, b0, theta, a1, eps=1e-3):
    conds = []
    b2 = pi2 @ b0 @ pi2
    herm = 0.5 * (b2 + _herm(b2))
    skew = 0.5 * (b2 - _herm(b2))
    scale = max(1.0, np.abs(b2).max())
    if np.abs(herm).max() <= 1e-12 * scale:
        conds.append("purely-imaginary")
    if np.abs(skew).max() <= 1e-12 * scale:
        top = max(np.linalg.eigvalsh(h).max() for h in herm)
        if top <= a1 - eps:
            conds.append("real-below-a1")
    if theta <= np.pi / 4:
        dist = a1
    else:
        dist = a1 * np.sqrt(abs(np.sin(2 * theta)))
    nrm = max(np.linalg.norm(x, 2) for x in b2)
    if nrm < dist:
        conds.append("norm-below-distance")
    return tuple(conds)


def check_parameter_ellipticity(
    pprime: TangentialOperator,
    p: Projection,
    b: TangentialOperator,
    theta: float,
    grid: EllipticityGrid | None = None,
    delta: float = 1e-6,
) -> EllipticityReport:
    """Scan σ_min((p′⁰+μ²)^{1/2} − π₂ʰbʰπ₂ʰ) over ξ = ±1 and μ ∈ Γ_θ ∪ {0}.

    Local minima found on the (ray, |μ|) grid are refined along their ray by
    bounded scalar minimisation in log|μ|, so isolated singular points between
    grid nodes are located rather than skipped.
    """
    grid = grid or EllipticityGrid()
    p0, pi2, b0, xis = _principal_data(pprime, p, b)
    # the sector |arg μ| < θ is open: scan the closed subsector just inside it
    edge = theta - OPEN_SECTOR_MARGIN
    angles = np.linspace(-edge, edge, grid.rays) if grid.rays > 1 else np.array([0.0])
    radii = np.logspace(np.log10(grid.r_min), np.log10(grid.r_max), grid.radii)

    best = (np.inf, 0.0, 0j)
    at_zero = _sigma_min_at(p0, pi2, b0, [0.0])[:, 0]
    for s, val in enumerate(at_zero):
        if val < best[0]:
            best = (float(val), float(xis[s]), 0j)

    for phi in angles:
        mus = radii * np.exp(1j * phi)
        vals = _sigma_min_at(p0, pi2, b0, mus)
        for s in range(vals.shape[0]):
            row = vals[s]
            for j in range(len(radii)):
                lo = row[j - 1] if j > 0 else np.inf
                hi = row[j + 1] if j + 1 < len(radii) else np.inf
                if row[j] <= lo and row[j] <= hi:
                    a_ = np.log(radii[max(j - 1, 0)])
                    b_ = np.log(radii[min(j + 1, len(radii) - 1)])

                    def f(lr, s=s, phi=phi):
                        return _sigma_min_at(
                            p0[s : s + 1], pi2[s : s + 1], b0[s : s + 1], [np.exp(lr + 1j * phi)]
                        )[0, 0]

                    res = minimize_scalar(f, bounds=(a_, b_), method="bounded", options={"xatol": 1e-13})
                    cand = [(row[j], np.log(radii[j])), (float(res.fun), float(res.x))]
                    val, lr = min(cand)
                    if val < best[0]:
                        best = (float(val), float(xis[s]), complex(np.exp(lr + 1j * phi)))

    a1 = float(np.sqrt(max(0.0, min(np.linalg.eigvalsh(x).min() for x in p0))))
    conds = _remark_conditions(p0, pi2, b0, theta, a1)
    return EllipticityReport(
        passed=bool(best[0] >= delta),
        min_singular_value=best[0],
        worst_point=(best[1], best[2]),
        theta=float(theta),
        delta=delta,
        a1=a1,
        sufficient_conditions=conds,
        xi_zero_limit=1.0,
    )


def check_principal_commute(p: Projection, pprime: TangentialOperator, tol: float = 1e-8) -> float:
    """max ‖[π⁰, p′⁰]‖ at ξ = ±1; raises if above ``tol``."""
    if p.basis.geometry == "point":
        return 0.0
    pi0 = projection_principal(p)
    p0 = principal_values(pprime, 2)
    err = float(np.abs(pi0 @ p0 - p0 @ pi0).max())
    if err > tol:
        raise ValueError(f"principal symbols of the projection and P' do not commute ({err:.2e})")
    return err


__all__ = [
    "Projection",
    "EllipticityGrid",
    "EllipticityReport",
    "WellposednessReport",
    "aps_projection",
    "constant_projection",
    "spectral_projection",
    "orthogonalize",
    "orthogonalize_inverse",
    "generating_operator",
    "default_c1",
    "perturb_projection",
    "rotate_projection",
    "check_sigma_compat",
    "check_wellposed",
    "check_parameter_ellipticity",
    "check_principal_commute",
    "projection_principal",
]
