"""Model boundary geometries and mode-blocked tangential operators.

The boundary is either a point or the circle S¹ with the trivial bundle ℂᴺ.
On the circle an operator acts diagonally on Fourier modes e^{ikθ}, so it is
stored as one N×N block per mode |k| ≤ K.  Named families also carry a
classical symbol expansion sampled on a uniform x′ grid at ξ = ±1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial
from typing import Callable, Iterable, Mapping

import numpy as np

X_GRID = 256
"""Number of uniform quadrature points on the circle."""

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
DIRAC_SIGMA = np.array([[0, -1], [1, 0]], dtype=complex)
"""The bundle morphism σ with σ² = −I anticommuting with DiracPair blocks."""

HERMITIAN_TOL = 1e-12


def x_grid() -> np.ndarray:
    return 2 * np.pi * np.arange(X_GRID) / X_GRID


@dataclass(frozen=True)
class ModeBasis:
    """Fourier mode basis of the boundary.

    Parameters
    ----------
    geometry : {"point", "circle"}
    fiber_dim : int
        Fiber dimension N.
    cutoff : int
        Modes |k| ≤ cutoff are kept on the circle; ignored for the point.
    """

    geometry: str
    fiber_dim: int
    cutoff: int = 0

    def __post_init__(self):
        if self.geometry not in ("point", "circle"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.fiber_dim < 1:
            raise ValueError("fiber_dim must be positive")
        if self.geometry == "point" and self.cutoff != 0:
            object.__setattr__(self, "cutoff", 0)
        if self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.cutoff, self.cutoff + 1)

    @property
    def size(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def boundary_dim(self) -> int:
        return 0 if self.geometry == "point" else 1

    def index(self, k: int) -> int:
        if abs(k) > self.cutoff:
            raise IndexError(f"mode {k} outside |k| <= {self.cutoff}")
        return int(k) + self.cutoff

    def with_cutoff(self, cutoff: int) -> "ModeBasis":
        return ModeBasis(self.geometry, self.fiber_dim, cutoff)


# ---------------------------------------------------------------------------
# symbols


def _as_component(value, n: int) -> np.ndarray:
    """Broadcast a component sample to shape (X_GRID, N, N)."""
    arr = np.asarray(value, dtype=complex)
    if arr.ndim == 0:
        arr = arr * np.eye(n)
    return np.broadcast_to(arr, (X_GRID, n, n)).copy()


def _dx(values: np.ndarray, order: int) -> np.ndarray:
    """Spectral x′-derivative along axis 1 of a (2, X, N, N) sample array."""
    if order == 0:
        return values
    freq = np.fft.fftfreq(X_GRID, d=1.0 / X_GRID)
    mult = (1j * freq) ** order
    spec = np.fft.fft(values, axis=1)
    return np.fft.ifft(spec * mult[None, :, None, None], axis=1)


@dataclass(frozen=True, eq=False)
class SymbolExpansion:
    """Classical symbol Σ_d c_d(x′, ξ′) with c_d homogeneous of degree d.

    Each component is stored at ξ = −1 and ξ = +1 on the x′ grid, shape
    (2, X_GRID, N, N) with axis 0 ordered (−1, +1).  Homogeneity recovers
    c_d(x′, ξ′) = |ξ′|^d c_d(x′, sign ξ′).
    """

    fiber_dim: int
    degrees: tuple[int, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.degrees) != len(self.values):
            raise ValueError("degrees and values differ in length")
        if any(a <= b for a, b in zip(self.degrees, self.degrees[1:])):
            raise ValueError("degrees must strictly decrease")
        shape = (2, X_GRID, self.fiber_dim, self.fiber_dim)
        for v in self.values:
            if v.shape != shape:
                raise ValueError(f"component has shape {v.shape}, expected {shape}")

    @classmethod
    def from_components(
        cls,
        fiber_dim: int,
        components: Iterable[tuple[int, Callable | tuple]],
    ) -> "SymbolExpansion":
        """Build from (degree, component) pairs.

        A component is either a callable ``f(x, xi)`` returning an N×N matrix
        or an (X, N, N) stack, or a pair ``(value_at_minus, value_at_plus)``
        of constant matrices (scalars mean multiples of the identity).
        """
        acc: dict[int, np.ndarray] = {}
        x = x_grid()
        for deg, comp in components:
            if callable(comp):
                vals = [_as_component(comp(x, xi), fiber_dim) for xi in (-1, 1)]
            else:
                vals = [_as_component(c, fiber_dim) for c in comp]
            arr = np.stack(vals)
            acc[deg] = acc.get(deg, 0) + arr
        return cls._from_dict(fiber_dim, acc)

    @classmethod
    def _from_dict(cls, fiber_dim: int, acc: Mapping[int, np.ndarray]) -> "SymbolExpansion":
        degs = sorted(acc, reverse=True)
        return cls(fiber_dim, tuple(degs), tuple(np.asarray(acc[d], dtype=complex) for d in degs))

    def _dict(self) -> dict[int, np.ndarray]:
        return dict(zip(self.degrees, self.values))

    def component(self, degree: int) -> np.ndarray:
        d = self._dict()
        if degree in d:
            return d[degree]
        n = self.fiber_dim
        return np.zeros((2, X_GRID, n, n), dtype=complex)

    @property
    def leading_degree(self) -> int:
        return self.degrees[0] if self.degrees else -(10**9)

    def evaluate(self, xi: float, x_index: int = 0) -> np.ndarray:
        """Full symbol Σ_d |ξ|^d c_d(x_j, sign ξ) at one grid point."""
        if xi == 0:
            raise ValueError("homogeneous components are singular at xi = 0")
        side = 1 if xi > 0 else 0
        total = np.zeros((self.fiber_dim, self.fiber_dim), dtype=complex)
        for d, v in zip(self.degrees, self.values):
            total += abs(xi) ** d * v[side, x_index]
        return total

    def truncate(self, min_degree: int) -> "SymbolExpansion":
        return self._from_dict(
            self.fiber_dim, {d: v for d, v in self._dict().items() if d >= min_degree}
        )

    def __add__(self, other: "SymbolExpansion") -> "SymbolExpansion":
        acc = self._dict()
        for d, v in other._dict().items():
            acc[d] = acc.get(d, 0) + v
        return self._from_dict(self.fiber_dim, acc)

    def __neg__(self) -> "SymbolExpansion":
        return self.scale(-1.0)

    def __sub__(self, other: "SymbolExpansion") -> "SymbolExpansion":
        return self + (-other)

    def scale(self, c: complex) -> "SymbolExpansion":
        return SymbolExpansion(self.fiber_dim, self.degrees, tuple(c * v for v in self.values))

    def left_multiply(self, m: np.ndarray) -> "SymbolExpansion":
        """Symbol of M∘op for an x′-independent morphism M."""
        m = np.asarray(m, dtype=complex)
        return SymbolExpansion(self.fiber_dim, self.degrees, tuple(m @ v for v in self.values))

    def compose(self, other: "SymbolExpansion", min_degree: int = -1) -> "SymbolExpansion":
        """Truncated composition a∘b ~ Σ_α (−i)^α/α! ∂_ξ^α a ∂_x^α b.

        ∂_ξ^α of a degree-d component is homogeneous of degree d − α with
        values d(d−1)…(d−α+1)·(±1)^α·c_d(x, ±1).
        """
        acc: dict[int, np.ndarray] = {}
        sgn = np.array([-1.0, 1.0])[:, None, None, None]
        for da, va in zip(self.degrees, self.values):
            for db, vb in zip(other.degrees, other.values):
                alpha = 0
                while da + db - alpha >= min_degree:
                    falling = np.prod([da - j for j in range(alpha)]) if alpha else 1.0
                    if falling != 0:
                        dxi_a = falling * sgn**alpha * va
                        dx_b = _dx(vb, alpha)
                        coeff = (-1j) ** alpha / factorial(alpha)
                        term = coeff * (dxi_a @ dx_b)
                        deg = da + db - alpha
                        acc[deg] = acc.get(deg, 0) + term
                    alpha += 1
        return self._from_dict(self.fiber_dim, acc)

    def parity(self, degree: int, tol: float = 1e-13) -> str:
        """Return 'even', 'odd', 'zero' or 'mixed' for the ξ-parity of a component."""
        v = self.component(degree)
        scale = max(np.abs(v).max(), 1.0)
        if np.abs(v).max() <= tol:
            return "zero"
        if np.abs(v[0] - v[1]).max() <= tol * scale:
            return "even"
        if np.abs(v[0] + v[1]).max() <= tol * scale:
            return "odd"
        return "mixed"


def parity_vanishes(s: SymbolExpansion, boundary_dim: int = 1) -> bool:
    """True when the residue density vanishes by ξ-parity alone.

    With even-odd parity (even degrees odd in ξ, odd degrees even in ξ) the
    component of degree −boundary_dim is odd in ξ when boundary_dim is even;
    with the opposite (differential) parity it is odd when boundary_dim is odd.
    Either way it integrates to zero over the cosphere.
    """
    target = -boundary_dim
    pars = {d: s.parity(d) for d in s.degrees}
    even_odd = all(
        p in ("zero", "odd" if d % 2 == 0 else "even") for d, p in pars.items()
    )
    diff_like = all(
        p in ("zero", "even" if d % 2 == 0 else "odd") for d, p in pars.items()
    )
    if even_odd and target % 2 == 0:
        return True
    if diff_like and target % 2 != 0:
        return True
    return s.parity(target) in ("odd", "zero")


def noncommutative_residue(s: SymbolExpansion | None, use_parity: bool = True) -> float:
    """Noncommutative residue on the circle.

    Integrates Σ_{ξ=±1} tr c_{−1}(x′, ξ) over x′ ∈ [0, 2π) with the uniform
    trapezoid rule.  No (2π)^{-1} factor is applied; see
    ``constants.RESIDUE_BRIDGE`` for the relation to the zeta-residue route.
    """
    if s is None:
        raise ValueError("operator carries no symbol expansion")
    if -1 not in s.degrees:
        return 0.0
    if use_parity and parity_vanishes(s, 1):
        return 0.0
    c = s.component(-1)
    tr = np.trace(c, axis1=-2, axis2=-1)  # (2, X)
    val = (2 * np.pi / X_GRID) * tr.sum()
    return float(val.real)


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class EigenBranch:
    """Large-|k| eigenvalue branch used to continue mode sums past the cutoff.

    For modes k with sign(k) == side the branch eigenvalue is
    ``sign * (|k| + shift)`` (kind "linear") or ``sign * sqrt(k² + shift)``
    (kind "quadratic").
    """

    kind: str
    side: int
    sign: int
    shift: float

    def magnitude(self, k: np.ndarray) -> np.ndarray:
        k = np.abs(np.asarray(k, dtype=float))
        if self.kind == "linear":
            return k + self.shift
        if self.kind == "quadratic":
            return np.sqrt(k**2 + self.shift)
        raise ValueError(f"unknown branch kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class TangentialOperator:
    """Mode-blocked operator on the boundary.

    Attributes
    ----------
    basis : ModeBasis
    blocks : ndarray, shape (2K+1, N, N)
        Block for mode k stored at position k + K.
    order : int
    selfadjoint, nonnegative : bool
    symbol : SymbolExpansion or None
    branches : tuple of EigenBranch
        Eigenvalue asymptotics beyond the cutoff (named families only).
    family : dict
        Descriptor the operator was built from, if any.
    """

    basis: ModeBasis
    blocks: np.ndarray
    order: int
    selfadjoint: bool = False
    nonnegative: bool = False
    symbol: SymbolExpansion | None = None
    branches: tuple[EigenBranch, ...] = ()
    family: Mapping = field(default_factory=dict)

    def __post_init__(self):
        b = np.array(self.blocks, dtype=complex)
        n = self.basis.fiber_dim
        if b.shape != (self.basis.size, n, n):
            raise ValueError(
                f"blocks have shape {b.shape}, expected {(self.basis.size, n, n)}"
            )
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)
        if self.selfadjoint:
            err = np.abs(b - b.conj().transpose(0, 2, 1)).max(initial=0.0)
            if err > HERMITIAN_TOL * max(1.0, np.abs(b).max(initial=0.0)):
                raise ValueError(f"selfadjoint flag set but blocks deviate by {err:.2e}")
        if self.nonnegative:
            if not self.selfadjoint:
                raise ValueError("nonnegative flag requires selfadjoint")
            lo = np.linalg.eigvalsh(b).min()
            if lo < -1e-10 * max(1.0, np.abs(b).max()):
                raise ValueError(f"nonnegative flag set but spectrum reaches {lo:.3e}")

    @property
    def fiber_dim(self) -> int:
        return self.basis.fiber_dim

    def block(self, k: int) -> np.ndarray:
        return self.blocks[self.basis.index(k)]

    def eigvals(self) -> np.ndarray:
        """Per-mode eigenvalues, shape (2K+1, N); requires selfadjoint."""
        if not self.selfadjoint:
            raise ValueError("eigenvalues requested for a non-selfadjoint operator")
        return np.linalg.eigvalsh(self.blocks)

    def _like(self, blocks, order=None, selfadjoint=False, nonnegative=False, symbol=None):
        return TangentialOperator(
            self.basis,
            blocks,
            self.order if order is None else order,
            selfadjoint=selfadjoint,
            nonnegative=nonnegative,
            symbol=symbol,
        )

    def __matmul__(self, other: "TangentialOperator") -> "TangentialOperator":
        _check_basis(self, other)
        sym = None
        if self.symbol is not None and other.symbol is not None:
            sym = self.symbol.compose(other.symbol, min_degree=_SYMBOL_DEPTH)
        return self._like(self.blocks @ other.blocks, self.order + other.order, symbol=sym)

    def __add__(self, other: "TangentialOperator") -> "TangentialOperator":
        _check_basis(self, other)
        sym = None
        if self.symbol is not None and other.symbol is not None:
            sym = self.symbol + other.symbol
        sa = self.selfadjoint and other.selfadjoint
        return self._like(
            self.blocks + other.blocks, max(self.order, other.order), selfadjoint=sa, symbol=sym
        )

    def __neg__(self) -> "TangentialOperator":
        flipped = tuple(replace(b, sign=-b.sign) for b in self.branches)
        return replace(self.scale(-1.0), branches=flipped)

    def __sub__(self, other: "TangentialOperator") -> "TangentialOperator":
        return self + (-other)

    def scale(self, c: complex) -> "TangentialOperator":
        sa = self.selfadjoint and np.isreal(c)
        sym = self.symbol.scale(c) if self.symbol is not None else None
        return self._like(c * self.blocks, selfadjoint=sa, symbol=sym)

    def adjoint(self) -> "TangentialOperator":
        return self._like(self.blocks.conj().transpose(0, 2, 1), selfadjoint=self.selfadjoint)


_SYMBOL_DEPTH = -6


def _check_basis(a, b):
    if a.basis != b.basis:
        raise ValueError(f"basis mismatch: {a.basis} vs {b.basis}")


def mode_matrix(op: TangentialOperator, k: int) -> np.ndarray:
    """Return the N×N block of ``op`` at mode k."""
    return op.block(k).copy()


def identity_operator(basis: ModeBasis) -> TangentialOperator:
    n = basis.fiber_dim
    blocks = np.broadcast_to(np.eye(n), (basis.size, n, n))
    sym = None
    if basis.geometry == "circle":
        sym = SymbolExpansion.from_components(n, [(0, (1.0, 1.0))])
    return TangentialOperator(
        basis, blocks, 0, selfadjoint=True, nonnegative=True, symbol=sym, family={"family": "Identity"}
    )


def morphism(basis: ModeBasis, m) -> TangentialOperator:
    """Order-zero operator given by a constant N×N matrix."""
    m = np.asarray(m, dtype=complex)
    n = basis.fiber_dim
    if m.shape != (n, n):
        raise ValueError(f"morphism has shape {m.shape}, fiber dimension is {n}")
    sa = bool(np.allclose(m, m.conj().T, atol=HERMITIAN_TOL))
    sym = None
    if basis.geometry == "circle":
        sym = SymbolExpansion.from_components(n, [(0, (m, m))])
    return TangentialOperator(
        basis,
        np.broadcast_to(m, (basis.size, n, n)),
        0,
        selfadjoint=sa,
        symbol=sym,
        family={"family": "Morphism"},
    )


def dirac_sigma(basis: ModeBasis) -> TangentialOperator:
    """The morphism σ = [[0, −1], [1, 0]] paired with DiracPair."""
    if basis.fiber_dim != 2:
        raise ValueError("sigma is defined for fiber dimension 2")
    return morphism(basis, DIRAC_SIGMA)


def tangential_derivative(basis: ModeBasis, beta: complex = 1.0) -> TangentialOperator:
    """β·D_θ with D_θ = −i∂_θ, so the block at mode k is βk·I."""
    if basis.geometry != "circle":
        raise ValueError("tangential derivative needs the circle")
    n = basis.fiber_dim
    k = basis.modes.astype(float)
    blocks = beta * k[:, None, None] * np.eye(n)
    sym = SymbolExpansion.from_components(n, [(1, (-beta, beta))])
    return TangentialOperator(
        basis,
        blocks,
        1,
        selfadjoint=bool(np.isreal(beta)),
        symbol=sym,
        family={"family": "TangentialDerivative", "beta": beta},
    )


def build_model_operator(spec: Mapping, basis: ModeBasis | None = None, cutoff: int | None = None) -> TangentialOperator:
    """Instantiate a named model family.

    Parameters
    ----------
    spec : mapping
        ``{"family": name, **params}`` with name one of ScalarShift{a},
        DiracPair{m}, MatrixPoint{M}, Square{of}, Morphism{M}.
    basis : ModeBasis, optional
        Required for Morphism; otherwise built from ``cutoff``.
    cutoff : int, optional
        Mode cutoff K for circle families (default 64).
    """
    fam = spec.get("family")
    if fam == "Square":
        inner = spec["of"]
        if not isinstance(inner, TangentialOperator):
            inner = build_model_operator(inner, basis=basis, cutoff=cutoff)
        return square(inner)
    if fam == "MatrixPoint":
        m = np.atleast_2d(np.asarray(spec["M"], dtype=complex))
        if not np.allclose(m, m.conj().T, atol=HERMITIAN_TOL):
            raise ValueError("MatrixPoint requires a Hermitian matrix")
        pb = ModeBasis("point", m.shape[0])
        if basis is not None and basis.fiber_dim != m.shape[0]:
            raise ValueError("fiber-dimension mismatch")
        return TangentialOperator(pb, m[None], 1, selfadjoint=True, family=dict(spec))
    if fam == "Morphism":
        if basis is None:
            raise ValueError("Morphism needs an explicit basis")
        return morphism(basis, spec["M"])

    if basis is None:
        n = {"ScalarShift": 1, "DiracPair": 2}.get(fam)
        if n is None:
            raise ValueError(f"unknown model family {fam!r}")
        basis = ModeBasis("circle", n, 64 if cutoff is None else cutoff)
    k = basis.modes.astype(float)

    if fam == "ScalarShift":
        if basis.fiber_dim != 1:
            raise ValueError("fiber-dimension mismatch: ScalarShift has N = 1")
        a = float(spec.get("a", 0.0))
        blocks = (k + a)[:, None, None]
        comps = [(1, (-1.0, 1.0))]
        if a != 0:
            comps.append((0, (a, a)))
        sym = SymbolExpansion.from_components(1, comps)
        branches = (
            EigenBranch("linear", +1, +1, a),
            EigenBranch("linear", -1, -1, -a),
        )
        return TangentialOperator(
            basis, blocks, 1, selfadjoint=True, symbol=sym, branches=branches, family=dict(spec)
        )
    if fam == "DiracPair":
        if basis.fiber_dim != 2:
            raise ValueError("fiber-dimension mismatch: DiracPair has N = 2")
        m = float(spec.get("m", 0.0))
        blocks = k[:, None, None] * SIGMA3 + m * SIGMA1
        comps = [(1, (-SIGMA3, SIGMA3))]
        if m != 0:
            comps.append((0, (m * SIGMA1, m * SIGMA1)))
        sym = SymbolExpansion.from_components(2, comps)
        branches = tuple(
            EigenBranch("quadratic", side, sign, m * m) for side in (1, -1) for sign in (1, -1)
        )
        return TangentialOperator(
            basis, blocks, 1, selfadjoint=True, symbol=sym, branches=branches, family=dict(spec)
        )
    raise ValueError(f"unknown model family {fam!r}")


def square(op: TangentialOperator) -> TangentialOperator:
    """P′ = A² for a selfadjoint A (nonnegative by construction)."""
    blocks = op.blocks @ op.blocks
    blocks = 0.5 * (blocks + blocks.conj().transpose(0, 2, 1))
    sym = None
    if op.symbol is not None:
        sym = op.symbol.compose(op.symbol, min_degree=_SYMBOL_DEPTH)
    return TangentialOperator(
        op.basis,
        blocks,
        2 * op.order,
        selfadjoint=op.selfadjoint,
        nonnegative=op.selfadjoint,
        symbol=sym,
        family={"family": "Square", "of": dict(op.family)},
    )


def principal_values(op, order: int) -> np.ndarray:
    """Principal symbol at ξ = −1, +1 (x′ = 0), shape (2, N, N).

    Read from the symbol expansion when one is attached, otherwise estimated
    from the outermost mode blocks as block(±K)/K^order.
    """
    sym = getattr(op, "symbol", None)
    n = op.basis.fiber_dim
    if sym is not None:
        if sym.leading_degree > order:
            raise ValueError(f"symbol has degree {sym.leading_degree} above order {order}")
        return sym.component(order)[:, 0].copy()
    if op.basis.geometry != "circle" or op.basis.cutoff == 0:
        raise ValueError("no symbol data: need a symbol expansion or circle modes")
    kk = op.basis.cutoff
    lo = op.blocks[0] / float(kk) ** order
    hi = op.blocks[-1] / float(kk) ** order
    return np.stack([lo, hi]).reshape(2, n, n)


__all__ = [
    "X_GRID",
    "SIGMA1",
    "SIGMA2",
    "SIGMA3",
    "DIRAC_SIGMA",
    "ModeBasis",
    "SymbolExpansion",
    "EigenBranch",
    "TangentialOperator",
    "build_model_operator",
    "mode_matrix",
    "noncommutative_residue",
    "parity_vanishes",
    "identity_operator",
    "morphism",
    "dirac_sigma",
    "tangential_derivative",
    "square",
    "principal_values",
    "x_grid",
]
