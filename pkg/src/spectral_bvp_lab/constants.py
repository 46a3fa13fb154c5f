"""Measured normalization constants.

Both values were obtained by the tests in ``tests/test_constants.py`` and are
pinned here; the tests re-measure them and fail on drift.
"""

import math

RESIDUE_BRIDGE = 2 * math.pi
"""Quadrature residue divided by 2·Res_{s=0} of the mode-sum zeta function.

The residue integrates tr c₋₁ over x′ ∈ [0, 2π) with dx′ and no (2π)⁻¹, while
the mode-sum route (ord P′ times the residue at s = 0 of
Σ_k tr(W_k P′_k^{−s})) carries the Fourier normalization.  The ratio is
(2π)^{dim X′} = 2π on the circle.
"""

ALPHA_HEAT = -1.0 / (8.0 * math.pi**1.5)
"""Ratio a′₀(D₁) / res(ψΠ₂) for D₁ = ψ(∂_{x_n} + B₁) on circle boundaries.

Measured on Dirac-type scenarios with ψ = σ₁ and B₁ = A, using the
quadrature residue.  Equals −1/(4√π) divided by RESIDUE_BRIDGE.
"""
