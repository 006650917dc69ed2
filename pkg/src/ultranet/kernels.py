"""Radial jump kernels on a basin subtree and their spectral data.

A kernel is the radial profile w of a jump intensity w(|x - y|_p): a
finite list of level values w_j = w(p^{-j}), zero beyond J_max. Finite
depth keeps every downstream discretization exact instead of truncated.

Two derived numbers drive everything else:

  gamma  = sum_j (1 - 1/p) p^{-j} w_j        (total mass over the subtree)
  lam_r  = -(1 - 1/p) sum_{j=1}^{-r} p^{-j} w_j - p^{r-1} w_{-r}

lam_r is the eigenvalue of the within-basin jump operator on any
scale-r wavelet; the symbol value at radius p^{1-r} is lam_r + gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UsageError, ValidationError
from .padic import validate_prime


@dataclass(frozen=True)
class RadialKernel:
    p: int
    levels: tuple[float, ...]

    def __post_init__(self):
        validate_prime(self.p)
        if len(self.levels) < 1:
            raise ValidationError("a kernel needs at least one level value")
        for w in self.levels:
            if not (math.isfinite(w) and w >= 0):
                raise ValidationError(f"kernel level {w!r} must be finite and >= 0")

    @property
    def j_max(self) -> int:
        return len(self.levels)

    def level(self, j: int) -> float:
        """w(p^{-j}) for j >= 1, zero beyond the stored depth."""
        if j < 1:
            raise UsageError(f"level index must be >= 1, got {j}")
        return self.levels[j - 1] if j <= self.j_max else 0.0


@dataclass(frozen=True)
class KernelSymbol:
    gamma: float
    lam: dict  # r -> lam_r, for r in -R .. -1


def kernel_mass(k: RadialKernel) -> float:
    """Total mass gamma: each level-j sphere has volume (1 - 1/p) p^{-j}."""
    p = k.p
    return (1 - 1 / p) * sum(p ** (-j) * w for j, w in enumerate(k.levels, start=1))


def eigenvalue(k: RadialKernel, r: int) -> float:
    """Eigenvalue lam_r of the jump operator on scale-r wavelets."""
    if r > -1:
        raise UsageError(f"scale index must be <= -1, got r={r}")
    p = k.p
    # The j = -r term of the sum combines with the boundary term into
    # exactly -w_{-r} p^r, so the r = -1 value is a single division.
    tail = sum(p ** (-j) * k.level(j) for j in range(1, -r))
    return -(1 - 1 / p) * tail - k.level(-r) / p ** (-r)


def symbol_value(k: RadialKernel, r: int) -> float:
    """Symbol at radius p^{1-r}: eigenvalue plus the total mass."""
    return eigenvalue(k, r) + kernel_mass(k)


def kernel_symbol(k: RadialKernel, R: int) -> KernelSymbol:
    if R < 1:
        raise UsageError(f"resolution must be >= 1, got R={R}")
    return KernelSymbol(
        gamma=kernel_mass(k),
        lam={r: eigenvalue(k, r) for r in range(-1, -R - 1, -1)},
    )


def arrhenius_kernel(p: int, barriers, kT: float) -> RadialKernel:
    """Kernel levels exp(-U_j / kT) from a ladder of barrier heights."""
    if not kT > 0:
        raise UsageError(f"temperature factor must be > 0, got kT={kT}")
    return RadialKernel(p, tuple(math.exp(-u / kT) for u in barriers))
