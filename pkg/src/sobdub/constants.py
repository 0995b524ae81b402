"""Closed-form constants of the Sobolev-to-doubling iteration.

Plain-domain values overflow for moderate inputs, so every quantity also has
a base-2 logarithmic form; the plain form falls back to ``inf`` with a
:class:`ConstantsOverflow` warning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

__all__ = [
    "ConstantsOverflow",
    "DivergentIteration",
    "SobolevParams",
    "SubellipticParams",
    "K1",
    "doubling_constant",
    "log2_K1",
    "log2_doubling_constant",
    "log2_subelliptic_doubling_constant",
    "series_S",
    "subelliptic_beta",
    "subelliptic_doubling_constant",
]


class ConstantsOverflow(RuntimeWarning):
    pass


class DivergentIteration(ValueError):
    pass


@dataclass(frozen=True)
class SobolevParams:
    p: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p) and self.p >= 1):
            raise ValueError(f"p must satisfy 1 <= p < inf, got {self.p}")
        if not (math.isfinite(self.sigma) and self.sigma > 1):
            raise ValueError(f"sigma must satisfy 1 < sigma < inf, got {self.sigma}")

    @property
    def exponent(self) -> float:
        """p * sigma / (sigma - 1), the power of the Sobolev constant in C_D."""
        return self.p * self.sigma / (self.sigma - 1.0)

    @property
    def sigma_prime(self) -> float:
        return self.sigma / (self.sigma - 1.0)


@dataclass(frozen=True)
class SubellipticParams:
    p: float
    sigma: float
    s: float
    K: float = 1.0
    N: float = 2.0
    nu: float = 0.5

    def __post_init__(self) -> None:
        SobolevParams(self.p, self.sigma)
        if not self.K >= 0:
            raise ValueError("K must be nonnegative")
        if not self.N > 1:
            raise ValueError("N must exceed 1")
        if not 0 < self.nu < 1:
            raise ValueError("nu must lie in (0, 1)")
        if not self.s > self.p * self.sigma / (self.sigma - 1.0):
            raise DivergentIteration(
                f"beta <= 1: iteration diverges (need s > p*sigma' = {self.p * self.sigma / (self.sigma - 1.0):g}, got s = {self.s:g})"
            )

    @property
    def sobolev(self) -> SobolevParams:
        return SobolevParams(self.p, self.sigma)

    @property
    def beta(self) -> float:
        return subelliptic_beta(self)


def _check_sigma(sigma: float) -> None:
    if not (math.isfinite(sigma) and sigma > 1):
        raise ValueError(f"sigma must satisfy 1 < sigma < inf, got {sigma}")


def series_S(sigma: float) -> float:
    """Sum over j >= 1 of (j + 4) / sigma**j, i.e. (5 sigma - 4) / (sigma - 1)**2."""
    _check_sigma(sigma)
    return (5.0 * sigma - 4.0) / (sigma - 1.0) ** 2


def log2_K1(params: SobolevParams) -> float:
    return params.sigma * params.p * series_S(params.sigma)


def _pow2(log2_value: float, what: str) -> float:
    if log2_value > 1023.0:
        warnings.warn(f"{what} overflows double precision; use the log2 form", ConstantsOverflow, stacklevel=3)
        return math.inf
    return 2.0**log2_value


def K1(params: SobolevParams) -> float:
    return _pow2(log2_K1(params), "K1")


def log2_doubling_constant(params: SobolevParams, c: float) -> float:
    if not c > 0:
        raise ValueError("Sobolev-type constant must be positive")
    return params.exponent * math.log2(c) + log2_K1(params)


def doubling_constant(params: SobolevParams, c: float) -> float:
    """C_D = c**(p sigma / (sigma - 1)) * K1(sigma, p)."""
    return _pow2(log2_doubling_constant(params, c), "doubling constant")


def subelliptic_beta(params: SubellipticParams) -> float:
    beta = params.sigma * (1.0 - params.p / params.s)
    if not beta > 1:
        raise DivergentIteration("beta <= 1: iteration diverges")
    return beta


def log2_subelliptic_doubling_constant(params: SubellipticParams, c: float | None = None) -> float:
    """log2 of c**(p sigma/(beta-1)) * N**(p sigma beta/(beta-1)**2), c defaulting to K + 1."""
    beta = subelliptic_beta(params)
    c = params.K + 1.0 if c is None else c
    ps = params.p * params.sigma
    return ps / (beta - 1.0) * math.log2(c) + ps * beta / (beta - 1.0) ** 2 * math.log2(params.N)


def subelliptic_doubling_constant(params: SubellipticParams, c: float | None = None) -> float:
    return _pow2(log2_subelliptic_doubling_constant(params, c), "subelliptic doubling constant")
