"""Rational reduction kernels on the sphere and their formal expansions.

The kernel family is f_{n,m}(z, w) = (z^-n / m!) (d/dw)^m (w^n / (z - w)).
Differentiation is carried out once per (n, m) over exact rationals on the
term basis c * w^a / (z - w)^b and cached; evaluation and the Taylor
expansion in w (region |z| > |w|) both read off that closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .errors import DomainError, PoleError
from .series import TruncatedSeries

__all__ = [
    "RationalKernelSpec",
    "f_rational",
    "f_rational_expansion",
    "resummed_expansion",
]


@dataclass(frozen=True)
class RationalKernelSpec:
    """Kernel indices: mode number n and derivative order m, both >= 0."""

    n: int
    m: int

    def __post_init__(self) -> None:
        if self.n < 0 or self.m < 0:
            raise DomainError("kernel indices must be nonnegative")


@lru_cache(maxsize=None)
def _kernel_terms(n: int, m: int) -> tuple:
    """(d/dw)^m of w^n/(z-w) as ((a, b, coeff), ...) for coeff*w^a/(z-w)^b.

    Every term keeps a - b = n - m - 1; coefficients are exact.
    """
    if m == 0:
        return ((n, 1, Fraction(1)),)
    acc: dict[tuple[int, int], Fraction] = {}
    for a, b, c in _kernel_terms(n, m - 1):
        # d/dw [w^a/(z-w)^b] = a w^(a-1)/(z-w)^b + b w^a/(z-w)^(b+1)
        if a > 0:
            key = (a - 1, b)
            acc[key] = acc.get(key, Fraction(0)) + a * c
        key = (a, b + 1)
        acc[key] = acc.get(key, Fraction(0)) + b * c
    return tuple((a, b, c) for (a, b), c in sorted(acc.items()) if c != 0)


def f_rational(spec: RationalKernelSpec, z, w):
    """Evaluate f_{n,m}(z, w) from the cached closed form.

    Accepts any field elements (complex, Fraction, symbols) supporting
    the arithmetic; exactness is preserved for exact inputs.
    """
    n, m = spec.n, spec.m
    if z == w:
        raise PoleError("f_rational pole at z = w")
    if n > 0 and z == 0:
        raise PoleError("f_rational pole at z = 0")
    front = Fraction(1, math.factorial(m))
    total = 0
    diff = z - w
    for a, b, c in _kernel_terms(n, m):
        total = total + c * w**a / diff**b
    return front * total * z ** (-n) if n else front * total


def f_rational_expansion(spec: RationalKernelSpec, order: int) -> TruncatedSeries:
    """Taylor expansion of f_{n,m} in w for |z| > |w|.

    Returns a TruncatedSeries in w whose coefficients are single-term
    TruncatedSeries in z with exact Fraction values; the coefficient of
    w^e always sits at z-exponent -e-m-1.  Exponents below max(0, n-m)
    vanish and `order` further coefficients are retained.
    """
    if order < 1:
        raise DomainError("expansion order must be positive")
    n, m = spec.n, spec.m
    front = Fraction(1, math.factorial(m))
    lowest = max(0, n - m)
    trunc = lowest + order
    w_terms: dict[int, TruncatedSeries] = {}
    for e in range(lowest, trunc):
        z_exp = -e - m - 1
        coeff = Fraction(0)
        for a, b, c in _kernel_terms(n, m):
            j = e - a
            if j < 0:
                continue
            # 1/(z-w)^b = z^-b sum_j C(b-1+j, j) (w/z)^j
            coeff += front * c * math.comb(b - 1 + j, j)
        if coeff != 0:
            w_terms[e] = TruncatedSeries.from_dict({z_exp: coeff}, z_exp + 1)
    return TruncatedSeries.from_dict(w_terms, trunc)


def resummed_expansion(series: TruncatedSeries, z: complex, w: complex) -> complex:
    """Numeric value of a w-series with z-series coefficients.

    Sums coefficient-wise, so nested coefficients of different truncation
    depth all contribute (plain series addition would cut to the shallowest).
    """
    total = 0j
    for e, c in series.items():
        if isinstance(c, TruncatedSeries):
            total += complex(c.evaluate(z)) * w**e
        elif c != 0:
            total += complex(c) * w**e
    return total
