"""Truncated series substrate, exact Bernoulli numbers and resummation helpers.

Everything downstream (elliptic kernels, sewing matrices, the reduction
engine) is built on the small toolkit in this module: a single-nome
truncated Laurent series type, exact rational Bernoulli numbers, the
stable two-branch geometric resummation, and circle-sampling Laurent
coefficient extraction used by the identity suites.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError, PoleError, UnitCircleError

__all__ = [
    "ToleranceConfig",
    "DEFAULT_TOLERANCES",
    "TruncatedSeries",
    "series_mul",
    "bernoulli",
    "geometric_resum",
    "laurent_coefficients",
    "cauchy_derivative",
    "require_finite",
]


@dataclass(frozen=True)
class ToleranceConfig:
    """Numeric policy shared by the kernel evaluators.

    abs_tol and rel_tol are the generic absolute/relative thresholds,
    q_order bounds retained q-degrees in lattice sums, matrix_size is the
    default truncation N of the sewing/Schottky moment matrices.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-9
    q_order: int = 50
    matrix_size: int = 16

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("tolerances must be positive")
        if self.q_order < 4:
            raise DomainError("q_order must be at least 4")
        if self.matrix_size < 2:
            raise DomainError("matrix_size must be at least 2")


DEFAULT_TOLERANCES = ToleranceConfig()


def require_finite(value: complex, where: str = "evaluation") -> complex:
    """Raise DomainError instead of letting NaN/Inf escape an operation."""
    if isinstance(value, complex):
        ok = math.isfinite(value.real) and math.isfinite(value.imag)
    else:
        ok = math.isfinite(value)
    if not ok:
        raise DomainError(f"non-finite value produced in {where}")
    return value


def _is_zero(c) -> bool:
    if isinstance(c, TruncatedSeries):
        return c.is_zero()
    return c == 0


class TruncatedSeries:
    """Laurent series in one formal nome, known below a truncation order.

    Coefficients live at exponents ``lowest .. trunc-1``; exponents at or
    above ``trunc`` are unknown rather than zero.  Coefficients may be any
    ring elements with +, * and ==0 (complex, Fraction, or nested series),
    so callers can build series-of-series for two-variable expansions.
    """

    __slots__ = ("lowest", "coeffs", "trunc")

    def __init__(self, lowest: int, coeffs, trunc: int):
        coeffs = tuple(coeffs)
        if trunc - lowest != len(coeffs):
            raise DomainError("coefficient count must equal trunc - lowest")
        # Normalize: outright zeros at the bottom only raise `lowest`,
        # they never touch the truncation order.
        while coeffs and _is_zero(coeffs[0]):
            coeffs = coeffs[1:]
            lowest += 1
        if not coeffs:
            lowest = trunc
        self.lowest = lowest
        self.coeffs = coeffs
        self.trunc = trunc

    # -- constructors -------------------------------------------------

    @classmethod
    def from_dict(cls, terms: dict, trunc: int) -> "TruncatedSeries":
        if terms:
            lo = min(terms)
            if lo >= trunc:
                lo = trunc
        else:
            lo = trunc
        coeffs = [terms.get(e, 0) for e in range(lo, trunc)]
        return cls(lo, coeffs, trunc)

    @classmethod
    def constant(cls, value, trunc: int) -> "TruncatedSeries":
        if trunc <= 0:
            return cls(trunc, (), trunc)
        return cls.from_dict({0: value}, trunc)

    @classmethod
    def nome_power(cls, exponent: int, trunc: int, value=1) -> "TruncatedSeries":
        return cls.from_dict({exponent: value}, trunc)

    # -- basic queries ------------------------------------------------

    def is_zero(self) -> bool:
        return all(_is_zero(c) for c in self.coeffs)

    def coefficient(self, exponent: int):
        """Coefficient at a known exponent; asking above trunc is an error."""
        if exponent >= self.trunc:
            raise DomainError("exponent at or above the truncation order")
        if exponent < self.lowest:
            return 0
        return self.coeffs[exponent - self.lowest]

    def items(self):
        for i, c in enumerate(self.coeffs):
            yield self.lowest + i, c

    # -- ring operations ----------------------------------------------

    def __add__(self, other):
        if not isinstance(other, TruncatedSeries):
            other = TruncatedSeries.constant(other, self.trunc)
        trunc = min(self.trunc, other.trunc)
        terms: dict = {}
        for e, c in self.items():
            if e < trunc:
                terms[e] = terms.get(e, 0) + c
        for e, c in other.items():
            if e < trunc:
                terms[e] = terms.get(e, 0) + c
        return TruncatedSeries.from_dict(terms, trunc)

    __radd__ = __add__

    def __neg__(self):
        return TruncatedSeries(self.lowest, tuple(-c for c in self.coeffs), self.trunc)

    def __sub__(self, other):
        if not isinstance(other, TruncatedSeries):
            other = TruncatedSeries.constant(other, self.trunc)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            return TruncatedSeries(
                self.lowest, tuple(c * other for c in self.coeffs), self.trunc
            )
        # Unknown tails limit the product: t = min(t1 + l2, t2 + l1).
        trunc = min(self.trunc + other.lowest, other.trunc + self.lowest)
        terms: dict = {}
        for e1, c1 in self.items():
            for e2, c2 in other.items():
                e = e1 + e2
                if e < trunc:
                    terms[e] = terms.get(e, 0) + c1 * c2
        return TruncatedSeries.from_dict(terms, trunc)

    __rmul__ = __mul__

    # -- calculus and evaluation ---------------------------------------

    def shift(self, k: int) -> "TruncatedSeries":
        """Multiply by nome**k."""
        return TruncatedSeries(self.lowest + k, self.coeffs, self.trunc + k)

    def truncate(self, trunc: int) -> "TruncatedSeries":
        if trunc > self.trunc:
            raise DomainError("cannot extend a truncated series")
        kept = {e: c for e, c in self.items() if e < trunc}
        return TruncatedSeries.from_dict(kept, trunc)

    def derivative(self) -> "TruncatedSeries":
        terms = {e - 1: e * c for e, c in self.items() if e != 0}
        return TruncatedSeries.from_dict(terms, self.trunc - 1)

    def evaluate(self, x):
        """Sum the retained terms at a numeric point (x != 0 for Laurent)."""
        if self.lowest < 0 and x == 0:
            raise PoleError("Laurent series evaluated at 0")
        total = 0
        for e, c in self.items():
            total = total + c * x**e
        return total

    # -- comparison / display ------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, TruncatedSeries):
            return NotImplemented
        if self.trunc != other.trunc:
            return False
        lo = min(self.lowest, other.lowest)
        for e in range(lo, self.trunc):
            a = self.coefficient(e) if e >= self.lowest else 0
            b = other.coefficient(e) if e >= other.lowest else 0
            if isinstance(a, TruncatedSeries) or isinstance(b, TruncatedSeries):
                if a is not b and a != b:
                    return False
            elif a != b:
                return False
        return True

    def __hash__(self):
        return hash((self.lowest, self.coeffs, self.trunc))

    def allclose(self, other: "TruncatedSeries", tol: float = 1e-12) -> bool:
        lo = min(self.lowest, other.lowest)
        hi = min(self.trunc, other.trunc)
        for e in range(lo, hi):
            a = complex(self.coefficient(e)) if e >= self.lowest else 0j
            b = complex(other.coefficient(e)) if e >= other.lowest else 0j
            if abs(a - b) > tol:
                return False
        return True

    def __repr__(self):
        body = ", ".join(f"{e}: {c!r}" for e, c in self.items())
        return f"TruncatedSeries({{{body}}}, trunc={self.trunc})"


def series_mul(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    """Cauchy product with the min-rule truncation; see TruncatedSeries.__mul__."""
    return a * b


_BERNOULLI_CACHE: list[Fraction] = [Fraction(1)]
_BERNOULLI_LOCK = threading.Lock()


def bernoulli(k: int) -> Fraction:
    """Exact Bernoulli number B_k in the convention with B_1 = -1/2.

    These are the coefficients of the expansion
    1/(e^z - 1) = sum_k B_k/k! z^(k-1).
    """
    if k < 0:
        raise DomainError("Bernoulli index must be nonnegative")
    with _BERNOULLI_LOCK:
        while len(_BERNOULLI_CACHE) <= k:
            m = len(_BERNOULLI_CACHE)
            # sum_{j=0}^{m} C(m+1, j) B_j = 0 for m >= 1
            acc = Fraction(0)
            for j in range(m):
                acc += math.comb(m + 1, j) * _BERNOULLI_CACHE[j]
            _BERNOULLI_CACHE.append(-acc / (m + 1))
        return _BERNOULLI_CACHE[k]


def geometric_resum(x: complex, cfg: ToleranceConfig = DEFAULT_TOLERANCES) -> complex:
    """Value of 1/(1-x), resummed stably on both sides of the unit circle.

    For |x| < 1 this is the plain geometric sum; for |x| > 1 the identity
    1/(1-x) = -x^(-1)/(1-x^(-1)) is used, which is the analytic
    continuation every lattice sum in this package relies on.  Arguments
    on the unit circle (within abs_tol) are rejected.
    """
    x = complex(x)
    if abs(abs(x) - 1.0) < cfg.abs_tol:
        raise UnitCircleError("geometric resummation argument on the unit circle")
    if abs(x) < 1.0:
        return 1.0 / (1.0 - x)
    inv = 1.0 / x
    return -inv / (1.0 - inv)


def laurent_coefficients(
    f,
    center: complex,
    radius: float,
    low: int,
    high: int,
    samples: int | None = None,
) -> dict[int, complex]:
    """Laurent coefficients of f around a center by circle sampling.

    Samples f on |w - center| = radius and extracts coefficients for
    exponents low..high by a discrete Fourier transform.  The aliasing
    error is O(radius^(samples - high)) relative to the nearest excluded
    coefficient, so callers pick radius well inside the annulus of
    analyticity.
    """
    if high < low:
        raise DomainError("empty exponent range")
    if samples is None:
        samples = max(64, 4 * (high - low + 8))
    ts = np.arange(samples)
    points = center + radius * np.exp(2j * np.pi * ts / samples)
    vals = np.array([complex(f(p)) for p in points])
    spect = np.fft.fft(vals) / samples
    out: dict[int, complex] = {}
    for e in range(low, high + 1):
        idx = e % samples
        out[e] = complex(spect[idx]) / radius**e
    return out


def cauchy_derivative(f, w0: complex, order: int, radius: float = 0.1) -> complex:
    """order-th derivative of an analytic f at w0 via circle sampling."""
    coeffs = laurent_coefficients(lambda w: f(w), w0, radius, 0, order)
    return coeffs[order] * math.factorial(order)
