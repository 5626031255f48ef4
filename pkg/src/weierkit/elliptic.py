"""Genus-one kernels: Eisenstein series and the Weierstrass function family.

The module provides the ordinary Eisenstein series E_k with its
quasi-modular transformation, the shifted variants E_{k,lambda} and
E_tilde_k, and four kernel families P_m, P_{m,lambda}, P_tilde_m and the
(theta,phi)-twisted P_k.  All nomes follow q_x = e^{2 pi i x} and the
normalized derivative is D_x = (1/2 pi i) d/dx.

Every lattice-type kernel is evaluated through one shell-resummed core:
the defining two-sided sums converge only on the annulus |q| < |q_w| < 1,
and the geometric resummation used here is the analytic continuation
under which the function identities of the family hold.
"""

from __future__ import annotations

import cmath
import math
import threading
from dataclasses import dataclass
from functools import lru_cache

from .errors import ConvergenceError, DomainError, PoleError, UnitCircleError
from .series import (
    DEFAULT_TOLERANCES,
    ToleranceConfig,
    bernoulli,
    geometric_resum,
    require_finite,
)

__all__ = [
    "TorusPoint",
    "TwistData",
    "nome",
    "moebius",
    "eisenstein_E",
    "eisenstein_transform",
    "eisenstein_E_lambda",
    "eisenstein_E_tilde",
    "weierstrass_P",
    "weierstrass_P_lambda",
    "weierstrass_P_tilde",
    "twisted_P",
]

TWO_PI_I = 2j * math.pi


def nome(x: complex) -> complex:
    """q_x = e^{2 pi i x}."""
    return cmath.exp(TWO_PI_I * x)


def _require_upper(tau: complex) -> complex:
    tau = complex(tau)
    if not tau.imag > 0:
        raise DomainError("tau must lie in the upper half-plane")
    return tau


@dataclass(frozen=True)
class TorusPoint:
    """A point w on the torus with modulus tau; carries its nomes."""

    w: complex
    tau: complex

    def __post_init__(self) -> None:
        _require_upper(self.tau)

    @property
    def q(self) -> complex:
        return nome(self.tau)

    @property
    def q_w(self) -> complex:
        return nome(self.w)

    def in_annulus(self) -> bool:
        """|q| < |q_w| < 1, the common convergence annulus."""
        return abs(self.q) < abs(self.q_w) < 1.0


@dataclass(frozen=True)
class TwistData:
    """U(1) x U(1) twist pair (theta, phi) with phi = e^{2 pi i lam}."""

    theta: complex
    lam: float

    def __post_init__(self) -> None:
        theta = complex(self.theta)
        if abs(abs(theta) - 1.0) > 1e-9:
            raise DomainError("theta must have modulus one")
        if not 0.0 <= self.lam < 1.0:
            raise DomainError("lam must lie in [0, 1)")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_phi(cls, theta: complex, phi: complex) -> "TwistData":
        phi = complex(phi)
        if abs(abs(phi) - 1.0) > 1e-9:
            raise DomainError("phi must have modulus one")
        lam = (cmath.phase(phi) / (2 * math.pi)) % 1.0
        return cls(theta, lam)

    @property
    def phi(self) -> complex:
        return cmath.exp(TWO_PI_I * self.lam)

    @property
    def is_trivial(self) -> bool:
        return abs(self.theta - 1.0) < 1e-12 and self.lam == 0.0


def moebius(gamma, tau: complex) -> complex:
    """(a tau + b) / (c tau + d) for gamma = ((a, b), (c, d))."""
    (a, b), (c, d) = gamma
    den = c * tau + d
    if den == 0:
        raise DomainError("c*tau + d vanishes")
    return (a * tau + b) / den


# ---------------------------------------------------------------------------
# Eisenstein series
# ---------------------------------------------------------------------------

_EISEN_CACHE: dict[tuple, complex] = {}
_EISEN_LOCK = threading.Lock()


def eisenstein_E(
    k: int, tau: complex, cfg: ToleranceConfig = DEFAULT_TOLERANCES
) -> complex:
    """E_k(tau): Bernoulli constant plus a Lambert-type q-series.

    Returns -1 for k = 0 and exactly 0 for odd k, both without summation.
    """
    if k < 0:
        raise DomainError("Eisenstein weight must be nonnegative")
    if k == 0:
        return complex(-1.0)
    if k % 2 == 1:
        return complex(0.0)
    tau = _require_upper(tau)
    key = (k, tau, cfg.q_order)
    with _EISEN_LOCK:
        if key in _EISEN_CACHE:
            return _EISEN_CACHE[key]
    q = nome(tau)
    total = complex(-bernoulli(k) / math.factorial(k))
    front = 2.0 / math.factorial(k - 1)
    for n in range(1, cfg.q_order + 1):
        qn = q**n
        total += front * n ** (k - 1) * qn / (1.0 - qn)
    value = require_finite(total, "eisenstein_E")
    with _EISEN_LOCK:
        _EISEN_CACHE[key] = value
    return value


def eisenstein_transform(
    k: int, gamma, tau: complex, cfg: ToleranceConfig = DEFAULT_TOLERANCES
) -> complex:
    """Predicted E_k(gamma tau) from E_k(tau), including the k=2 anomaly.

    (c tau + d)^k E_k(tau) - delta_{k,2} c (c tau + d)/(2 pi i).
    """
    (a, b), (c, d) = gamma
    if a * d - b * c != 1:
        raise DomainError("gamma must have determinant one")
    tau = _require_upper(tau)
    den = c * tau + d
    if den == 0:
        raise DomainError("c*tau + d vanishes")
    value = den**k * eisenstein_E(k, tau, cfg)
    if k == 2:
        value -= c * den / TWO_PI_I
    return value


def eisenstein_E_lambda(
    k: int, lam: float, tau: complex, cfg: ToleranceConfig = DEFAULT_TOLERANCES
) -> complex:
    """E_{k,lam}(tau) = sum_{j=0}^{k} lam^j/j! E_{k-j}(tau)."""
    if k < 0:
        raise DomainError("weight must be nonnegative")
    total = 0j
    for j in range(k + 1):
        total += lam**j / math.factorial(j) * eisenstein_E(k - j, tau, cfg)
    return total


def eisenstein_E_tilde(
    k: int,
    z: complex,
    tau: complex,
    cfg: ToleranceConfig = DEFAULT_TOLERANCES,
    diagnostics: dict | None = None,
) -> complex:
    """E-tilde_k(z, tau), the z-deformed Eisenstein generating set.

    Double q-series truncated so every retained term has mn <= q_order.
    """
    if k < 0:
        raise DomainError("weight must be nonnegative")
    if k == 0:
        return complex(-1.0)
    tau = _require_upper(tau)
    q = nome(tau)
    qz = nome(z)
    if not abs(q) < abs(qz) < 1.0 / abs(q):
        raise DomainError("q_z outside the two-sided annulus (|q|, 1/|q|)")
    total = complex(-bernoulli(k) / math.factorial(k))
    if k == 1:
        if abs(qz - 1.0) < cfg.abs_tol:
            raise PoleError("q_z = 1 pole of E-tilde_1")
        total += qz / (1.0 - qz)
    front = 1.0 / math.factorial(k - 1)
    sign = (-1.0) ** k
    last = 0.0
    for n in range(1, cfg.q_order + 1):
        # bases stay strictly inside the unit disk on the admissible annulus
        plus = qz * q**n
        minus = q**n / qz
        p_pow, m_pow = 1.0 + 0j, 1.0 + 0j
        shell = 0j
        for _ in range(1, cfg.q_order // n + 1):
            p_pow *= plus
            m_pow *= minus
            shell += front * n ** (k - 1) * (p_pow + sign * m_pow)
        total += shell
        last = abs(shell)
    if diagnostics is not None:
        diagnostics["truncation_error"] = last
    return require_finite(total, "eisenstein_E_tilde")


# ---------------------------------------------------------------------------
# Power sums with closed rational forms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _eulerian_row(m: int) -> tuple:
    """Eulerian numbers <m, k> for k = 0..m-1 (row (1,) for m = 0)."""
    if m == 0:
        return (1,)
    prev = _eulerian_row(m - 1)

    def at(k):
        return prev[k] if 0 <= k < len(prev) else 0

    return tuple((k + 1) * at(k) + (m - k) * at(k - 1) for k in range(m))


def _power_sum(m: int, y: complex, guard: float, base: complex) -> complex:
    """pref * sum_{j>=1} j^m y^j in closed rational form, with base = pref*y.

    The caller supplies the product base = pref*y directly: at the shell
    call sites pref alone can overflow while base stays bounded.
    """
    if abs(y - 1.0) < guard:
        raise PoleError("power-sum argument at its y = 1 pole")
    if m == 0:
        return base / (1.0 - y)
    num = 0j
    yk = base
    for a in _eulerian_row(m):
        num += a * yk
        yk *= y
    return num / (1.0 - y) ** (m + 1)


def _shifted_power_sum(m: int, c: float, y: complex, guard: float, base: complex) -> complex:
    """pref * sum_{j>=1} (j+c)^m y^j via the binomial split over power sums."""
    if c == 0:
        return _power_sum(m, y, guard, base)
    total = 0j
    for r in range(m + 1):
        total += math.comb(m, r) * c ** (m - r) * _power_sum(r, y, guard, base)
    return total


# ---------------------------------------------------------------------------
# Unified lattice-sum core
# ---------------------------------------------------------------------------


def _lattice_sum(
    m: int,
    w: complex,
    tau: complex,
    a: float,
    D: complex,
    include_j0: bool,
    cfg: ToleranceConfig,
    strict_j0: bool = False,
) -> tuple[complex, float]:
    """Shell-resummed sum_j (j+a)^m q_w^{j+a} / (1 - D q^j) over j in Z.

    The j = 0 term enters only when include_j0 is set; strict_j0 routes
    its 1/(1-D) factor through geometric_resum so unit-circle arguments
    are rejected rather than continued.  Validity needs |Dq| < 1 and
    |q/D| < 1; shells decay geometrically in |q| after that.
    """
    tau = _require_upper(tau)
    q = nome(tau)
    x = nome(w)
    if abs(D * q) >= 1.0 or abs(q / D) >= 1.0:
        raise DomainError("denominator twist outside the annulus (|q|, 1/|q|)")
    xa = cmath.exp(TWO_PI_I * w * a)
    guard = cfg.abs_tol
    total = 0j
    if include_j0:
        base = a**m if a != 0 else (1.0 if m == 0 else 0.0)
        if base != 0:
            if strict_j0:
                total += base * xa * geometric_resum(D, cfg)
            else:
                if abs(D - 1.0) < guard:
                    raise PoleError("j = 0 denominator vanishes")
                total += base * xa / (1.0 - D)
    sign = (-1.0) ** (m + 1)
    streak = 0
    last = 0.0
    Dq = D * q
    qD = q / D
    for i in range(cfg.q_order + 1):
        # base arguments D^i*y and D^-i*y are formed from (Dq)^i and
        # (q/D)^i, both strictly inside the unit disk, so no factor
        # overflows even when D^i alone would
        y_pos = x * q**i
        shell = _shifted_power_sum(m, a, y_pos, guard, x * Dq**i)
        if i >= 1:
            y_neg = q**i / x
            shell += sign * _shifted_power_sum(m, -a, y_neg, guard, qD**i / x)
        shell *= xa
        total += shell
        last = abs(shell)
        if last < 1e-18 * max(1.0, abs(total)):
            streak += 1
            if streak >= 3:
                break
        else:
            streak = 0
    else:
        if last > max(cfg.abs_tol, cfg.rel_tol * abs(total)):
            raise ConvergenceError("lattice shells did not settle within q_order")
    return require_finite(total, "lattice sum"), last


def _reduce_argument(w: complex, tau: complex) -> tuple[complex, int, int]:
    """w = w_red + s*tau + t with Im(w_red)/Im(tau) in [0,1), Re near 0."""
    s = math.floor(w.imag / tau.imag)
    w1 = w - s * tau
    t = round(w1.real)
    return w1 - t, s, t


# ---------------------------------------------------------------------------
# Weierstrass kernels
# ---------------------------------------------------------------------------


def weierstrass_P(
    m: int,
    w: complex,
    tau: complex,
    cfg: ToleranceConfig = DEFAULT_TOLERANCES,
    diagnostics: dict | None = None,
) -> complex:
    """P_m(w, tau) for m >= 1; P_1 carries the -1/2 constant.

    The argument is reduced to the fundamental annulus first; each
    tau-shift adds -1 to P_1 (quasi-periodicity), none is needed for
    m >= 2.
    """
    if m < 1:
        raise DomainError("kernel index must be positive")
    tau = _require_upper(tau)
    w = complex(w)
    w_red, s, _ = _reduce_argument(w, tau)
    if abs(w_red) < cfg.abs_tol:
        raise PoleError("w lies on the lattice")
    value, err = _lattice_sum(m - 1, w_red, tau, 0.0, 1.0 + 0j, False, cfg)
    value *= (-1.0) ** m / math.factorial(m - 1)
    if m == 1:
        value += -0.5 - s
    if diagnostics is not None:
        diagnostics["truncation_error"] = err
    return value


def weierstrass_P_lambda(
    m: int,
    lam: float,
    w: complex,
    tau: complex,
    cfg: ToleranceConfig = DEFAULT_TOLERANCES,
    diagnostics: dict | None = None,
) -> complex:
    """P_{m,lam}(w, tau): the lattice sum shifted to run over Z - lam.

    No -1/2 constant enters here, so P_{1,0} = P_1 + 1/2.  Integer real
    shifts of w are removed exactly with an e^{-2 pi i lam t} factor;
    in the tau-direction only the strips adjacent to the fundamental
    annulus are supported, since the kernel is not tau-periodic.
    """
    if m < 1:
        raise DomainError("kernel index must be positive")
    tau = _require_upper(tau)
    w = complex(w)
    s = math.floor(w.imag / tau.imag)
    if abs(s) > 1:
        raise DomainError("w too far from the fundamental annulus for a shifted kernel")
    t = round(w.real)
    w_red = w - t
    if abs(w_red - round(w_red.imag / tau.imag) * tau) < cfg.abs_tol:
        raise PoleError("w lies on the lattice")
    value, err = _lattice_sum(m - 1, w_red, tau, -lam, 1.0 + 0j, False, cfg)
    value *= (-1.0) ** m / math.factorial(m - 1)
    value *= cmath.exp(-TWO_PI_I * lam * t)
    if diagnostics is not None:
        diagnostics["truncation_error"] = err
    return value


def weierstrass_P_tilde(
    m: int,
    w: complex,
    z: complex,
    tau: complex,
    cfg: ToleranceConfig = DEFAULT_TOLERANCES,
    diagnostics: dict | None = None,
) -> complex:
    """P-tilde_m(w, z, tau), the two-variable quasi-Jacobi kernel.

    The n = 0 term contributes 1/(1 - q_z) only for m = 1, and that
    factor is resummed strictly: |q_z| = 1 raises UnitCircleError.
    """
    if m < 1:
        raise DomainError("kernel index must be positive")
    tau = _require_upper(tau)
    qz = nome(z)
    value, err = _lattice_sum(
        m - 1, complex(w), tau, 0.0, qz, True, cfg, strict_j0=True
    )
    value *= (-1.0) ** m / math.factorial(m - 1)
    if diagnostics is not None:
        diagnostics["truncation_error"] = err
    return value


def twisted_P(
    k: int,
    twist: TwistData,
    z: complex,
    tau: complex,
    cfg: ToleranceConfig = DEFAULT_TOLERANCES,
    diagnostics: dict | None = None,
) -> complex:
    """P_k[theta, phi](z, tau), summed directly over n in Z + lam.

    The n = 0 term is omitted exactly when (theta, phi) = (1, 1), and in
    that trivial case a -1/2 is added for k = 1 so the family degenerates
    to P_k itself.  This is a per-term evaluation, independent of the
    shell-resummed route used by weierstrass_P.
    """
    if k < 1:
        raise DomainError("kernel index must be positive")
    tau = _require_upper(tau)
    z = complex(z)
    q = nome(tau)
    qz = nome(z)
    lam = twist.lam
    theta = complex(twist.theta)
    trivial = twist.is_trivial
    if trivial and abs(qz - 1.0) < cfg.abs_tol:
        raise PoleError("z lies on the lattice with a trivial twist")
    if abs(abs(qz) - 1.0) < cfg.abs_tol and not trivial:
        raise UnitCircleError("q_z on the unit circle")
    if not abs(q) < abs(qz) < 1.0:
        if abs(abs(qz) - 1.0) < cfg.abs_tol:
            raise UnitCircleError("q_z on the unit circle")
        raise DomainError("q_z outside the annulus (|q|, 1)")

    def term(j: int) -> complex:
        n = j + lam
        if trivial and j == 0:
            return 0j
        power = n ** (k - 1)
        if power == 0:
            return 0j
        if n > 0:
            y = cmath.exp(TWO_PI_I * tau * n) / theta
            if abs(y - 1.0) < cfg.abs_tol:
                raise PoleError("twisted denominator vanishes")
            return power * cmath.exp(TWO_PI_I * z * n) / (1.0 - y)
        if n == 0:
            if abs(theta - 1.0) < cfg.abs_tol:
                raise PoleError("twisted denominator vanishes at n = 0")
            return power / (1.0 - 1.0 / theta)
        # n < 0: resum 1/(1-y) = -y^-1/(1-y^-1); form q_z^n * q^-n jointly
        # so neither factor overflows on its own
        yinv = theta * cmath.exp(-TWO_PI_I * tau * n)
        if abs(yinv - 1.0) < cfg.abs_tol:
            raise PoleError("twisted denominator vanishes")
        scaled = power * theta * cmath.exp(TWO_PI_I * (z - tau) * n)
        return -scaled / (1.0 - yinv)

    total = 0j
    cap = 20 * cfg.q_order
    last = 0.0
    for direction in (1, -1):
        streak = 0
        j = 0 if direction == 1 else -1
        steps = 0
        while True:
            t = term(j)
            total += t
            last = abs(t)
            if last < 1e-18 * max(1.0, abs(total)):
                streak += 1
                if streak >= 3:
                    break
            else:
                streak = 0
            j += direction
            steps += 1
            if steps > cap:
                raise ConvergenceError("twisted kernel sum did not settle")
    value = (-1.0) ** k / math.factorial(k - 1) * total
    if trivial and k == 1:
        value += -0.5
    if diagnostics is not None:
        diagnostics["truncation_error"] = last
    return require_finite(value, "twisted_P")
