"""Two-tori sewing machinery and genus-two generalized Weierstrass kernels.

Two tori with moduli tau1, tau2 are glued through a sewing parameter
epsilon; all kernels here are organized around half-integer powers of
epsilon and moment matrices of Eisenstein series.  Index matrices and
moment matrices use 1-based indices m, n in {1..N} (stored 0-based).
"""

from __future__ import annotations

import cmath
import functools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .elliptic import eisenstein_E, weierstrass_P
from .errors import ConvergenceError, DomainError
from .series import DEFAULT_TOLERANCES, ToleranceConfig

__all__ = [
    "TruncatedMatrix",
    "SewingData",
    "build_index_matrices",
    "build_Lambda",
    "build_R_row",
    "build_Q_row",
    "build_P_column",
    "gen_weierstrass_2",
    "f2_coefficients",
    "genus2_reduce",
    "genus2_reduce_channels",
]


@dataclass(frozen=True)
class TruncatedMatrix:
    """N x N truncation of one of the infinite matrices; indices start at 1."""

    array: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.array)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DomainError("truncated matrices must be square")
        if not np.all(np.isfinite(arr)):
            raise DomainError("truncated matrix has non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @property
    def N(self) -> int:
        return self.array.shape[0]

    def entry(self, m: int, n: int):
        """1-based entry access, matching the written index convention."""
        if not (1 <= m <= self.N and 1 <= n <= self.N):
            raise DomainError("matrix index out of range")
        return self.array[m - 1, n - 1]


def _coord(x) -> complex:
    return complex(x.w) if hasattr(x, "w") else complex(x)


@dataclass(frozen=True)
class SewingData:
    """Moduli of the glued surface: two tori, epsilon, weight p, size N.

    The square root of epsilon is fixed once (principal branch) so every
    half-integer power in the kernels shares one branch.  Construction
    rejects parameters whose moment-matrix product has estimated spectral
    radius >= 0.9, since both inversion routes degrade past that.
    """

    tau1: complex
    tau2: complex
    epsilon: complex
    p: int
    N: int
    cfg: ToleranceConfig = field(default=DEFAULT_TOLERANCES)

    def __post_init__(self) -> None:
        for tau in (self.tau1, self.tau2):
            if not complex(tau).imag > 0:
                raise DomainError("torus moduli must have positive imaginary part")
        if not 1 <= self.p <= 8:
            raise DomainError("weight parameter p must lie in 1..8")
        if self.N <= 2 * self.p:
            raise DomainError("truncation N must exceed 2p")
        object.__setattr__(self, "tau1", complex(self.tau1))
        object.__setattr__(self, "tau2", complex(self.tau2))
        object.__setattr__(self, "epsilon", complex(self.epsilon))
        object.__setattr__(self, "_sqrt_eps", cmath.sqrt(self.epsilon))
        object.__setattr__(self, "_cache", {})
        object.__setattr__(self, "_lock", threading.Lock())
        radius = self.spectral_radius_estimate()
        if radius >= 0.9:
            raise ConvergenceError(
                f"sewing out of the convergence region: spectral radius {radius:.3f}"
            )

    @property
    def sqrt_eps(self) -> complex:
        return self._sqrt_eps

    def tau(self, a: int) -> complex:
        if a not in (1, 2):
            raise DomainError("torus index must be 1 or 2")
        return self.tau1 if a == 1 else self.tau2

    @staticmethod
    def other(a: int) -> int:
        return 3 - a

    def _memo(self, key, build):
        cache = self._cache
        with self._lock:
            if key in cache:
                return cache[key]
        value = build()
        with self._lock:
            return cache.setdefault(key, value)

    def lam(self, a: int) -> np.ndarray:
        return self._memo(("lam", a), lambda: _lambda_array(a, self))

    def lam_tilde(self, a: int, p: int) -> np.ndarray:
        def build():
            delta = build_index_matrices(p, self.N)[1].array
            return self.lam(a) @ delta

        return self._memo(("lt", a, p), build)

    def resolvent_matrix(self, a: int, p: int) -> np.ndarray:
        """1 - lam_tilde(other(a)) lam_tilde(a), the matrix Q inverts."""

        def build():
            k = self.lam_tilde(self.other(a), p) @ self.lam_tilde(a, p)
            return np.eye(self.N, dtype=complex) - k

        return self._memo(("res", a, p), build)

    def spectral_radius_estimate(self, iterations: int = 30) -> float:
        k = self.lam_tilde(2, self.p) @ self.lam_tilde(1, self.p)
        v = np.ones(self.N, dtype=complex) / math.sqrt(self.N)
        radius = 0.0
        for _ in range(iterations):
            w = k @ v
            norm = float(np.linalg.norm(w))
            if norm == 0.0:
                return 0.0
            radius = norm
            v = w / norm
        return radius


@functools.lru_cache(maxsize=64)
def build_index_matrices(
    p: int, N: int
) -> tuple[TruncatedMatrix, TruncatedMatrix, TruncatedMatrix]:
    """Kronecker grids Gamma, Delta and the projector Pi = Gamma^2.

    Gamma(m,n) = [m = -n+2p-2], Delta(m,n) = [m = n+2p-2]; Pi is computed
    by squaring Gamma, which lands on diag(Id_{2p-3}, 0) with Id_{-1} = 0.
    """
    if p < 1:
        raise DomainError("p must be positive")
    if N <= 2 * p:
        raise DomainError("N must exceed 2p")
    gamma = np.zeros((N, N), dtype=complex)
    delta = np.zeros((N, N), dtype=complex)
    for m in range(1, N + 1):
        n_gamma = -m + 2 * p - 2
        if 1 <= n_gamma <= N:
            gamma[m - 1, n_gamma - 1] = 1.0
        n_delta = m - 2 * p + 2
        if 1 <= n_delta <= N:
            delta[m - 1, n_delta - 1] = 1.0
    pi = gamma @ gamma
    return TruncatedMatrix(gamma), TruncatedMatrix(delta), TruncatedMatrix(pi)


def _lambda_array(a: int, sewing: SewingData) -> np.ndarray:
    N = sewing.N
    tau = sewing.tau(a)
    se = sewing.sqrt_eps
    out = np.zeros((N, N), dtype=complex)
    for m in range(1, N + 1):
        for n in range(1, N + 1):
            k = m + n
            if k % 2 == 1:
                continue  # odd Eisenstein weight vanishes
            e = eisenstein_E(k, tau, sewing.cfg)
            out[m - 1, n - 1] = se**k * (-1.0) ** (n + 1) * math.comb(k - 1, n) * e
    return out


def build_Lambda(a: int, sewing: SewingData) -> TruncatedMatrix:
    """Moment matrix Lambda_a(m,n) = eps^{(m+n)/2} (-1)^{n+1} C(m+n-1, n) E_{m+n}(tau_a)."""
    return TruncatedMatrix(sewing.lam(a).copy())


def build_R_row(a: int, x, sewing: SewingData) -> np.ndarray:
    """Row vector R(x; m) = eps^{m/2} P_{m+1}(x, tau_a), m = 1..N."""
    w = _coord(x)
    tau = sewing.tau(a)
    se = sewing.sqrt_eps
    return np.array(
        [se**m * weierstrass_P(m + 1, w, tau, sewing.cfg) for m in range(1, sewing.N + 1)]
    )


def build_Q_row(
    p: int, x, sewing: SewingData, a: int = 1, method: str = "solve"
) -> np.ndarray:
    """Q(p; x) = R(x) Delta (1 - lam_tilde(abar) lam_tilde(a))^{-1}.

    method="solve" factorizes the truncated system directly;
    method="neumann" sums the geometric matrix series, as an independent
    route for cross-checks.
    """
    key = ("q_row", p, a, complex(_coord(x)), method)
    with sewing._lock:
        cached = sewing._cache.get(key)
    if cached is not None:
        return cached.copy()
    delta = build_index_matrices(p, sewing.N)[1].array
    row = build_R_row(a, x, sewing) @ delta
    if method == "solve":
        res = sewing.resolvent_matrix(a, p)
        out = np.linalg.solve(res.T, row).astype(complex)
        with sewing._lock:
            sewing._cache[key] = out
        return out.copy()
    if method != "neumann":
        raise DomainError("method must be 'solve' or 'neumann'")
    k = sewing.lam_tilde(sewing.other(a), p) @ sewing.lam_tilde(a, p)
    total = row.copy()
    term = row.copy()
    for _ in range(400):
        term = term @ k
        total += term
        if float(np.linalg.norm(term)) < 1e-16 * max(1.0, float(np.linalg.norm(total))):
            return total
    raise ConvergenceError("Neumann series for Q did not settle")


def build_P_column(j: int, a: int, y, sewing: SewingData) -> np.ndarray:
    """Column P_{j+1}(y; m) = eps^{m/2} C(m+j-1, j)(P_{j+m}(y, tau_a) - [j=0] E_m(tau_a))."""
    if j < 0:
        raise DomainError("derivative order j must be nonnegative")
    w = _coord(y)
    tau = sewing.tau(a)
    se = sewing.sqrt_eps
    out = np.zeros(sewing.N, dtype=complex)
    for m in range(1, sewing.N + 1):
        val = weierstrass_P(j + m, w, tau, sewing.cfg)
        if j == 0:
            val -= eisenstein_E(m, tau, sewing.cfg)
        out[m - 1] = se**m * math.comb(m + j - 1, j) * val
    return out


def gen_weierstrass_2(
    j: int,
    p: int,
    branch: str,
    x,
    y,
    sewing: SewingData,
    a: int = 1,
) -> complex:
    """Genus-two generalized Weierstrass function, j-th member.

    branch="same-torus": both points on torus a; branch="cross-torus":
    x on torus a, y on the other torus.  For j >= 1 the y-derivative
    descent is applied analytically; the cross-torus sign carries the
    (-1)^{p+1} prefactor of the j = 0 member so that the j-family is the
    actual (1/j!) D_y^j descent of it.
    """
    if j < 0:
        raise DomainError("kernel order j must be nonnegative")
    if branch not in ("same-torus", "cross-torus"):
        raise DomainError("branch must be 'same-torus' or 'cross-torus'")
    abar = SewingData.other(a)
    xw, yw = _coord(x), _coord(y)
    tau_a = sewing.tau(a)
    q_row = build_Q_row(p, xw, sewing, a=a)
    if branch == "same-torus":
        lt_abar = sewing.lam_tilde(abar, p)
        p_col = build_P_column(j, a, yw, sewing)
        coupling = q_row @ (lt_abar @ p_col)
        if j == 0:
            value = (
                weierstrass_P(1, xw - yw, tau_a, sewing.cfg)
                - weierstrass_P(1, xw, tau_a, sewing.cfg)
                - coupling
            )
            if p != 1:
                tail = q_row @ sewing.lam(abar)
                value -= tail[2 * p - 3]
            return complex(value)
        return complex(
            weierstrass_P(j + 1, xw - yw, tau_a, sewing.cfg)
            + (-1.0) ** (j + 1) * coupling
        )
    p_col = build_P_column(j, abar, yw, sewing)
    core = q_row @ p_col
    sign = (-1.0) ** (p + 1)
    if j == 0:
        value = core
        if p != 1:
            value += sewing.epsilon ** (p - 1) * weierstrass_P(
                2 * p - 1, xw, tau_a, sewing.cfg
            )
            tail = q_row @ (sewing.lam_tilde(abar, p) @ sewing.lam(a))
            value += tail[2 * p - 3]
        return complex(sign * value)
    return complex(sign * (-1.0) ** j * core)


def f2_coefficients(
    p: int,
    z,
    sewing: SewingData,
    b: int = 1,
    literal_calF: bool = False,
) -> tuple[complex, complex, np.ndarray]:
    """Degeneration coefficients (f_1, f_2) and the row vector f_3.

    z sits on torus b.  The constant term of f_a is read as the Kronecker
    delta [a = b]; literal_calF=True restores the printed constant 1.
    """
    zw = _coord(z)
    q_row = build_Q_row(p, zw, sewing, a=b)
    gamma, _, pi = build_index_matrices(p, sewing.N)
    se = sewing.sqrt_eps
    scalars = []
    for a in (1, 2):
        abar = SewingData.other(a)
        const = 1.0 if literal_calF else (1.0 if a == b else 0.0)
        sign = (-1.0) ** p if b == abar else 1.0
        if b == a:
            vec = q_row @ sewing.lam_tilde(abar, p)
        else:
            vec = q_row
        scalars.append(complex(const + sign * se * vec[0]))
    bbar = SewingData.other(b)
    inner = sewing.lam_tilde(bbar, p) @ sewing.lam(b) + sewing.lam(bbar) @ gamma.array
    f3 = (build_R_row(b, zw, sewing) + q_row @ inner) @ pi.array
    return scalars[0], scalars[1], f3


def genus2_reduce(
    family,
    p: int,
    points,
    sewing: SewingData,
    labels=None,
) -> complex:
    """Kernel-route reduction: sum_i sum_j P^{(2)}_{j+1}(p; z_{n+1}, z_i) Z(mu_{i,j}).

    `family` supplies evaluate(points, mu_word) with mu labels (i, 1, j);
    `labels` assigns each point to torus 1 or 2 (default: all on torus 1).
    The j-sum stops after three consecutive negligible summands.
    """
    points = [complex(_coord(z)) for z in points]
    if len(points) < 2:
        raise DomainError("need at least one base point plus the expansion point")
    if labels is None:
        labels = [1] * len(points)
    if len(labels) != len(points):
        raise DomainError("one torus label per point is required")
    z_new = points[-1]
    base = points[:-1]
    a = labels[-1]
    cfg = sewing.cfg
    total = 0j
    for i, z_i in enumerate(base, start=1):
        branch = "same-torus" if labels[i - 1] == a else "cross-torus"
        streak = 0
        for j in range(cfg.q_order + 1):
            kern = gen_weierstrass_2(j, p, branch, z_new, z_i, sewing, a=a)
            weight = family.evaluate(tuple(base), ((i, 1, j),))
            term = kern * weight
            total += term
            if abs(term) < cfg.abs_tol:
                streak += 1
                if streak >= 3:
                    break
            else:
                streak = 0
    return complex(total)


def genus2_reduce_channels(
    family,
    p: int,
    points,
    sewing: SewingData,
    b: int = 1,
    literal_calF: bool = False,
) -> complex:
    """Channel-route reduction: sum_{l=1}^{3} f_l(p; z_{n+1}) Z_{n,l}.

    The family must provide channel_values(points) -> (c1, c2, c3) with
    scalar c1, c2 and a length-N vector c3 matching f_3.
    """
    points = [complex(_coord(z)) for z in points]
    f1, f2, f3 = f2_coefficients(p, points[-1], sewing, b=b, literal_calF=literal_calF)
    c1, c2, c3 = family.channel_values(tuple(points[:-1]))
    c3 = np.asarray(c3, dtype=complex)
    if c3.shape != (sewing.N,):
        raise DomainError("third channel must be a length-N vector")
    return complex(f1 * c1 + f2 * c2 + f3 @ c3)
