"""Higher-genus kernel stack on the Schottky-parameterized sphere.

A genus-g surface is modeled by 2g marked points w_{±a} on the sphere
and g sewing scalars rho_a.  The base kernel psi0 is rational with a
pluggable polynomial/Laurent tail; the dressed kernel adds a moment
matrix correction indexed doubly by (a, m) with a in ±{1..g} and
m in {0..N-1}.  Derivatives here are plain d/dx (no 2*pi*i weight).
"""

from __future__ import annotations

import cmath
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, PoleError
from .series import DEFAULT_TOLERANCES, ToleranceConfig, TruncatedSeries

__all__ = [
    "FormValue",
    "SchottkyData",
    "psi0",
    "psi0_partial",
    "E_moment",
    "build_R_genusg",
    "neumann_inverse",
    "kernel_vectors",
    "psi_full",
    "psi_partial_y",
    "chi_theta",
    "genusg_reduce",
]


@dataclass(frozen=True)
class FormValue:
    """A number tagged with formal differential weights per variable.

    Weights are bookkeeping only: addition and scalar multiplication act
    on the value and keep the tag, multiplying two FormValues adds the
    weights variable by variable.
    """

    value: complex
    weights: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", complex(self.value))
        object.__setattr__(self, "weights", tuple((str(v), int(k)) for v, k in self.weights))

    def weight_of(self, variable: str) -> int:
        return sum(k for v, k in self.weights if v == variable)

    def __add__(self, other):
        other_value = other.value if isinstance(other, FormValue) else other
        return FormValue(self.value + other_value, self.weights)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, FormValue):
            merged: dict = {}
            for v, k in self.weights + other.weights:
                merged[v] = merged.get(v, 0) + k
            return FormValue(self.value * other.value, tuple(merged.items()))
        return FormValue(self.value * other, self.weights)

    __rmul__ = __mul__

    def __abs__(self) -> float:
        return abs(self.value)


def _coerce_f_series(entry):
    if entry is None:
        return None
    if isinstance(entry, TruncatedSeries):
        return entry
    if isinstance(entry, (int, float, complex)):
        return TruncatedSeries.constant(entry, 1)
    raise DomainError("tail coefficients must be TruncatedSeries, numbers, or None")


def _normalize_f(f_coeffs, p: int):
    slots = [None] * (2 * p - 1)
    if f_coeffs is None:
        return tuple(slots)
    entries = list(f_coeffs)
    if len(entries) > 2 * p - 1:
        raise DomainError("too many tail coefficients: need at most 2p-1")
    for idx, entry in enumerate(entries):
        slots[idx] = _coerce_f_series(entry)
    return tuple(slots)


def _f_derivative(series: TruncatedSeries | None, order: int):
    for _ in range(order):
        if series is None:
            break
        series = series.derivative()
    return series


def _monomial_partial(ell: int, n: int, y: complex) -> complex:
    # d^n/dy^n of y^ell, bare derivative without factorial normalization
    if n > ell:
        return 0j
    power = ell - n
    scale = math.factorial(ell) / math.factorial(ell - n)
    if power == 0:
        return complex(scale)
    return scale * y**power


def psi0(p: int, x, y, f_coeffs=None) -> complex:
    """Base kernel 1/(x-y) plus the degree-(2p-2) tail in y."""
    return psi0_partial(p, 0, 0, x, y, f_coeffs)


def psi0_partial(p: int, m: int, n: int, x, y, f_coeffs=None) -> complex:
    """Mixed partial d^m_x d^n_y of the base kernel, in closed form."""
    if p < 1:
        raise DomainError("p must be a positive integer")
    if m < 0 or n < 0:
        raise DomainError("derivative orders must be nonnegative")
    x, y = complex(x), complex(y)
    if x == y:
        raise PoleError("base kernel evaluated on its diagonal")
    slots = _normalize_f(f_coeffs, p)
    pole = (-1.0) ** m * math.factorial(m + n) * (x - y) ** (-(m + n + 1))
    tail = 0j
    for ell, series in enumerate(slots):
        if series is None:
            continue
        mono = _monomial_partial(ell, n, y)
        if mono == 0:
            continue
        derived = _f_derivative(series, m)
        if derived is None or derived.is_zero():
            continue
        tail += derived.evaluate(x) * mono
    return pole + tail


def E_moment(m: int, n: int, y, f_coeffs, p: int) -> complex:
    """Diagonal moment sum_l f_l^(m)(y) (y^l)^(n); the pole part is absent."""
    if m < 0 or n < 0:
        raise DomainError("derivative orders must be nonnegative")
    slots = _normalize_f(f_coeffs, p)
    y = complex(y)
    total = 0j
    for ell, series in enumerate(slots):
        if series is None:
            continue
        mono = _monomial_partial(ell, n, y)
        if mono == 0:
            continue
        derived = _f_derivative(series, m)
        if derived is None or derived.is_zero():
            continue
        total += derived.evaluate(y) * mono
    return total


@dataclass(frozen=True)
class SchottkyData:
    """Marked points, sewing scalars, weight p, truncation N, optional tails.

    w lists the 2g coordinates in the block order (w_{-1}, w_{+1}, ...,
    w_{-g}, w_{+g}); rho lists the g sewing scalars.  rho_a = 0 is
    accepted and makes every dressed kernel collapse to the base one.
    Square roots of rho are fixed once (principal branch).
    """

    g: int
    w: tuple
    rho: tuple
    p: int
    N: int
    f_coeffs: tuple = None
    cfg: ToleranceConfig = field(default=DEFAULT_TOLERANCES)

    def __post_init__(self) -> None:
        if self.g < 1:
            raise DomainError("genus must be at least 1")
        if not 1 <= self.p <= 8:
            raise DomainError("weight parameter p must lie in 1..8")
        if self.N < 2 * self.p:
            raise DomainError("truncation N must be at least 2p")
        w = tuple(complex(v) for v in self.w)
        if len(w) != 2 * self.g:
            raise DomainError("need exactly 2g marked points")
        if len(set(w)) != len(w):
            raise DomainError("marked points must be pairwise distinct")
        rho = tuple(complex(r) for r in self.rho)
        if len(rho) != self.g:
            raise DomainError("need exactly g sewing scalars")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "f_coeffs", _normalize_f(self.f_coeffs, self.p))
        object.__setattr__(self, "_sqrt_rho", tuple(cmath.sqrt(r) for r in rho))
        object.__setattr__(self, "_cache", {})
        object.__setattr__(self, "_lock", threading.Lock())
        radius = self.spectral_radius_estimate()
        if radius >= 0.9:
            raise ConvergenceError(
                f"sewing out of the convergence region: spectral radius {radius:.3f}"
            )

    # -- index bookkeeping --------------------------------------------

    def labels(self) -> tuple:
        """Block order of the doubly-indexed matrices: -1, +1, -2, +2, ..."""
        out = []
        for a in range(1, self.g + 1):
            out.extend((-a, a))
        return tuple(out)

    def block(self, a: int) -> int:
        if a == 0 or abs(a) > self.g:
            raise DomainError("label out of range")
        return 2 * (abs(a) - 1) + (1 if a > 0 else 0)

    def slot(self, a: int, m: int) -> int:
        if not 0 <= m < self.N:
            raise DomainError("mode index out of range")
        return self.block(a) * self.N + m

    @property
    def size(self) -> int:
        return 2 * self.g * self.N

    def w_of(self, a: int) -> complex:
        return self.w[self.block(a)]

    def rho_of(self, a: int) -> complex:
        return self.rho[abs(a) - 1]

    def sqrt_rho_of(self, a: int) -> complex:
        return self._sqrt_rho[abs(a) - 1]

    def _memo(self, key, build):
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        value = build()
        with self._lock:
            return self._cache.setdefault(key, value)

    # -- cached matrices ------------------------------------------------

    def r_matrix(self) -> np.ndarray:
        return self._memo("R", lambda: _r_array(self))

    def delta_matrix(self) -> np.ndarray:
        def build():
            size = self.size
            delta = np.zeros((size, size), dtype=complex)
            shift = 2 * self.p - 1
            for a in self.labels():
                for n in range(self.N - shift):
                    delta[self.slot(a, n + shift), self.slot(a, n)] = 1.0
            return delta

        return self._memo("Delta", build)

    def r_tilde(self) -> np.ndarray:
        return self._memo("Rt", lambda: self.r_matrix() @ self.delta_matrix())

    def resolvent(self) -> np.ndarray:
        return self._memo("M", lambda: neumann_inverse(self.r_tilde(), cfg=self.cfg))

    def spectral_radius_estimate(self, iterations: int = 30) -> float:
        rt = self.r_tilde()
        v = np.ones(self.size, dtype=complex) / math.sqrt(self.size)
        radius = 0.0
        for _ in range(iterations):
            w = rt @ v
            norm = float(np.linalg.norm(w))
            if norm == 0.0:
                return 0.0
            radius = norm
            v = w / norm
        return radius


def _r_array(data: SchottkyData) -> np.ndarray:
    sign = (-1.0) ** data.p
    out = np.zeros((data.size, data.size), dtype=complex)
    for a in data.labels():
        sq_a = data.sqrt_rho_of(a)
        for b in data.labels():
            sq_b = data.sqrt_rho_of(b)
            for m in range(data.N):
                for n in range(data.N):
                    if a == -b:
                        entry = sign * sq_a ** (m + n + 1) * E_moment(
                            m, n, data.w_of(-a), data.f_coeffs, data.p
                        )
                    else:
                        entry = (
                            sign
                            * sq_a ** (m + 1)
                            * sq_b**n
                            * psi0_partial(
                                data.p, m, n, data.w_of(-a), data.w_of(b), data.f_coeffs
                            )
                        )
                    out[data.slot(a, m), data.slot(b, n)] = entry
    return out


def build_R_genusg(data: SchottkyData) -> np.ndarray:
    """Doubly-indexed moment matrix over ((a,m),(b,n)), read-only view."""
    arr = data.r_matrix().copy()
    return arr


def neumann_inverse(r_tilde: np.ndarray, method: str = "solve", cfg=None) -> np.ndarray:
    """Inverse of (I - r_tilde) by direct solve or by the geometric series."""
    cfg = cfg or DEFAULT_TOLERANCES
    r_tilde = np.asarray(r_tilde, dtype=complex)
    if r_tilde.ndim != 2 or r_tilde.shape[0] != r_tilde.shape[1]:
        raise DomainError("expected a square matrix")
    size = r_tilde.shape[0]
    v = np.ones(size, dtype=complex) / math.sqrt(size)
    radius = 0.0
    for _ in range(30):
        v_next = r_tilde @ v
        norm = float(np.linalg.norm(v_next))
        if norm == 0.0:
            radius = 0.0
            break
        radius = norm
        v = v_next / norm
    if radius >= 1.0:
        raise ConvergenceError(f"series inverse diverges: spectral radius {radius:.3f}")
    eye = np.eye(size, dtype=complex)
    if method == "solve":
        return np.linalg.solve(eye - r_tilde, eye)
    if method != "neumann":
        raise DomainError("method must be 'solve' or 'neumann'")
    total = eye.copy()
    term = eye.copy()
    for _ in range(500):
        term = term @ r_tilde
        total += term
        if float(np.max(np.abs(term))) < 1e-16 * max(1.0, float(np.max(np.abs(total)))):
            return total
    raise ConvergenceError("geometric matrix series did not settle")


def _p_row(data: SchottkyData, x: complex) -> np.ndarray:
    row = np.zeros(data.size, dtype=complex)
    for a in data.labels():
        sq = data.sqrt_rho_of(a)
        for m in range(data.N):
            row[data.slot(a, m)] = sq**m * psi0_partial(
                data.p, 0, m, x, data.w_of(a), data.f_coeffs
            )
    return row


def _q_col(data: SchottkyData, y: complex, j: int = 0) -> np.ndarray:
    # j-th plain y-derivative of the column q(y)
    col = np.zeros(data.size, dtype=complex)
    sign = (-1.0) ** data.p
    for a in data.labels():
        sq = data.sqrt_rho_of(a)
        for m in range(data.N):
            col[data.slot(a, m)] = (
                sign
                * sq ** (m + 1)
                * psi0_partial(data.p, m, j, data.w_of(-a), y, data.f_coeffs)
            )
    return col


def kernel_vectors(data: SchottkyData, x, y) -> tuple:
    """Row p(x), column q(y), and the shifted row p~(x) = p(x) Delta."""
    p_row = _p_row(data, complex(x))
    q_col = _q_col(data, complex(y))
    p_tilde = p_row @ data.delta_matrix()
    return p_row, q_col, p_tilde


def psi_full(data: SchottkyData, x, y, diagnostics: dict | None = None) -> FormValue:
    """Dressed kernel psi0 + p~(x) (I - R~)^{-1} q(y), tagged dx^p dy^{1-p}.

    The truncation error estimate reported through `diagnostics` is a
    step-doubling bound: twice the change of the correction term when the
    last two modes are dropped.
    """
    x, y = complex(x), complex(y)
    base = psi0(data.p, x, y, data.f_coeffs)
    correction = _psi_correction(data, x, y, data.N)
    if diagnostics is not None:
        if not any(data.rho):
            estimate = 0.0  # correction is identically zero
        elif data.N - 2 >= 2 * data.p:
            shrunk = _psi_correction(data, x, y, data.N - 2)
            estimate = 2.0 * abs(correction - shrunk)
        else:
            estimate = 2.0 * abs(correction)
        diagnostics["truncation_error_estimate"] = estimate
    weights = (("x", data.p), ("y", 1 - data.p))
    return FormValue(base + correction, weights)


def _psi_correction(data: SchottkyData, x, y, modes: int) -> complex:
    if modes == data.N:
        _, q_col, p_tilde = kernel_vectors(data, x, y)
        solved = data.resolvent() @ q_col
        return complex(p_tilde @ solved)

    def build():
        return SchottkyData(
            data.g, data.w, data.rho, data.p, modes, data.f_coeffs, data.cfg
        )

    shrunk = data._memo(("shrunk", modes), build)
    return _psi_correction(shrunk, x, y, modes)


def chi_theta(data: SchottkyData, x, include_theta: bool = True) -> tuple:
    """Rows chi_a(x; l) for a in ±{1..g} and theta_a(x; l) for a in {1..g}.

    chi is computed with the rho^{-l/2} rescaling cancelled analytically
    against the matrix entries, so rho = 0 stays finite; theta entries
    carry the dx^p weight tag.  theta requires integer powers rho^{p-1-l},
    so rho = 0 is rejected when l > p-1 would demand a negative power;
    pass include_theta=False to read chi alone in that regime.
    """
    x = complex(x)
    p_tilde = _p_row(data, x) @ data.delta_matrix()
    u = p_tilde @ data.resolvent()
    n_ell = 2 * data.p - 1
    chi = {}
    for a in data.labels():
        row = np.zeros(n_ell, dtype=complex)
        for ell in range(n_ell):
            direct = psi0_partial(data.p, 0, ell, x, data.w_of(a), data.f_coeffs)
            summed = 0j
            for b in data.labels():
                sq_b = data.sqrt_rho_of(b)
                for n in range(data.N):
                    if b == -a:
                        entry = (-1.0) ** data.p * sq_b ** (n + 1) * E_moment(
                            n, ell, data.w_of(a), data.f_coeffs, data.p
                        )
                    else:
                        entry = (
                            (-1.0) ** data.p
                            * sq_b ** (n + 1)
                            * psi0_partial(
                                data.p, n, ell, data.w_of(-b), data.w_of(a), data.f_coeffs
                            )
                        )
                    summed += u[data.slot(b, n)] * entry
            row[ell] = direct + summed
        chi[a] = row
    if not include_theta:
        return chi, None
    theta = {}
    for a in range(1, data.g + 1):
        rho_a = data.rho_of(a)
        entries = []
        for ell in range(n_ell):
            expo = data.p - 1 - ell
            if rho_a == 0 and expo < 0:
                raise DomainError("theta undefined at rho = 0 for l > p-1")
            power = rho_a**expo if expo >= 0 else rho_a ** float(expo)
            value = chi[a][ell] + (-1.0) ** data.p * power * chi[-a][2 * data.p - 2 - ell]
            entries.append(FormValue(value, (("x", data.p),)))
        theta[a] = entries
    return chi, theta


def psi_partial_y(data: SchottkyData, j: int, x, y) -> complex:
    """Plain j-th y-derivative of the dressed kernel, in closed form."""
    if j < 0:
        raise DomainError("derivative order must be nonnegative")
    x, y = complex(x), complex(y)
    base = psi0_partial(data.p, 0, j, x, y, data.f_coeffs)
    p_tilde = _p_row(data, x) @ data.delta_matrix()
    dq = _q_col(data, y, j)
    return complex(base + p_tilde @ (data.resolvent() @ dq))


def genusg_reduce(family, data: SchottkyData, points, compare_channels: bool = False):
    """Kernel-route reduction sum_k sum_j d^j_y psi_p(y_{n+1}, y_k) Z(mu_{k,j}).

    With compare_channels=True the family must expose o_values(points)
    (per handle a: length-(2p-1) vectors); then the theta-route assembly
    and the absolute difference of the two routes are returned as well.
    """
    pts = [complex(v) for v in points]
    if len(pts) < 2:
        raise DomainError("need at least one base point plus the expansion point")
    y_new = pts[-1]
    base = pts[:-1]
    weights = (("x", data.p), ("y", 1 - data.p))
    total = 0j
    for k, y_k in enumerate(base, start=1):
        streak = 0
        for j in range(data.cfg.q_order + 1):
            kern = psi_partial_y(data, j, y_new, y_k)
            weight = family.evaluate(tuple(base), ((k, 1, j),))
            term = kern * weight
            total += term
            if abs(term) < data.cfg.abs_tol:
                streak += 1
                if streak >= 3:
                    break
            else:
                streak = 0
    kernel_form = FormValue(total, weights)
    if not compare_channels:
        return kernel_form
    if not hasattr(family, "o_values"):
        raise DomainError("family supplies no channel data")
    _, theta = chi_theta(data, y_new)
    o_table = family.o_values(tuple(base))
    channel_total = 0j
    for a in range(1, data.g + 1):
        o_vec = np.asarray(o_table[a - 1], dtype=complex)
        if o_vec.shape != (2 * data.p - 1,):
            raise DomainError("each channel vector must have length 2p-1")
        for ell in range(2 * data.p - 1):
            channel_total += theta[a][ell].value * o_vec[ell]
    channel_form = FormValue(channel_total, weights)
    residual = abs(kernel_form.value - channel_form.value)
    return kernel_form, channel_form, residual
