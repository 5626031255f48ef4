"""Checks for the Schottky-sphere kernel stack."""

import math
import random

import numpy as np
import pytest
import sympy as sp

from weierkit.errors import ConvergenceError, DomainError, PoleError
from weierkit.genusg import (
    E_moment,
    FormValue,
    SchottkyData,
    build_R_genusg,
    chi_theta,
    genusg_reduce,
    kernel_vectors,
    neumann_inverse,
    psi0,
    psi0_partial,
    psi_full,
    psi_partial_y,
)
from weierkit.series import TruncatedSeries

W2 = (-1.2 + 0.3j, 1.4 + 0.1j)
W4 = (-2.1 + 0.2j, 1.9 - 0.1j, -0.3 - 2.2j, 0.5 + 2.3j)

F0 = TruncatedSeries.from_dict({-1: 2, 0: 3, 2: 1}, 3)
F2 = TruncatedSeries.from_dict({0: 1, 1: -2}, 2)
TAILS = (F0, None, F2)


def make_g1(rho=0.01, p=1, N=4, f=None):
    return SchottkyData(1, W2, (rho,), p, N, f)


def make_g2(rho=(0.01, 0.008), p=1, N=6, f=None):
    return SchottkyData(2, W4, rho, p, N, f)


class TableFamily:
    def __init__(self, table):
        self.table = dict(table)

    def evaluate(self, points, mu_word):
        ((k, _, j),) = mu_word
        return self.table.get((k, j), 0.0)


class ChannelFamily(TableFamily):
    def __init__(self, table, o_table):
        super().__init__(table)
        self.o_table = o_table

    def o_values(self, points):
        return self.o_table


def sym_psi0_oracle(p, tails, m, n, x_val, y_val):
    x, y = sp.symbols("x y")
    expr = 1 / (x - y)
    for ell, series in enumerate(tails):
        if series is None:
            continue
        f_expr = sum(c * x**e for e, c in series.items())
        expr += f_expr * y**ell
    deriv = sp.diff(expr, x, m, y, n)
    return complex(deriv.subs({x: x_val, y: y_val}).evalf())


def test_psi0_basics():
    x, y = 0.3 + 0.4j, -0.2 + 0.1j
    assert psi0(1, x, y) == 1 / (x - y)
    assert abs(psi0(1, x, y, (1,)) - (1 / (x - y) + 1)) < 1e-15
    # pole part cancels in the symmetrized combination
    f0 = TruncatedSeries.from_dict({-1: 1, 1: 2}, 2)
    lhs = psi0(1, x, y, (f0,)) + psi0(1, y, x, (f0,))
    rhs = f0.evaluate(x) + f0.evaluate(y)
    assert abs(lhs - rhs) < 1e-12
    with pytest.raises(PoleError):
        psi0(1, x, x)
    with pytest.raises(DomainError):
        psi0(0, x, y)
    with pytest.raises(DomainError):
        psi0(1, x, y, (1, 2))
    with pytest.raises(DomainError):
        psi0_partial(1, -1, 0, x, y)


def test_psi0_partial_against_sympy():
    for x_val, y_val in ((0.7 + 0.2j, -0.4 + 0.5j), (1.3 - 0.6j, 0.2 + 0.9j)):
        for m in range(4):
            for n in range(4):
                got = psi0_partial(2, m, n, x_val, y_val, TAILS)
                want = sym_psi0_oracle(2, TAILS, m, n, x_val, y_val)
                assert abs(got - want) < 1e-9 * max(1.0, abs(want))


def test_psi0_partial_stepwise_fd():
    # each derivative order matches a central difference of the previous
    x, y = 0.7 + 0.2j, -0.4 + 0.5j
    h = 1e-5
    for m in range(1, 4):
        for n in range(0, 3):
            fd = (
                psi0_partial(2, m - 1, n, x + h, y, TAILS)
                - psi0_partial(2, m - 1, n, x - h, y, TAILS)
            ) / (2 * h)
            got = psi0_partial(2, m, n, x, y, TAILS)
            assert abs(fd - got) < 1e-5 * max(1.0, abs(got))
            fd_y = (
                psi0_partial(2, m, n, x, y + h, TAILS)
                - psi0_partial(2, m, n, x, y - h, TAILS)
            ) / (2 * h)
            got_y = psi0_partial(2, m, n + 1, x, y, TAILS)
            assert abs(fd_y - got_y) < 1e-5 * max(1.0, abs(got_y))


def test_E_moment_values():
    y = 0.6 - 0.3j
    assert E_moment(0, 0, y, None, 2) == 0
    assert E_moment(0, 0, y, (2.5,), 1) == 2.5
    # every retained monomial is annihilated past degree 2p-2
    assert E_moment(0, 1, y, (2.5,), 1) == 0
    assert E_moment(2, 5, y, TAILS, 2) == 0
    x_sym = sp.symbols("x")
    for m in range(3):
        for n in range(3):
            want = 0j
            for ell, series in enumerate(TAILS):
                if series is None:
                    continue
                f_expr = sum(c * x_sym**e for e, c in series.items())
                df = sp.diff(f_expr, x_sym, m).subs({x_sym: y}).evalf()
                mono = (
                    math.factorial(ell) / math.factorial(ell - n) * y ** (ell - n)
                    if n <= ell
                    else 0
                )
                want += complex(df) * mono
            got = E_moment(m, n, y, TAILS, 2)
            assert abs(got - want) < 1e-10 * max(1.0, abs(want))


def test_schottky_validation():
    with pytest.raises(DomainError):
        SchottkyData(0, (), (), 1, 4)
    with pytest.raises(DomainError):
        SchottkyData(1, (0.1,), (0.01,), 1, 4)
    with pytest.raises(DomainError):
        SchottkyData(1, (0.1, 0.1), (0.01,), 1, 4)
    with pytest.raises(DomainError):
        SchottkyData(1, W2, (0.01, 0.02), 1, 4)
    with pytest.raises(DomainError):
        SchottkyData(1, W2, (0.01,), 9, 32)
    with pytest.raises(DomainError):
        SchottkyData(1, W2, (0.01,), 2, 3)
    # close handles with a large scalar exceed the convergence region
    with pytest.raises(ConvergenceError):
        SchottkyData(1, (-0.3, 0.3), (0.5,), 1, 4)
    # the degenerate scalar is accepted
    data = make_g1(rho=0.0)
    assert data.spectral_radius_estimate() == 0.0


def test_r_matrix_structure():
    zero = build_R_genusg(make_g1(rho=0.0))
    assert np.count_nonzero(zero) == 0
    data = make_g1(rho=0.04, N=3)
    r = build_R_genusg(data)
    # no tails: the diagonal (a = -b) blocks vanish identically
    for m in range(3):
        for n in range(3):
            assert r[data.slot(1, m), data.slot(-1, n)] == 0
            assert r[data.slot(-1, m), data.slot(1, n)] == 0
    # hand evaluation of the leading off-diagonal entry
    expect = -math.sqrt(0.04) / (W2[0] - W2[1])
    assert abs(r[data.slot(1, 0), data.slot(1, 0)] - expect) < 1e-14
    # generic entry against the closed-form partial
    m, n = 2, 1
    sq = data.sqrt_rho_of(1)
    expect = -(sq ** (m + 1)) * sq**n * psi0_partial(1, m, n, W2[0], W2[1])
    assert abs(r[data.slot(1, m), data.slot(1, n)] - expect) < 1e-14
    # with tails the diagonal blocks carry the moment sums
    tailed = make_g1(rho=0.04, p=2, N=4, f=TAILS)
    rt = build_R_genusg(tailed)
    sq = tailed.sqrt_rho_of(1)
    expect = sq**3 * E_moment(1, 1, W2[0], TAILS, 2)
    assert abs(rt[tailed.slot(1, 1), tailed.slot(-1, 1)] - expect) < 1e-14


def test_neumann_inverse_routes():
    assert np.array_equal(neumann_inverse(np.zeros((5, 5))), np.eye(5))
    rng = np.random.default_rng(17)
    raw = rng.normal(size=(10, 10)) + 1j * rng.normal(size=(10, 10))
    raw *= 0.5 / max(abs(np.linalg.eigvals(raw)))
    solved = neumann_inverse(raw)
    summed = neumann_inverse(raw, method="neumann")
    assert np.max(np.abs(solved - summed)) < 1e-10
    residual = (np.eye(10) - raw) @ solved - np.eye(10)
    assert np.max(np.abs(residual)) < 1e-10
    with pytest.raises(ConvergenceError):
        neumann_inverse(raw * 2.5)
    with pytest.raises(DomainError):
        neumann_inverse(raw[:2, :5])
    with pytest.raises(DomainError):
        neumann_inverse(raw, method="cramer")


def test_kernel_vectors_components():
    x, y = 0.3 + 0.4j, -0.2 + 0.1j
    data = make_g2(rho=(0.04, 0.09), N=5)
    p_row, q_col, p_tilde = kernel_vectors(data, x, y)
    for a in data.labels():
        assert abs(p_row[data.slot(a, 0)] - 1 / (x - data.w_of(a))) < 1e-14
        expect_q = -data.sqrt_rho_of(a) / (data.w_of(-a) - y)
        assert abs(q_col[data.slot(a, 0)] - expect_q) < 1e-14
    # the shifted row reads 2p-1 slots ahead within each block
    shift = 2 * data.p - 1
    for a in data.labels():
        for n in range(data.N):
            expect = p_row[data.slot(a, n + shift)] if n + shift < data.N else 0.0
            assert p_tilde[data.slot(a, n)] == expect
    # sewing off: only the order-zero slots of the row survive
    flat = make_g2(rho=(0.0, 0.0), N=5)
    p0, q0, _ = kernel_vectors(flat, x, y)
    assert np.count_nonzero(q0) == 0
    for a in flat.labels():
        assert p0[flat.slot(a, 0)] == psi0(1, x, flat.w_of(a))
        assert np.count_nonzero(p0[flat.slot(a, 1) : flat.slot(a, flat.N - 1) + 1]) == 0


def test_psi_full_degeneration_and_weights():
    x, y = 0.3 + 0.4j, -0.2 + 0.1j
    for p in (1, 2, 3, 4):
        data = SchottkyData(1, W2, (0.0,), p, 2 * p, TAILS[: 2 * p - 1])
        form = psi_full(data, x, y)
        assert form.value == psi0(p, x, y, data.f_coeffs)
        assert form.weight_of("x") == p
        assert form.weight_of("y") == 1 - p


def test_psi_full_truncation_stability():
    x, y = 0.3 + 0.4j, -0.2 + 0.1j
    small = make_g2(rho=(0.01, 0.008), N=6)
    big = make_g2(rho=(0.01, 0.008), N=10)
    diag = {}
    v_small = psi_full(small, x, y, diagnostics=diag).value
    v_big = psi_full(big, x, y).value
    assert abs(v_small - v_big) < 1e-8
    assert abs(v_small - v_big) <= diag["truncation_error_estimate"]


def test_psi_full_pole_probe():
    x = 0.3 + 0.4j
    data = make_g2(N=6)
    probes = []
    for dist in (1e-3, 1e-4, 1e-5):
        y = x - dist
        probes.append(dist * psi_full(data, x, y).value)
    errs = [abs(v - 1) for v in probes]
    assert errs[0] > errs[1] > errs[2]
    richardson = (10 * probes[2] - probes[1]) / 9
    assert abs(richardson - 1) < 1e-6


def test_chi_theta_structure():
    x = 0.3 + 0.4j
    data = SchottkyData(1, W2, (0.04,), 2, 6, TAILS)
    chi, theta = chi_theta(data, x)
    # unrescaled assembly from the raw matrices at nonzero rho
    p_row, _, p_tilde = kernel_vectors(data, x, -0.2 + 0.1j)
    vec = p_row + p_tilde @ data.resolvent() @ build_R_genusg(data)
    for a in (1, -1):
        for ell in range(3):
            direct = data.rho_of(a) ** (-ell / 2) * vec[data.slot(a, ell)]
            assert abs(chi[a][ell] - direct) < 1e-10 * max(1.0, abs(direct))
    # theta recombination and its weight tag
    for ell in range(3):
        expect = chi[1][ell] + 0.04 ** (1 - ell) * chi[-1][2 - ell]
        assert abs(theta[1][ell].value - expect) < 1e-12 * max(1.0, abs(expect))
        assert theta[1][ell].weight_of("x") == 2
    # p=1: single slot, opposite handles subtract at scalar power zero
    flat = make_g1(rho=0.02)
    chi1, theta1 = chi_theta(flat, x)
    assert abs(theta1[1][0].value - (chi1[1][0] - chi1[-1][0])) < 1e-14
    # rho = 0 keeps chi finite and equal to the bare kernel derivatives
    frozen = SchottkyData(1, W2, (0.0,), 2, 6, TAILS)
    chi0, nothing = chi_theta(frozen, x, include_theta=False)
    assert nothing is None
    for a in (1, -1):
        for ell in range(3):
            want = psi0_partial(2, 0, ell, x, frozen.w_of(a), TAILS)
            assert chi0[a][ell] == want
    # negative scalar powers are rejected at rho = 0
    with pytest.raises(DomainError):
        chi_theta(frozen, x)
    # ... unless p = 1, where the exponent never goes negative
    chi_theta(make_g1(rho=0.0), x)


def test_psi_partial_y_descent():
    x, y = 0.3 + 0.4j, -0.2 + 0.1j
    data = make_g2(N=6)
    assert psi_partial_y(data, 0, x, y) == psi_full(data, x, y).value
    h = 1e-5
    for j in (1, 2):
        fd = (
            psi_partial_y(data, j - 1, x, y + h) - psi_partial_y(data, j - 1, x, y - h)
        ) / (2 * h)
        got = psi_partial_y(data, j, x, y)
        assert abs(fd - got) < 1e-5 * max(1.0, abs(got))
    with pytest.raises(DomainError):
        psi_partial_y(data, -1, x, y)


def test_genusg_reduce_families():
    data = make_g2(N=6)
    points = [0.3 + 0.4j, -0.2 + 0.1j, 1.1 + 1.2j]
    zero = genusg_reduce(TableFamily({}), data, points)
    assert zero.value == 0
    assert zero.weight_of("x") == data.p
    single = genusg_reduce(TableFamily({(1, 0): 1.0}), data, points)
    want = psi_full(data, points[-1], points[0]).value
    assert abs(single.value - want) < 1e-12
    with pytest.raises(DomainError):
        genusg_reduce(TableFamily({}), data, points[:1])


def test_genusg_reduce_linearity():
    rng = random.Random(31)
    data = make_g1(rho=0.02, N=4)
    points = [0.3 + 0.4j, -0.2 + 0.1j, 1.1 + 1.2j]

    def random_table():
        return {
            (k, j): complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
            for k in (1, 2)
            for j in range(3)
        }

    for _ in range(3):
        table_f, table_g = random_table(), random_table()
        alpha = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        beta = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        mixed = {
            key: alpha * table_f.get(key, 0.0) + beta * table_g.get(key, 0.0)
            for key in set(table_f) | set(table_g)
        }
        lhs = genusg_reduce(TableFamily(mixed), data, points).value
        rhs = alpha * genusg_reduce(TableFamily(table_f), data, points).value
        rhs += beta * genusg_reduce(TableFamily(table_g), data, points).value
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_genusg_reduce_channels():
    data = make_g2(N=6)
    points = [0.3 + 0.4j, -0.2 + 0.1j, 1.1 + 1.2j]
    o_table = [np.array([0.5 - 0.1j]), np.array([1.5 + 0.2j])]
    family = ChannelFamily({(1, 0): 1.0}, o_table)
    kernel_form, channel_form, residual = genusg_reduce(
        family, data, points, compare_channels=True
    )
    _, theta = chi_theta(data, points[-1])
    manual = theta[1][0].value * o_table[0][0] + theta[2][0].value * o_table[1][0]
    assert abs(channel_form.value - manual) < 1e-12 * max(1.0, abs(manual))
    assert residual == abs(kernel_form.value - channel_form.value)
    with pytest.raises(DomainError):
        genusg_reduce(TableFamily({}), data, points, compare_channels=True)
    bad = ChannelFamily({}, [np.ones(3), np.ones(1)])
    with pytest.raises(DomainError):
        genusg_reduce(bad, data, points, compare_channels=True)


def test_form_value_algebra():
    a = FormValue(2 + 1j, (("x", 2),))
    b = FormValue(3 - 1j, (("x", 1), ("y", -1)))
    total = a + b
    assert total.value == 5 and total.weights == (("x", 2),)
    product = a * b
    assert product.value == (2 + 1j) * (3 - 1j)
    assert product.weight_of("x") == 3
    assert product.weight_of("y") == -1
    scaled = 2 * a
    assert scaled.value == 4 + 2j and scaled.weights == a.weights
    assert abs(a) == abs(2 + 1j)
