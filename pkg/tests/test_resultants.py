import math

import numpy as np
import pytest

from qplab import resultants as rs
from qplab.errors import DomainError
from qplab.lattice import Potential, amo_spec, cosine_potential


def trig(coeff_pairs, eta=0.25):
    full = []
    for k, c in coeff_pairs:
        full.append((k, c))
        full.append((-k, np.conj(c)))
    return Potential(tuple(full), eta=eta)


def test_resultant_examples():
    p = rs.MonicPoly.from_roots([1.0, 2.0])
    q = rs.MonicPoly.from_roots([3.0])
    assert rs.resultant(p, q) == pytest.approx((1 - 3) * (2 - 3))

    shared = rs.MonicPoly.from_roots([1.0, 5.0])
    q2 = rs.MonicPoly.from_roots([1.0])
    assert abs(rs.resultant(shared, q2)) < 1e-12


def test_resultant_matches_root_products():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        ra = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        rb = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        p, q = rs.MonicPoly.from_roots(ra), rs.MonicPoly.from_roots(rb)
        prod = np.prod([a - b for a in ra for b in rb])
        val = rs.resultant(p, q)
        assert val == pytest.approx(prod, rel=1e-10, abs=1e-12)


def test_resultant_multiplicative():
    rng = np.random.default_rng(8)
    for _ in range(25):
        f = rs.MonicPoly.from_roots(rng.standard_normal(2))
        g = rs.MonicPoly.from_roots(rng.standard_normal(2))
        h = rs.MonicPoly.from_roots(rng.standard_normal(3))
        fg = rs.MonicPoly.from_roots(np.concatenate([f.roots(), g.roots()]))
        lhs = rs.resultant(fg, h)
        rhs = rs.resultant(f, h) * rs.resultant(g, h)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10)


def test_resultant_zero_iff_close_roots():
    rng = np.random.default_rng(12)
    for _ in range(50):
        ra = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        rb = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        p, q = rs.MonicPoly.from_roots(ra), rs.MonicPoly.from_roots(rb)
        min_gap = min(abs(a - b) for a in ra for b in rb)
        val = abs(rs.resultant(p, q))
        if val < 1e-12:
            assert min_gap < 1e-7
        if min_gap > 1e-1:
            assert val > 1e-12


def test_condition_transversality_cosine():
    v = cosine_potential()
    thetas = np.linspace(0, 1, 160, endpoint=False)
    phis = np.linspace(0.002, 0.998, 159)
    rep = rs.condition_transversality(v, 2, thetas, phis, c_min=1e-3)
    assert rep.passed
    assert rep.s_found <= 1
    assert rep.c_found > 0


def test_condition_transversality_rejects_subperiod():
    v = trig([(2, 0.7)])  # period 1/2
    with pytest.raises(DomainError):
        rs.condition_transversality(v, 2, np.linspace(0, 1, 8), [0.3])


def test_condition_transversality_small_phi_limit():
    # phi -> 0: ratio tends to |d^{l+1} v|, positive where v' != 0
    v = cosine_potential()
    thetas = np.array([0.1])
    phis = np.array([1e-6])
    rep = rs.condition_transversality(v, 1, thetas, phis, c_min=1e-6)
    expected = abs(v(0.1, order=1))
    assert rep.per_order_c[0] == pytest.approx(expected, rel=1e-3)


def test_eliasson_single_factor():
    v = cosine_potential()

    def u(theta, order=0):
        return np.real(v.evaluate(np.asarray(theta), order))

    c1 = v.derivative_sup(1) + 2
    rep = rs.eliasson_product_bound([u], [1], C1=c1, beta=1.0, interval=(0.0, 1.0))
    assert rep.hypotheses_ok and rep.passed


def test_eliasson_hypothesis_failure_reports_factor():
    def u_ok(theta, order=0):
        theta = np.asarray(theta)
        return np.cos(2 * np.pi * theta) * (2 * np.pi) ** order

    def u_bad(theta, order=0):  # violates the lower bound near its flat spot
        theta = np.asarray(theta)
        if order == 0:
            return 1e-9 * np.ones_like(theta)
        return np.zeros_like(theta)

    rep = rs.eliasson_product_bound([u_ok, u_bad], [1, 1], C1=50.0, beta=0.5,
                                    interval=(0.1, 0.2))
    assert not rep.hypotheses_ok
    assert rep.failing_factor == 1


def test_eliasson_two_cosine_factors():
    v = cosine_potential()

    def u1(theta, order=0):
        return np.real(v.evaluate(np.asarray(theta) + 0.13, order))

    def u2(theta, order=0):
        return np.real(v.evaluate(np.asarray(theta) + 0.61, order))

    c1 = v.derivative_sup(2) + 1
    rep = rs.eliasson_product_bound([u1, u2], [1, 1], C1=c1, beta=0.05,
                                    interval=(0.05, 0.12))
    assert rep.hypotheses_ok
    assert rep.passed


def test_eliasson_constant_factors_order_zero():
    beta = 0.8

    def u(theta, order=0):
        theta = np.asarray(theta)
        return beta * np.ones_like(theta) if order == 0 else np.zeros_like(theta)

    # J = 2 constant factors: product derivative at order 0 is beta^2
    rep = rs.eliasson_product_bound([u, u], [0, 0], C1=1.0, beta=beta,
                                    interval=(0.0, 1.0))
    assert rep.hypotheses_ok and rep.passed
    assert rep.min_log_max_derivative == pytest.approx(2 * math.log(beta), abs=1e-9)


def test_sublevel_measure_linear():
    def u(theta, order=0):
        theta = np.asarray(theta)
        if order == 0:
            return theta
        if order == 1:
            return np.ones_like(theta)
        return np.zeros_like(theta)

    rep = rs.sublevel_measure(u, (-1.0, 1.0), epsilon=0.1, N=1, C2=1.0, beta=1.0)
    assert rep.hypotheses_ok
    assert rep.measure_estimate == pytest.approx(0.2, abs=1e-3)
    assert rep.passed


def test_sublevel_measure_saturated():
    def u(theta, order=0):
        theta = np.asarray(theta)
        if order == 0:
            return 0.5 + 0.1 * np.sin(2 * np.pi * theta)
        return 0.1 * (2 * np.pi) ** order * np.ones_like(theta)

    rep = rs.sublevel_measure(u, (0.0, 1.0), epsilon=2.0, N=1, C2=4.0, beta=0.39)
    assert rep.measure_estimate == pytest.approx(1.0)
    assert rep.passed


def test_sublevel_measure_sine_analytic():
    def u(theta, order=0):
        theta = np.asarray(theta)
        return np.sin(2 * np.pi * theta + order * np.pi / 2) * (2 * np.pi) ** order

    eps = 1e-3
    rep = rs.sublevel_measure(u, (0.0, 1.0), epsilon=eps, N=1,
                              C2=(2 * np.pi) ** 2 + 1, beta=0.9)
    analytic = 2 * math.asin(eps) / math.pi
    assert rep.hypotheses_ok
    assert rep.measure_estimate == pytest.approx(analytic, rel=0.05)
    assert rep.passed


def test_resultant_derivative_bounds_polynomial():
    # R polynomial of degree 2 in theta: high-order derivatives vanish
    def R(z):
        return (z - 0.3) * (z + 0.1)

    rep = rs.resultant_derivative_bounds(R, [0.0, 0.2], radius=0.5, L=5,
                                         delta_class=1e-3)
    assert rep.upper_ok
    for row in rep.rows[3:]:
        assert row.max_abs < 1e-9
    assert rep.lower_ok


def test_resultant_derivative_bounds_cosine_difference():
    # eps = 0 surrogate: R(theta) = v(theta) - v(theta + phi)
    v = cosine_potential()
    phi = 0.23

    def R(z):
        return complex(v.evaluate(z) - v.evaluate(z + phi))

    rep = rs.resultant_derivative_bounds(R, np.linspace(0.1, 0.2, 5), radius=0.05,
                                         L=1, delta_class=1e-2,
                                         phi_norm=phi, iota=1)
    assert rep.upper_ok
    assert rep.lower_ok


def test_scan_double_resonance_edge_cases():
    spec = amo_spec(0.05)
    empty = rs.scan_double_resonance(spec, 0.0, 0.1, 5, delta=0.0, theta_cells=100)
    assert empty.flagged_count == 0

    single = rs.scan_double_resonance(spec, 0.0, 0.1, 0, delta=0.1, theta_cells=100)
    assert single.flagged_count == 0


def test_scan_double_resonance_monotone_and_decreasing():
    spec = amo_spec(0.05)
    deltas = [1e-1, 1e-2, 1e-3]
    sets = [rs.scan_double_resonance(spec, 0.0, 2.2, 5, d, theta_cells=4000)
            for d in deltas]
    measures = [s.measure_estimate for s in sets]
    assert measures[0] > measures[1] > measures[2] > 0
    # containment: DR(smaller delta) subset DR(larger delta)
    assert not np.any(sets[1].flags & ~sets[0].flags)
    assert not np.any(sets[2].flags & ~sets[1].flags)
    # witnesses satisfy the defining inequality
    for th, x, y, e in sets[1].witnesses[:10]:
        vx = float(np.real(spec.potential(th + x * spec.frequency.omega[0])))
        vy = float(np.real(spec.potential(th + y * spec.frequency.omega[0])))
        assert x != y
        assert abs(vx - e) < sets[1].delta + 1e-12
        assert abs(vy - e) < sets[1].delta + 1e-12


def test_block_eigenvalue_provider_radius0_is_potential():
    spec = amo_spec(0.05)
    provider = rs.block_eigenvalue_provider(spec, 0)
    th = np.linspace(0, 1, 11)
    vals = provider(th)
    assert vals.shape == (11, 1)
    assert np.allclose(vals[:, 0], np.real(spec.potential.evaluate(th)))


def test_scan_double_resonance_power_law():
    spec = amo_spec(0.05)
    deltas = np.array([1e-1, 1e-2, 1e-3])
    measures = np.array([
        rs.scan_double_resonance(spec, 0.0, 2.2, 5, float(d),
                                 theta_cells=20000).measure_estimate
        for d in deltas
    ])
    assert np.all(np.diff(measures) < 0)
    slope = np.polyfit(np.log(deltas), np.log(measures), 1)[0]
    assert slope > 0
