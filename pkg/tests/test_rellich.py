import math

import numpy as np
import pytest

from qplab import rellich as rl
from qplab import rootfind as rf
from qplab.errors import HypothesisViolation, InconsistencyError, NoCleanAnnulus
from qplab.green import eigensolve
from qplab.lattice import (
    OperatorSpec,
    Phase,
    Region,
    amo_spec,
    assemble_restriction,
    build_box,
    cosine_potential,
    golden_frequency,
)


@pytest.fixture(scope="module")
def amo():
    return amo_spec(0.01)


def eps0_spec():
    return OperatorSpec(1, 0.0, golden_frequency(horizon=1000), cosine_potential())


def test_schur_determinant_eps0_is_potential():
    # block A = {0}, eps = 0: s(theta, E) = E - v(theta)
    spec = eps0_spec()
    sd = rl.SchurDeterminant(spec, build_box(5, 1), [(0,)])
    for theta, E in [(0.1, 0.3), (0.42, -1.0)]:
        assert sd.value(theta, E) == pytest.approx(E - spec.potential(theta), abs=1e-12)


def test_schur_determinant_derivatives_match_finite_differences():
    spec = amo_spec(0.05)
    sd = rl.SchurDeterminant(spec, build_box(6, 1), [(0,)])
    theta, E = 0.26, 0.05
    h = 1e-6
    _, dtheta = sd._value_and_derivative(theta, E, "theta")
    fd = (sd.value(theta + h, E) - sd.value(theta - h, E)) / (2 * h)
    assert dtheta == pytest.approx(fd, rel=1e-6)
    _, dE = sd._value_and_derivative(theta, E, "E")
    fdE = (sd.value(theta, E + h) - sd.value(theta, E - h)) / (2 * h)
    assert dE == pytest.approx(fdE, rel=1e-6)


def test_schur_det_vanishes_at_block_eigenvalues():
    spec = amo_spec(0.02)
    block = build_box(8, 1)
    sd = rl.SchurDeterminant(spec, block, [(0,)])
    theta = 0.251
    h = sd.block_matrix(theta)
    ev = np.linalg.eigvalsh(h.real)
    E0 = float(ev[np.argmin(np.abs(ev))])  # eigenvalue nearest 0
    assert abs(sd.value(theta, E0)) < 1e-8


def test_theta_roots_eps0_cosine():
    spec = eps0_spec()
    sd = rl.SchurDeterminant(spec, build_box(4, 1), [(0,)])
    sfun = sd.theta_function(Estar=0.0)
    rs = rl.theta_roots(sfun, center=0.25, core_radius=0.02, ext_radius=0.05,
                        expected_count=1, Estar=0.0)
    assert len(rs.roots) == 1
    assert abs(rs.roots[0] - 0.25) < 1e-9


def test_theta_roots_count_mismatch_is_violation():
    spec = eps0_spec()
    sd = rl.SchurDeterminant(spec, build_box(4, 1), [(0,)])
    sfun = sd.theta_function(Estar=0.0)
    with pytest.raises(HypothesisViolation) as exc:
        rl.theta_roots(sfun, 0.25, 0.02, 0.05, expected_count=2)
    assert exc.value.expected == 2 and exc.value.observed == 1


def test_theta_roots_match_grid_determinant_oracle(amo):
    block = build_box(20, 1)
    sd = rl.SchurDeterminant(amo, block, [(0,)])
    h = sd.block_matrix(0.25).real
    ev = np.linalg.eigvalsh(h)
    Estar = float(ev[np.argmin(np.abs(ev))])  # target an actual eigenvalue at theta=0.25
    sfun = sd.theta_function(Estar)
    rs = rl.theta_roots(sfun, 0.25, 0.01, 0.03, expected_count=1, Estar=Estar)
    root = rs.roots[0]
    # oracle: sign change of det(H_B(theta) - E*) on a fine real grid
    grid = np.linspace(0.24, 0.26, 2001)
    vals = []
    for t in grid:
        vals.append(np.prod(np.sign(np.linalg.eigvalsh(
            assemble_restriction(amo, Phase(t), block, energy=Estar)))))
    vals = np.asarray(vals)
    crossings = grid[np.where(np.diff(vals) != 0)[0]]
    assert len(crossings) >= 1
    assert min(abs(root.real - c) for c in crossings) < 1e-3  # grid pitch 1e-5... sign step
    # fixed point: |det H_B - E*| small at the root
    m = assemble_restriction(amo, Phase(root.real, root.imag), block, energy=Estar)
    sign, logdet = np.linalg.slogdet(m)
    # compare to the determinant scale away from the root
    m_off = assemble_restriction(amo, Phase(root.real + 0.005, root.imag), block, energy=Estar)
    _, logdet_off = np.linalg.slogdet(m_off)
    assert logdet < logdet_off - 5


def test_e_branches_eps0():
    spec = eps0_spec()
    sd = rl.SchurDeterminant(spec, build_box(3, 1), [(0,)])
    theta_star = 0.26
    sfun = sd.energy_function(theta_star)
    block = sd.block_matrix(theta_star)
    Estar = float(spec.potential(theta_star).real)
    bs = rl.e_branches(sfun, Estar, 0.05, block)
    assert len(bs.values) == 1
    assert bs.values[0] == pytest.approx(Estar, abs=1e-10)

    # disk containing no eigenvalue -> empty
    bs2 = rl.e_branches(sfun, Estar + 1.0, 0.05, block)
    assert bs2.values == ()


def test_e_branches_match_eigensolve(amo):
    block = build_box(10, 1)
    sd = rl.SchurDeterminant(amo, block, [(0,)])
    theta_star = 0.2503
    h = sd.block_matrix(theta_star).real
    ev = np.linalg.eigvalsh(h)
    Estar = float(ev[np.argmin(np.abs(ev))]) + 1e-4
    sfun = sd.energy_function(theta_star)
    bs = rl.e_branches(sfun, Estar, 0.05, h)
    inside = [e for e in ev if abs(e - Estar) < 0.05]
    assert len(bs.values) == len(inside)
    assert np.abs(np.sort_complex(np.asarray(bs.values)) - np.sort(inside)).max() < 1e-8
    assert bs.cross_validation_error < 1e-8


def test_branch_window_select():
    # isolated diagonal entries: first candidate succeeds
    h = np.diag([0.0, 1.0, -1.0, 2.0])
    sel = rl.branch_window_select(h, Estar=0.0, candidates=[0.09, 0.03, 0.01])
    assert sel.candidate_index == 0
    assert sel.eigenvalue_count_inside == 1

    # an eigenvalue planted in every candidate annulus
    cands = [0.2, 0.1]
    evs = []
    for dt in cands:
        evs.append(0.5 * (2 * dt ** 2 + 0.5 * math.sqrt(dt)))
    h_bad = np.diag([0.0] + evs)
    with pytest.raises(NoCleanAnnulus):
        rl.branch_window_select(h_bad, 0.0, cands)


def test_branch_window_annulus_empty_by_eigensolve(amo):
    block = build_box(12, 1)
    sd = rl.SchurDeterminant(amo, block, [(0,)])
    h = sd.block_matrix(0.2507).real
    ev = np.linalg.eigvalsh(h)
    Estar = float(ev[np.argmin(np.abs(ev))]) + 1e-5  # centre the window on a branch
    sel = rl.branch_window_select(h, Estar=Estar, candidates=[0.05, 0.02, 0.008])
    dist = np.abs(ev - Estar)
    inner, outer = sel.annulus
    assert not np.any((dist > inner) & (dist < outer))
    assert sel.eigenvalue_count_inside == 1


def test_weierstrass_compare_exact_polynomial():
    roots = [0.1 + 0.01j, -0.2]

    def s(z):
        return (z - roots[0]) * (z - roots[1])

    cmp = rl.weierstrass_compare(s, roots, center=0.0, radius=0.3, delta_class=0.5)
    assert cmp.ratio_min == pytest.approx(1.0, abs=1e-12)
    assert cmp.ratio_max == pytest.approx(1.0, abs=1e-12)
    assert cmp.passed


def test_weierstrass_compare_eps0_matches_condition_constant():
    spec = eps0_spec()
    sd = rl.SchurDeterminant(spec, build_box(3, 1), [(0,)])
    sfun = sd.theta_function(Estar=0.0)
    cmp = rl.weierstrass_compare(sfun, [0.25], center=0.25, radius=0.01, delta_class=1e-2)
    # near the simple root, s(theta,0) = -v(theta) ~ v'(0.25)(theta-0.25)
    slope = abs(spec.potential(0.25, order=1))
    assert cmp.ratio_min == pytest.approx(slope, rel=0.05)
    assert cmp.passed


def test_coefficient_drift_zero_for_identical():
    def coeffs(z):
        z = np.asarray(z, dtype=complex)
        return np.stack([np.ones_like(z), np.sin(z)])

    rep = rl.coefficient_drift(coeffs, coeffs, center=0.3, radius=0.05,
                               order_max=4, budget=1e-3)
    assert all(r.drift < 1e-14 for r in rep.rows)
    assert rep.passed


def test_coefficient_drift_constant_offset():
    def p(z):
        z = np.asarray(z, dtype=complex)
        return np.stack([np.ones_like(z), np.cos(z)])

    def q(z):
        z = np.asarray(z, dtype=complex)
        return np.stack([np.ones_like(z), np.cos(z) + 0.5])

    rep = rl.coefficient_drift(p, q, center=0.0, radius=0.1, order_max=3, budget=0.7)
    assert rep.rows[0].drift == pytest.approx(0.5, abs=1e-10)
    assert rep.rows[1].drift < 1e-9  # constant difference: derivatives vanish
    assert rep.passed


def test_eigenvalue_stability_examples():
    h = np.diag([1.0, 2.0])
    rep = rl.eigenvalue_stability(h, h)
    assert rep.matched_distance == 0.0 and rep.ok

    rep2 = rl.eigenvalue_stability(h, h + 0.01 * np.eye(2))
    assert rep2.matched_distance == pytest.approx(0.01 * math.sqrt(2), abs=1e-12)
    assert rep2.bound == pytest.approx(math.sqrt(2) * 0.01 * math.sqrt(2), abs=1e-12)
    assert rep2.ok


def test_eigenvalue_stability_random_trials():
    rng = np.random.default_rng(17)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        a = rng.standard_normal((n, n))
        h1 = (a + a.T) / 2
        h2 = h1 + 0.1 * rng.standard_normal((n, n))
        assert rl.eigenvalue_stability(h1, h2).ok
