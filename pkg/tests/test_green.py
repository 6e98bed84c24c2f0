import numpy as np
import pytest

from qplab import green as ge
from qplab import lattice
from qplab.errors import RegimeError, SingularBlock, SingularWindow
from qplab.lattice import Phase, Region, amo_spec, assemble_restriction, build_box


def random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return (a + a.T) / 2


def diagonal_spec(gaps, epsilon=0.0):
    """d=1 spec whose potential is irrelevant; we build matrices directly instead."""
    return None


def test_green_diagonal_example():
    # eps=0, diagonal gaps (2, -2), E=0 -> G = diag(0.5, -0.5)
    spec = lattice.OperatorSpec(
        1, 0.0, lattice.Frequency((0.5 - 1e-9,), 2.0, 1e-12), lattice.cosine_potential()
    )
    region = Region.from_points([(0,), (1,)])
    # v(0) = 2, v(0.5) = -2 at theta=0 with omega ~ 0.5
    g = ge.green(spec, Phase(0.0), 0.0, region)
    assert np.allclose(np.diag(g.matrix), [0.5, -0.5], atol=1e-6)
    assert g.op_norm == pytest.approx(0.5, rel=1e-6)


def test_green_singular_window():
    spec = amo_spec(0.01)
    region = build_box(6, 1)
    h = assemble_restriction(spec, Phase(0.1), region)
    ev = np.linalg.eigvalsh(h)
    with pytest.raises(SingularWindow) as exc:
        ge.green(spec, Phase(0.1), float(ev[3]), region)
    assert exc.value.nearest_eigenvalue_distance is not None
    assert exc.value.nearest_eigenvalue_distance < 1e-8


def test_green_matches_dense_solve_oracle():
    spec = amo_spec(1e-3)
    region = build_box(50, 1)
    theta = Phase(0.137)
    h = assemble_restriction(spec, theta, region)
    ev = np.linalg.eigvalsh(h)
    # midgap energy: centre of the largest spectral gap
    gaps = np.diff(ev)
    k = int(np.argmax(gaps))
    E = float((ev[k] + ev[k + 1]) / 2)
    g = ge.green(spec, theta, E, region)
    oracle = np.linalg.solve(h - E * np.eye(len(region)), np.eye(len(region)))
    assert np.abs(g.matrix - oracle).max() < 1e-10
    assert g.op_norm == pytest.approx(np.linalg.norm(oracle, 2), rel=0.05)


def test_schur_complement_examples():
    a = np.array([[2.0, 1.0], [1.0, 4.0]])
    dec = ge.schur_complement(a, inner_indices=(0,))
    assert dec.s_matrix == pytest.approx(np.array([[1.75]]))
    assert np.exp(dec.s_logdet + dec.logdet_outer).real == pytest.approx(7.0)

    # block diagonal: S equals the inner block exactly
    b = np.diag([1.0, 2.0, 3.0, 4.0])
    dec = ge.schur_complement(b, inner_indices=(0, 2))
    assert np.allclose(dec.s_matrix, np.diag([1.0, 3.0]))
    assert dec.gamma_coupling_norm == 0.0


def test_schur_determinant_identity_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = rng.integers(4, 21)
        a = random_symmetric(rng, n)
        k = rng.integers(1, max(2, n // 3))
        inner = tuple(rng.choice(n, size=k, replace=False))
        try:
            dec = ge.schur_complement(a, inner)
        except SingularBlock:
            continue
        det_a = np.linalg.det(a)
        det_rhs = np.exp(dec.s_logdet + dec.logdet_outer)
        assert det_rhs.real == pytest.approx(det_a, rel=1e-8, abs=1e-10)


def test_schur_singular_outer_block():
    a = np.eye(4)
    a[2, 2] = 0.0
    with pytest.raises(SingularBlock) as exc:
        ge.schur_complement(a, inner_indices=(0,))
    assert "2" in str(exc.value) or "outer" in str(exc.value)


def test_verify_schur_identities():
    a = np.array([[2.0, 1.0], [1.0, 4.0]])
    dec = ge.schur_complement(a, (0,))
    rep = ge.verify_schur_identities(dec, a)
    assert rep.det_identity_residual < 1e-14
    assert rep.passed

    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(6, 31))
        a = random_symmetric(rng, n)
        inner = tuple(rng.choice(n, size=4, replace=False))
        try:
            dec = ge.schur_complement(a, inner)
        except SingularBlock:
            continue
        rep = ge.verify_schur_identities(dec, a)
        assert rep.passed
        assert rep.det_identity_residual < 1e-8


def test_schur_det_zero_iff_s_det_zero():
    # singular S <=> singular A (given invertible A3)
    a = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.5], [0.0, 0.5, 2.0]])
    # make S singular: choose a so that det A ~ 0
    dec = ge.schur_complement(a, (0, 1))
    det_a = np.linalg.det(a)
    assert abs(np.exp(dec.s_logdet).real * np.exp(dec.logdet_outer).real - det_a) < 1e-10


def test_neumann_regime_error():
    spec = amo_spec(0.5)
    with pytest.raises(RegimeError):
        ge.neumann_nonresonant_check(spec, Phase(0.0), 0.0, build_box(3, 1), delta=0.3, M_power=2)


def test_neumann_eps_zero_diagonal():
    spec = lattice.OperatorSpec(
        1, 0.0, lattice.golden_frequency(horizon=100), lattice.cosine_potential()
    )
    rep = ge.neumann_nonresonant_check(spec, Phase(0.05), 5.0, build_box(4, 1), delta=0.5, M_power=2)
    assert rep.passed
    assert rep.fitted_rate == np.inf


def test_neumann_decay_rate():
    # eps = 1e-3, diagonal gaps >= 0.1: fitted rate >= (1/2) ln(1/eps)
    spec = amo_spec(1e-3)
    theta = Phase(0.005)
    E = 3.0  # far above the spectrum of 2cos: gaps >= 1
    rep = ge.neumann_nonresonant_check(spec, theta, E, build_box(12, 1), delta=0.1, M_power=1)
    assert rep.passed
    assert rep.fitted_rate >= 0.5 * np.log(1.0 / spec.epsilon)
    assert rep.norm_margin > 0


def test_neumann_flags_violating_site():
    spec = amo_spec(1e-4)
    # E close to the potential value at site 0
    theta = Phase(0.11)
    E = float(spec.potential(theta.re).real) + 1e-4
    rep = ge.neumann_nonresonant_check(spec, theta, E, build_box(3, 1), delta=0.4, M_power=2)
    assert (0,) in rep.gap_violations
    assert not rep.passed


def test_resolvent_patch_identity():
    spec = amo_spec(0.05)
    theta = Phase(0.21)
    E = 5.0
    outer = build_box(15, 1)
    inner = build_box(7, 1)
    go = ge.green(spec, theta, E, outer)
    gi = ge.green(spec, theta, E, inner)
    resid = ge.resolvent_patch_check(go, gi, spec.epsilon)
    assert resid <= 1e-10

    # inner == outer: boundary empty, residual 0
    resid2 = ge.resolvent_patch_check(go, go, spec.epsilon)
    assert resid2 == 0.0


def test_resolvent_patch_diagonal():
    spec = lattice.OperatorSpec(
        1, 0.0, lattice.golden_frequency(horizon=10), lattice.cosine_potential()
    )
    go = ge.green(spec, Phase(0.3), 4.0, build_box(9, 1))
    gi = ge.green(spec, Phase(0.3), 4.0, build_box(4, 1))
    assert ge.resolvent_patch_check(go, gi, 0.0) == 0.0


def test_eigensolve_examples():
    r = ge.eigensolve(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(r.values, [1, 2, 3])
    r = ge.eigensolve(np.array([[0.0, 1.0], [1.0, 0.0]]), vectors=True)
    assert np.allclose(r.values, [-1, 1])
    assert np.allclose(r.vectors.T @ r.vectors, np.eye(2), atol=1e-12)


def test_eigensolve_trace_identity():
    spec = amo_spec(0.3)
    h = assemble_restriction(spec, Phase(0.123), build_box(100, 1))
    r = ge.eigensolve(h)
    assert r.values.sum() == pytest.approx(np.trace(h), abs=1e-9 * max(1.0, abs(np.trace(h))))


def test_eigensolve_permutation_invariance():
    rng = np.random.default_rng(3)
    spec = amo_spec(0.2)
    h = assemble_restriction(spec, Phase(0.4), build_box(8, 1))
    perm = rng.permutation(h.shape[0])
    hp = h[np.ix_(perm, perm)]
    assert np.abs(ge.eigensolve(h).values - ge.eigensolve(hp).values).max() < 1e-9
