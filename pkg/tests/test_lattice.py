import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qplab import lattice
from qplab.errors import DomainError
from qplab.lattice import (
    Phase,
    Region,
    assemble_restriction,
    boundary,
    build_box,
    check_diophantine,
    cosine_potential,
    golden_frequency,
    torus_distance,
)


def l1_ball_count(N, d):
    # brute enumeration over the bounding cube
    count = 0
    rng = range(-N, N + 1)
    import itertools

    for p in itertools.product(rng, repeat=d):
        if sum(abs(c) for c in p) <= N:
            count += 1
    return count


def test_build_box_examples():
    assert set(build_box(1, 2).points) == {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)}
    assert build_box(0, 3).points == ((0, 0, 0),)
    assert len(build_box(10, 1)) == 21


@pytest.mark.parametrize("d", [1, 2, 3])
def test_build_box_counts_match_enumeration(d):
    for N in range(0, 7):
        assert len(build_box(N, d)) == l1_ball_count(N, d)


def test_boundary_examples():
    X = Region.from_points([(0,)])
    Y = Region.from_points([(-1,), (0,), (1,)])
    assert set(boundary(X, Y)) == {((0,), (-1,)), ((0,), (1,))}
    assert boundary(Y, Y) == []
    q1, q2 = build_box(1, 1), build_box(2, 1)
    assert set(boundary(q1, q2)) == {((1,), (2,)), ((-1,), (-2,))}


def test_torus_distance_examples():
    assert torus_distance(0.9, 0.1) == pytest.approx(0.2)
    assert torus_distance(0.5, 0.5) == 0.0
    assert torus_distance(0.75, 0.0) == pytest.approx(0.25)


@given(
    st.floats(0, 1, exclude_max=True),
    st.floats(0, 1, exclude_max=True),
    st.floats(0, 1, exclude_max=True),
)
def test_torus_distance_is_a_metric(a, b, c):
    assert torus_distance(a, b) == pytest.approx(torus_distance(b, a))
    assert torus_distance(a, c) <= torus_distance(a, b) + torus_distance(b, c) + 1e-12
    assert 0.0 <= torus_distance(a, b) <= 0.5 + 1e-15


def test_eval_potential_cosine():
    v = cosine_potential()
    assert v(0.0) == pytest.approx(2.0)
    assert abs(v(0.25)) < 1e-14
    z = 1j * math.log(2.0) / (2 * math.pi)
    # direct series: e^{2 pi i z} + e^{-2 pi i z} = 1/2 + 2 = 2.5
    assert v(z) == pytest.approx(2 * math.cosh(math.log(2.0)))


def test_eval_potential_real_on_torus():
    v = cosine_potential()
    t = np.linspace(0, 1, 101)
    assert np.abs(np.imag(v.evaluate(t))).max() <= 1e-12 * v.c_v


def test_eval_potential_strip_violation():
    v = cosine_potential(eta=0.1)
    with pytest.raises(DomainError):
        v.evaluate(0.3 + 0.5j)


def test_potential_rejects_constant_and_nonhermitian():
    with pytest.raises(ValueError):
        lattice.Potential(((0, 1.0),))
    with pytest.raises(ValueError):
        lattice.Potential(((1, 1.0), (-1, 2.0)))


def test_diophantine_examples():
    rep = check_diophantine([lattice.GOLDEN_MEAN], 2.0, 0.2, 10_000)
    assert rep.passed
    rep = check_diophantine([0.5], 2.0, 0.1, 4)
    assert not rep.passed
    assert rep.worst_x == (2,)
    assert rep.worst_margin == pytest.approx(0.0)
    rep = check_diophantine([lattice.GOLDEN_MEAN], 2.0, 1.0, 100)
    assert not rep.passed and lattice.norm1(rep.worst_x) <= 100


def test_frequency_from_strings_and_validation():
    f = lattice.Frequency.from_strings("0.6180339887498949", 2.0, 0.2, verified_horizon=100)
    assert f.dimension == 1
    with pytest.raises(ValueError):
        lattice.Frequency((0.5,), 2.0, 0.2, verified_horizon=4)


def test_assemble_restriction_examples():
    spec = lattice.OperatorSpec(
        1, 0.5, lattice.Frequency((0.3,), 2.0, 1e-6), cosine_potential()
    )
    region = Region.from_points([(0,), (1,)])
    m = assemble_restriction(spec, Phase(0.0), region)
    expected = np.array([[2.0, 0.5], [0.5, 2 * math.cos(0.6 * math.pi)]])
    assert np.allclose(m, expected)

    spec0 = lattice.OperatorSpec(
        1, 0.0, lattice.Frequency((0.3,), 2.0, 1e-6), cosine_potential()
    )
    m0 = assemble_restriction(spec0, Phase(0.1), build_box(3, 1))
    assert np.allclose(m0, np.diag(np.diag(m0)))

    m1 = assemble_restriction(spec0, Phase(0.25), Region.from_points([(0,)]), energy=0.0)
    assert m1.shape == (1, 1) and abs(m1[0, 0]) < 1e-14


def test_assemble_restriction_symmetry():
    spec = lattice.amo_spec(0.2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        m = assemble_restriction(spec, Phase(rng.uniform()), build_box(4, 1))
        assert np.array_equal(m, m.T)


def test_region_ordering_and_translate():
    r = Region.from_points([(2,), (0,), (1,)])
    assert r.points == ((0,), (1,), (2,))
    assert r.index_of((1,)) == 1
    assert r.translate((5,)).points == ((5,), (6,), (7,))
    assert r.dist1(Region.from_points([(10,)])) == 8


def test_potential_serialization_roundtrip():
    v = lattice.Potential(((-2, 0.5 + 0.25j), (-1, 1.0), (1, 1.0), (2, 0.5 - 0.25j)), eta=0.3)
    w = lattice.Potential.deserialize(v.serialize(), eta=0.3)
    assert w.fourier == v.fourier


def test_level_polynomial_matches_potential():
    v = cosine_potential()
    # p(e^{2 pi i theta}) * e^{-2 pi i m theta} == v(theta) - E*
    for Estar in (0.0, 1.3, -2.0):
        p = v.level_polynomial(Estar)
        for theta in (0.1, 0.37 + 0.02j):
            z = np.exp(2j * np.pi * theta)
            lhs = np.polyval(p, z) * z ** (-v.degree)
            assert lhs == pytest.approx(v(theta) - Estar, abs=1e-12)
