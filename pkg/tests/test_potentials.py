import math

import numpy as np
import pytest
from scipy.integrate import quad

from heatkato import geometry as G
from heatkato import heat_kernel as HK
from heatkato import potentials as P
from heatkato.errors import DomainError, SingularityError, UnsupportedModelError

E3 = G.euclidean(3)
ORIGIN = G.base_point(E3)


def test_constant_and_radial_power_values():
    assert P.evaluate(P.Constant(5.0), G.make_point(E3, [1, 2, 3])) == 5.0
    w = P.RadialPower(E3, ORIGIN, 1.0)
    assert P.evaluate(w, G.make_point(E3, [2, 0, 0])) == 0.5
    assert P.evaluate(w, ORIGIN) == math.inf  # sentinel, never an overflow


def test_pullback_depends_only_on_projected_coordinate():
    prod = G.product(E3, E3)
    w = P.Pullback(prod, 0, P.RadialPower(E3, ORIGIN, 1.0))
    a = P.evaluate(w, G.make_point(prod, [0.5, 0, 0, 9, 9, 9]))
    b = P.evaluate(w, G.make_point(prod, [0.5, 0, 0, -3, 1, 4]))
    assert a == b == 2.0


def test_sign_parts():
    w = P.Sum((P.Constant(-2.0), P.Indicator(E3, G.BallWindow(ORIGIN, 1.0))))
    y_in = G.make_point(E3, [0.5, 0, 0])
    y_out = G.make_point(E3, [5, 0, 0])
    assert P.evaluate(P.positive_part(w), y_in) == 0.0
    assert P.evaluate(P.negative_part(w), y_in) == 1.0
    assert P.evaluate(P.negative_part(w), y_out) == 2.0
    assert P.evaluate(P.absolute(w), y_out) == 2.0


def test_coulomb_against_spec_oracle():
    # oracle: direct high-resolution quadrature of the Gaussian time integral
    eng = HK.make_engine(E3)
    for r in (0.1, 1.0, 10.0):
        integrand = lambda s: (2 * math.pi * s) ** -1.5 * math.exp(-r * r / (2 * s))
        near, _ = quad(integrand, 0, r * r, points=[r * r / 10])
        far, _ = quad(integrand, r * r, np.inf)
        oracle = near + far
        assert oracle == pytest.approx(1 / (2 * math.pi * r), rel=1e-9)
        got = P.coulomb(eng, ORIGIN, G.make_point(E3, [r, 0, 0]))
        assert got.value == pytest.approx(0.5 * oracle, rel=1e-8)
        assert got.tail_bound < 1e-9 * got.value


def test_coulomb_scaling_and_symmetry():
    eng = HK.make_engine(E3)
    v1 = P.coulomb(eng, ORIGIN, G.make_point(E3, [0.7, 0, 0])).value
    v2 = P.coulomb(eng, ORIGIN, G.make_point(E3, [1.4, 0, 0])).value
    assert v1 / v2 == pytest.approx(2.0, rel=1e-8)
    x = G.make_point(E3, [0.2, 0.4, -0.1])
    y = G.make_point(E3, [-0.5, 0.1, 0.9])
    assert P.coulomb(eng, x, y).value == pytest.approx(P.coulomb(eng, y, x).value, rel=1e-12)


def test_coulomb_hyperbolic_finite_with_tail():
    h3 = G.hyperbolic3()
    eng = HK.make_engine(h3)
    x = G.base_point(h3)
    y = G.exp_map(h3, x, [0, 0, 1.0])
    got = P.coulomb(eng, x, y)
    assert math.isfinite(got.value) and got.value > 0
    assert got.tail_bound < 1e-9 * got.value
    # dual route: closed-form profile
    closed = float(P.coulomb_profile(h3)(np.array([1.0]))[0])
    assert got.value == pytest.approx(closed, rel=1e-9)


def test_coulomb_errors():
    eng = HK.make_engine(E3)
    with pytest.raises(SingularityError):
        P.coulomb(eng, ORIGIN, ORIGIN)
    with pytest.raises(UnsupportedModelError):
        P.coulomb(HK.make_engine(G.circle()), G.circle_point(0), G.circle_point(1))
    with pytest.raises(UnsupportedModelError):
        P.coulomb(HK.make_engine(G.euclidean(2)), G.base_point(G.euclidean(2)),
                  G.make_point(G.euclidean(2), [1, 0]))


def test_lq_norm_zero_and_radial_oracle():
    grid = G.build_grid(E3, 0.02, G.BallWindow(ORIGIN, 1.0))
    zero = P.lq_norm(P.Sum(()), 2.0, None, grid)
    assert zero.value == 0.0
    # int_{|y|<1} |y|^{-2} dy = 4 pi -> L2 norm sqrt(4 pi)
    w = P.RadialPower(E3, ORIGIN, 1.0)
    n = P.lq_norm(w, 2.0, None, grid)
    assert not n.diverges
    assert n.value == pytest.approx(math.sqrt(4 * math.pi), rel=1e-6)
    assert n.excised_nodes > 0


def test_lq_norm_divergence_flag():
    grid = G.build_grid(E3, 0.05, G.BallWindow(ORIGIN, 1.0))
    n = P.lq_norm(P.RadialPower(E3, ORIGIN, 2.0), 2.0, None, grid)
    assert n.diverges and n.value == math.inf
    # borderline beta*q = m also diverges (log)
    n2 = P.lq_norm(P.RadialPower(E3, ORIGIN, 1.5), 2.0, None, grid)
    assert n2.diverges


def test_lq_norm_monotone_in_window_and_potential():
    w = P.RadialPower(E3, ORIGIN, 0.8)
    small = G.build_grid(E3, 0.03, G.BallWindow(ORIGIN, 0.8))
    large = G.build_grid(E3, 0.03, G.BallWindow(ORIGIN, 1.6))
    n_small = P.lq_norm(w, 2.0, None, small).value
    n_large = P.lq_norm(w, 2.0, None, large).value
    assert n_large >= n_small
    dominated = P.Scale(0.5, w)
    assert P.lq_norm(dominated, 2.0, None, small).value <= n_small


def test_excised_lq_matches_brute_force_refined():
    # spec property: within 2% of a fine-grid brute force for beta*q < 0.9 m
    w = P.RadialPower(E3, ORIGIN, 0.9)  # q=2: beta q = 1.8 < 2.7
    coarse = G.build_grid(E3, 0.04, G.BallWindow(ORIGIN, 1.0))
    fine = G.build_grid(E3, 0.008, G.BallWindow(ORIGIN, 1.0))
    a = P.lq_norm(w, 2.0, None, coarse).value
    vals = np.abs(P.evaluate_many(w, fine.node_coords))
    brute = (fine.integrate(vals**2)) ** 0.5
    assert a == pytest.approx(brute, rel=0.02)


def test_many_body_examples():
    eng3 = HK.make_engine(E3)
    one = P.many_body_assemble(1, [ORIGIN], eng3)
    x = G.make_point(E3, [1.0, 0, 0])
    assert P.evaluate(one, x) == pytest.approx(-1 / (4 * math.pi), rel=1e-12)
    prod = G.product(E3, E3)
    eng6 = HK.make_engine(prod)
    two = P.many_body_assemble(2, [], eng6)
    pt = G.make_point(prod, [0, 0, 0, 1, 0, 0])
    assert P.evaluate(two, pt) == pytest.approx(+1 / (4 * math.pi), rel=1e-12)
    empty = P.many_body_assemble(1, [], eng3)
    assert P.evaluate(empty, x) == 0.0


def test_many_body_dimension_mismatch():
    with pytest.raises(DomainError):
        P.many_body_assemble(2, [], HK.make_engine(E3))
    with pytest.raises(DomainError):
        P.many_body_assemble(1, [], HK.make_engine(G.euclidean(2)))
    mixed = G.product(E3, G.euclidean(2))
    with pytest.raises(DomainError):
        P.many_body_assemble(2, [], HK.make_engine(mixed))


def test_singular_distance_to_diagonal():
    prod = G.product(E3, E3)
    eng6 = HK.make_engine(prod)
    two = P.many_body_assemble(2, [], eng6)
    pt = G.make_point(prod, [0, 0, 0, 1, 0, 0])
    d = P.singular_distance_many(two, pt.coords[None, :])[0]
    assert d == pytest.approx(1 / math.sqrt(2), rel=1e-12)


def test_windowed_potential():
    w = P.Windowed(E3, P.RadialPower(E3, ORIGIN, 1.0), G.BallWindow(ORIGIN, 1.0))
    assert P.evaluate(w, G.make_point(E3, [0.5, 0, 0])) == 2.0
    assert P.evaluate(w, G.make_point(E3, [2.0, 0, 0])) == 0.0
    assert len(P.singularities(w)) == 1


def test_parse_potential_round_trips():
    specs = [
        "constant:5",
        "radialpower:beta=1:center=0,0,0",
        "coulomb:center=0,0,0",
        "indicator:ball:r=1:center=0,0,0",
        "sum[constant:1;scale:-2:radialpower:beta=0.5]",
        "windowed:r=2:radialpower:beta=1",
        "cosine",
        "zero",
    ]
    y = G.make_point(E3, [0.5, 0, 0])
    for spec in specs:
        w = P.parse_potential(spec, E3)
        assert math.isfinite(P.evaluate(w, y))
    prod = G.product(E3, E3)
    wp = P.parse_potential("pullback:1:radialpower:beta=1:center=0,0,0", prod)
    assert P.evaluate(wp, G.make_point(prod, [9, 9, 9, 0.5, 0, 0])) == 2.0


def test_cosine_potential_on_circle():
    c = G.circle()
    w = P.cosine_potential(c)
    for theta in (0.0, 0.7, 2.5):
        assert P.evaluate(w, G.circle_point(theta)) == pytest.approx(math.cos(theta), abs=1e-15)
