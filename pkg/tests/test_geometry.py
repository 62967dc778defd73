import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from heatkato import geometry as G
from heatkato.errors import DomainError, InvalidPointError, ManifestError

ALL_SPECS = [
    "euclidean:2",
    "euclidean:3",
    "torus:2:6.283185307179586",
    "circle",
    "sphere2",
    "hyperbolic3",
    "product(euclidean:1,circle)",
]


def models():
    return [G.parse_manifold(s) for s in ALL_SPECS]


def test_euclidean_345():
    e2 = G.euclidean(2)
    assert G.distance(e2, G.make_point(e2, [0, 0]), G.make_point(e2, [3, 4])) == 5.0


def test_sphere_antipodal():
    s2 = G.sphere2()
    d = G.distance(s2, G.make_point(s2, [0, 0, 1]), G.make_point(s2, [0, 0, -1]))
    assert abs(d - math.pi) < 1e-15


def test_hyperbolic_vertical_distance_closed_form():
    h3 = G.hyperbolic3()
    d = G.distance(h3, G.make_point(h3, [0, 0, 1]), G.make_point(h3, [0, 0, math.e]))
    assert abs(d - 1.0) < 1e-12


def test_hyperbolic_distance_vs_geodesic_length_oracle():
    # oracle: chop the exp_map geodesic into chart segments and sum their
    # Riemannian lengths |dx|_e / z
    h3 = G.hyperbolic3()
    x = G.make_point(h3, [0.4, -0.3, 0.8])
    v = np.array([0.7, 0.2, -0.4])
    y = G.exp_map(h3, x, v)
    n = 4000
    pts = np.stack(
        [G.exp_map(h3, x, v * (k / n)).coords for k in range(n + 1)]
    )
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    zbar = 0.5 * (pts[:-1, 2] + pts[1:, 2])
    length = float(np.sum(seg / zbar))
    assert abs(length - G.distance(h3, x, y)) < 5e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_distance_symmetry_and_triangle(seed):
    rng = np.random.default_rng(seed)
    for model in models():
        x, y, z = (G.random_point(model, rng) for _ in range(3))
        dxy = G.distance(model, x, y)
        dyx = G.distance(model, y, x)
        assert abs(dxy - dyx) < 1e-12
        assert dxy <= G.distance(model, x, z) + G.distance(model, z, y) + 1e-12
        assert G.distance(model, x, x) == 0.0


def test_product_pythagoras_exact():
    model = G.parse_manifold("product(euclidean:2,circle)")
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, y = G.random_point(model, rng), G.random_point(model, rng)
        d2 = G.distance(model, x, y) ** 2
        xl, xr = G.split_point(model, x)
        yl, yr = G.split_point(model, y)
        dl2 = G.distance(model.factors[0], xl, yl) ** 2
        dr2 = G.distance(model.factors[1], xr, yr) ** 2
        assert d2 == pytest.approx(dl2 + dr2, abs=1e-12)


def test_ball_volumes_closed_forms():
    assert G.ball_volume_radial(G.euclidean(2), 1.0) == pytest.approx(math.pi, abs=1e-14)
    assert G.ball_volume_radial(G.sphere2(), math.pi) == pytest.approx(4 * math.pi, abs=1e-12)
    # radial integration oracle for hyperbolic space
    h3 = G.hyperbolic3()
    oracle, _ = quad(lambda r: 4 * math.pi * math.sinh(r) ** 2, 0, 1.0)
    assert G.ball_volume_radial(h3, 1.0) == pytest.approx(oracle, rel=1e-10)
    assert G.ball_volume_radial(h3, 1.0) == pytest.approx(math.pi * (math.sinh(2) - 2), rel=1e-12)


def test_ball_volume_monotone_and_capped():
    t2 = G.torus(2, 2 * math.pi)
    rs = np.linspace(0.1, 6.0, 40)
    vols = [G.ball_volume_radial(t2, r) for r in rs]
    assert all(b >= a - 1e-12 for a, b in zip(vols, vols[1:]))
    assert vols[-1] == pytest.approx((2 * math.pi) ** 2, rel=1e-12)


def test_product_ball_volume_matches_torus():
    # circle x circle is the flat square torus: independent closed form
    pc = G.product(G.circle(), G.circle())
    t2 = G.torus(2, 2 * math.pi)
    for r in (0.5, 2.0, 3.5, 5.0):
        assert G.ball_volume_radial(pc, r) == pytest.approx(
            G.ball_volume_radial(t2, r), rel=1e-8
        )


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_ball_volume_vs_indicator_quadrature(spec):
    model = G.parse_manifold(spec)
    rng = np.random.default_rng(11)
    x = G.random_point(model, rng)
    r = 0.9
    if model.compact:
        grid = G.build_grid(model, _full_res(model), G.FullWindow())
    elif model.kind is G.Kind.PRODUCT:
        xl, _ = G.split_point(model, x)
        grid = G.build_grid(
            model, 0.02, G.ProductWindow(G.BallWindow(xl, 1.5 * r), G.FullWindow())
        )
    else:
        grid = G.build_grid(model, 0.02, G.BallWindow(x, 1.5 * r))
    d = G.distance_many(model, x.coords, grid.node_coords)
    approx = grid.integrate((d <= r).astype(float))
    exact = G.ball_volume(model, x, r)
    assert approx == pytest.approx(exact, rel=0.05)


def _full_res(model):
    if model.kind is G.Kind.CIRCLE:
        return 2 * math.pi / 512
    if model.kind is G.Kind.SPHERE2:
        return math.pi / 96
    if model.kind is G.Kind.TORUS:
        return model.side_length / 96
    return 0.05


def test_exp_map_flat_cases():
    e2 = G.euclidean(2)
    p = G.exp_map(e2, G.make_point(e2, [1, 2]), [0.5, -1.0])
    assert np.allclose(p.coords, [1.5, 1.0])
    c = G.circle()
    q = G.exp_map(c, G.circle_point(0.3), [0.4])
    assert np.allclose(q.coords, [math.cos(0.7), math.sin(0.7)], atol=1e-15)


def test_exp_map_sphere_half_great_circle():
    s2 = G.sphere2()
    north = G.make_point(s2, [0, 0, 1])
    south = G.exp_map(s2, north, [math.pi, 0, 0])
    assert np.allclose(south.coords, [0, 0, -1], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exp_map_preserves_charts_and_distance(seed):
    rng = np.random.default_rng(seed)
    for model in models():
        x = G.random_point(model, rng)
        v = rng.standard_normal(model.tangent_dim) * 0.3
        y = G.exp_map(model, x, v)
        k = model.kind
        if k in (G.Kind.CIRCLE, G.Kind.SPHERE2):
            assert abs(np.linalg.norm(y.coords) - 1.0) < 1e-12
        if k is G.Kind.HYPERBOLIC3:
            assert y.coords[2] > 0
            vg = np.linalg.norm(v) / x.coords[2]
            assert G.distance(model, x, y) == pytest.approx(vg, rel=1e-9, abs=1e-12)
        if k is G.Kind.EUCLIDEAN:
            assert G.distance(model, x, y) == pytest.approx(np.linalg.norm(v), abs=1e-12)


def test_build_grid_circle_uniform():
    grid = G.build_grid(G.circle(), 2 * math.pi / 64, G.FullWindow())
    assert grid.size == 64
    assert np.allclose(grid.weights, 2 * math.pi / 64)


def test_build_grid_sphere_total_area():
    grid = G.build_grid(G.sphere2(), math.pi / 24, G.FullWindow())
    assert grid.integrate(np.ones(grid.size)) == pytest.approx(4 * math.pi, rel=1e-12)


def test_build_grid_unit_interval():
    e1 = G.euclidean(1)
    grid = G.build_grid(e1, 0.25, G.BoxWindow(G.make_point(e1, [0.5]), (0.5,)))
    assert grid.size == 4
    assert grid.integrate(np.ones(4)) == pytest.approx(1.0, abs=1e-15)


def test_grid_quadrature_accuracy_smooth():
    # the only visible defect should be the analytic window tail 2 pi e^{-R^2/2}
    e2 = G.euclidean(2)
    x = G.base_point(e2)
    grid = G.build_grid(e2, 0.05, G.BallWindow(x, 6.0))
    vals = np.exp(-np.linalg.norm(grid.node_coords, axis=1) ** 2 / 2)
    tail = 2 * math.pi * math.exp(-18.0)
    assert grid.integrate(vals) == pytest.approx(2 * math.pi - tail, rel=1e-10)


def test_point_validation():
    s2 = G.sphere2()
    with pytest.raises(InvalidPointError):
        G.make_point(s2, [0, 0, 1.5])
    h3 = G.hyperbolic3()
    with pytest.raises(InvalidPointError):
        G.make_point(h3, [0, 0, -1.0])
    with pytest.raises(InvalidPointError):
        G.make_point(G.euclidean(2), [1, 2, 3])


def test_manifold_invariants():
    prod = G.parse_manifold("product(euclidean:3,hyperbolic3)")
    assert prod.dim == 6
    assert prod.ricci_lower_bound == -2.0
    for model in models():
        assert model.geodesically_complete and model.stochastically_complete


def test_parse_manifold_round_trip_and_errors():
    for spec in ALL_SPECS:
        model = G.parse_manifold(spec)
        assert G.parse_manifold(model.describe()).describe() == model.describe()
    with pytest.raises(ManifestError):
        G.parse_manifold("banach:3")
    with pytest.raises(ManifestError):
        G.parse_manifold("torus:2")
    with pytest.raises(ManifestError):
        G.parse_manifold("product(euclidean:2)")


def test_empty_window_rejected():
    with pytest.raises(DomainError):
        G.build_grid(G.euclidean(2), -0.1, G.FullWindow())
    with pytest.raises(DomainError):
        G.build_grid(G.euclidean(2), 0.1, G.FullWindow())  # non-compact needs a window
    with pytest.raises(DomainError):
        G.build_grid(G.euclidean(2), 0.1, G.BallWindow(G.base_point(G.euclidean(2)), 0.0))
