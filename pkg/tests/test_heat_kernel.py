import math

import numpy as np
import pytest
from scipy.special import eval_legendre

from heatkato import geometry as G
from heatkato import heat_kernel as HK
from heatkato.errors import DomainError, UnsupportedModelError

ALL_SPECS = [
    "euclidean:2",
    "euclidean:3",
    "torus:2:6.283185307179586",
    "circle",
    "sphere2",
    "hyperbolic3",
    "product(euclidean:1,circle)",
]


def radial_heat_equation_oracle(t0: float, t1: float, r_max=14.0, n_r=2800, n_t=4000):
    """Crank-Nicolson for u_t = (1/2)(u'' + (2/r) u') in 3d radial coordinates,
    via the substitution v = r u (plain 1d heat equation with v(0) = 0)."""
    r = np.linspace(0.0, r_max, n_r + 1)
    dr = r[1] - r[0]
    u0 = (2 * math.pi * t0) ** -1.5 * np.exp(-(r**2) / (2 * t0))
    v = r * u0
    dt = (t1 - t0) / n_t
    lam = 0.5 * dt / (2 * dr * dr)
    main = np.full(n_r - 1, 1 + 2 * lam)
    off = np.full(n_r - 2, -lam)
    from scipy.linalg import solve_banded

    ab = np.zeros((3, n_r - 1))
    ab[0, 1:] = off
    ab[1] = main
    ab[2, :-1] = off
    for _ in range(n_t):
        rhs = v[1:-1] + lam * (v[2:] - 2 * v[1:-1] + v[:-2])
        v[1:-1] = solve_banded((1, 1), ab, rhs)
    u = np.empty_like(v)
    u[1:] = v[1:] / r[1:]
    u[0] = u[1] + (u[1] - u[2])  # linear extrapolation to r = 0
    return r, u


def test_euclidean3_on_diag_value_and_pde_oracle():
    e3 = HK.make_engine(G.euclidean(3))
    val = HK.on_diag(e3, 1.0)
    assert val == pytest.approx((2 * math.pi) ** -1.5, abs=1e-15)
    # independent check of the (1/2)-Laplacian normalization: evolve the t=0.2
    # radial profile to t=1 with a PDE solver and compare at the origin
    r, u = radial_heat_equation_oracle(0.2, 1.0)
    assert u[0] == pytest.approx(val, rel=2e-4)
    probe = HK.eval_radial(e3, 1.0, r[::200])
    assert np.max(np.abs(probe - u[::200])) < 3e-5


def test_product_of_lines_equals_plane():
    prod = HK.make_engine(G.parse_manifold("product(euclidean:1,euclidean:1)"))
    e2 = HK.make_engine(G.euclidean(2))
    x = np.array([0.3, -0.2])
    ys = np.array([[1.0, 0.5], [0.0, 0.0], [-2.0, 1.0]])
    a = HK.eval_many(prod, 0.7, x, ys)
    b = HK.eval_many(e2, 0.7, x, ys)
    np.testing.assert_allclose(a, b, rtol=5e-16)
    # the product engine is bitwise the pointwise product of its factor evals
    left = HK.eval_many(prod.factors[0], 0.7, x[:1], ys[:, :1])
    right = HK.eval_many(prod.factors[1], 0.7, x[1:], ys[:, 1:])
    assert np.array_equal(a, left * right)


def test_sphere_long_time_limit():
    s2 = HK.make_engine(G.sphere2())
    assert HK.on_diag(s2, 50.0) == pytest.approx(1 / (4 * math.pi), abs=1e-10)


def test_circle_image_sum_vs_fourier_series():
    # two structurally different representations of the same kernel
    img = HK.make_engine(G.circle(), "imagesum")
    four = HK.make_engine(G.circle(), "series")
    d = np.linspace(0, math.pi, 9)
    for t in (0.02, 0.3, 4.0):
        assert np.max(np.abs(HK.eval_radial(img, t, d) - HK.eval_radial(four, t, d))) < 1e-13


def test_circle_mass_wrapped_sum_oracle():
    c = HK.make_engine(G.circle())
    grid = G.build_grid(G.circle(), 2 * math.pi / 400, G.FullWindow())
    for t in (0.05, 1.0):
        mass = grid.integrate(HK.eval_many(c, t, G.circle_point(0.7).coords, grid.node_coords))
        assert mass == pytest.approx(1.0, abs=1e-10)
    # independent K=20 wrapped sum
    theta = 1.1
    oracle = sum(
        math.exp(-((theta + 2 * math.pi * k) ** 2) / (2 * 0.3)) for k in range(-20, 21)
    ) / math.sqrt(2 * math.pi * 0.3)
    val = HK.eval_kernel(c, 0.3, G.circle_point(0.0), G.circle_point(theta))
    assert val == pytest.approx(oracle, rel=1e-14)


def test_legendre_series_against_scipy():
    xs = np.linspace(-1, 1, 7)
    t = 0.4
    direct = sum(
        (2 * l + 1) / (4 * math.pi) * math.exp(-l * (l + 1) * t / 2) * eval_legendre(l, xs)
        for l in range(80)
    )
    assert np.max(np.abs(HK.sphere_series(t, xs, 80) - direct)) < 1e-14


def test_sphere_truncation_bound_honored():
    s2 = HK.make_engine(G.sphere2())
    t = 0.05
    lmax = HK.sphere_lmax(t, 1e-12, 20000)
    short = HK.sphere_series(t, np.array([0.2]), lmax)
    longer = HK.sphere_series(t, np.array([0.2]), lmax + 400)
    assert abs(short[0] - longer[0]) <= HK.sphere_tail_bound(lmax, t) + 1e-15


def test_euclidean2_ck_by_direct_convolution_grid():
    # explicit-grid route on a 6 sigma window
    e2 = HK.make_engine(G.euclidean(2))
    t, s = 0.15, 0.1
    x = G.make_point(G.euclidean(2), [0.2, 0.1])
    y = G.make_point(G.euclidean(2), [-0.4, 0.3])
    radius = 0.8 + 6 * math.sqrt(t + s)
    grid = G.build_grid(G.euclidean(2), radius / 140, G.BallWindow(x, radius))
    px = HK.eval_many(e2, t, x.coords, grid.node_coords)
    py = HK.eval_many(e2, s, y.coords, grid.node_coords)
    conv = grid.integrate(px * py)
    assert conv == pytest.approx(HK.eval_kernel(e2, t + s, x, y), abs=1e-8)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_consistency_all_models(spec):
    model = G.parse_manifold(spec)
    eng = HK.make_engine(model)
    rng = np.random.default_rng(5)
    pts = [G.random_point(model, rng, 1.0) for _ in range(3)]
    rep = HK.check_consistency(eng, [0.08, 0.4], pts)
    assert rep.mass_defect < 1e-6
    assert rep.ck_residual < 1e-6
    assert rep.symmetry_residual <= max(2 * rep.truncation_bound, 1e-13)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_positivity_and_sqrt_bound(spec):
    model = G.parse_manifold(spec)
    eng = HK.make_engine(model)
    rng = np.random.default_rng(17)
    for _ in range(20):
        t = float(rng.uniform(0.02, 2.0))
        x, y = G.random_point(model, rng), G.random_point(model, rng)
        val = HK.eval_kernel(eng, t, x, y)
        assert val > 0
        bound = math.sqrt(HK.on_diag(eng, t)) * math.sqrt(HK.on_diag(eng, t))
        assert val <= bound * (1 + 1e-12) + 2 * HK.truncation_bound(eng, t)


def test_semigroup_property_twenty_samples():
    rng = np.random.default_rng(23)
    for spec in ALL_SPECS:
        model = G.parse_manifold(spec)
        eng = HK.make_engine(model)
        for _ in range(3):
            t, s = rng.uniform(0.05, 0.5, 2)
            x, y = G.random_point(model, rng, 1.0), G.random_point(model, rng, 1.0)
            conv, direct, tol = HK.chapman_kolmogorov(eng, float(t), float(s), x, y)
            assert abs(conv - direct) <= 1e-6 + tol


def test_sup_bound_at_diagonal():
    e3 = HK.make_engine(G.euclidean(3))
    x = G.base_point(G.euclidean(3))
    grid = G.build_grid(G.euclidean(3), 0.2, G.BallWindow(x, 3.0))
    sup = HK.sup_bound(e3, 0.5, x, grid)
    assert sup <= HK.on_diag(e3, 0.5) + 1e-12
    assert sup == pytest.approx(HK.on_diag(e3, 0.5), rel=1e-2)


def test_hyperbolic_sup_small_distance_limit():
    h3 = HK.make_engine(G.hyperbolic3())
    t = 0.7
    lim = (2 * math.pi * t) ** -1.5 * math.exp(-t / 2)
    assert HK.on_diag(h3, t) == pytest.approx(lim, abs=1e-15)
    near = float(HK.eval_radial(h3, t, np.array([1e-8]))[0])
    assert near == pytest.approx(lim, rel=1e-12)


def test_on_diag_upper():
    e3 = HK.make_engine(G.euclidean(3))
    ts = np.logspace(-3, 0, 30)
    assert HK.on_diag_upper(e3, ts) == pytest.approx((2 * math.pi) ** -1.5, abs=1e-15)
    h3 = HK.make_engine(G.hyperbolic3())
    assert HK.on_diag_upper(h3, ts) <= (2 * math.pi) ** -1.5
    s2 = HK.make_engine(G.sphere2())
    assert math.isfinite(HK.on_diag_upper(s2, np.logspace(-2, 0, 10)))


def test_time_domain_errors():
    eng = HK.make_engine(G.euclidean(2))
    with pytest.raises(DomainError):
        HK.eval_kernel(eng, 0.0, G.base_point(G.euclidean(2)), G.base_point(G.euclidean(2)))
    with pytest.raises(DomainError):
        HK.eval_kernel(eng, -1.0, G.base_point(G.euclidean(2)), G.base_point(G.euclidean(2)))


def test_method_selection_errors():
    with pytest.raises(UnsupportedModelError):
        HK.make_engine(G.euclidean(2), "imagesum")
    with pytest.raises(UnsupportedModelError):
        HK.make_engine(G.hyperbolic3(), "series")
    assert HK.make_engine(G.torus(2, 5.0), "series:40").series_lmax == 40
    assert HK.make_engine(G.circle(), "imagesum:7").image_radius == 7


def test_strict_truncation_raises_with_bound():
    from heatkato.errors import TruncationError

    eng = HK.make_engine(G.sphere2(), strict_truncation=True, lmax_cap=40)
    with pytest.raises(TruncationError) as err:
        HK.eval_radial(eng, 1e-4, np.array([0.5]))
    assert err.value.bound > 1e-12


def test_sup_bound_grid_containing_x():
    c = G.circle()
    eng = HK.make_engine(c)
    grid = G.build_grid(c, 2 * math.pi / 64, G.FullWindow())
    x = G.circle_point(0.0)  # exactly grid node 0
    assert HK.sup_bound(eng, 0.4, x, grid) == HK.on_diag(eng, 0.4)


def test_image_sum_symmetry_is_exact():
    tor = HK.make_engine(G.torus(2, 5.0))
    x = G.make_point(G.torus(2, 5.0), [0.4, 3.0])
    y = G.make_point(G.torus(2, 5.0), [2.9, 0.7])
    assert HK.eval_kernel(tor, 0.3, x, y) == HK.eval_kernel(tor, 0.3, y, x)
