import math

import numpy as np
import pytest
from scipy.stats import chi2

from heatkato import geometry as G
from heatkato import heat_kernel as HK
from heatkato import potentials as P
from heatkato import semigroup as SG
from heatkato import stochastics as S
from heatkato.errors import DomainError, UnsupportedModelError

CIRCLE = G.circle()
E1 = G.euclidean(1)


def test_reproducibility_bit_identical():
    a = S.simulate(E1, G.base_point(E1), 0.5, 1e-2, 400, seed=7)
    b = S.simulate(E1, G.base_point(E1), 0.5, 1e-2, 400, seed=7)
    assert np.array_equal(a.positions, b.positions)
    c = S.simulate(E1, G.base_point(E1), 0.5, 1e-2, 400, seed=8)
    assert not np.array_equal(a.positions, c.positions)


def test_partition_invariance():
    # per-path streams: results do not depend on the block layout
    kw = dict(t=0.4, h=2e-3, N=500, seed=3)
    a = S.simulate(E1, G.base_point(E1), block_size=17, **kw)
    b = S.simulate(E1, G.base_point(E1), block_size=499, **kw)
    assert np.array_equal(a.positions, b.positions)
    s2 = G.sphere2()
    kw = dict(t=0.05, h=5e-3, N=300, seed=3)
    a = S.simulate(s2, G.base_point(s2), block_size=31, **kw)
    b = S.simulate(s2, G.base_point(s2), block_size=300, **kw)
    assert np.array_equal(a.positions, b.positions)


def test_euclidean_moments():
    N = 20000
    ens = S.simulate(E1, G.base_point(E1), 1.0, 1e-3, N, seed=42, record_times=[1.0])
    x = ens.chart_at(len(ens.record_times) - 1)[:, 0]
    assert abs(x.mean()) < 4.0 / math.sqrt(N)
    assert abs(x.var() - 1.0) < 4.0 * math.sqrt(2.0) / math.sqrt(N)


def test_circle_chi_square_against_wrapped_gaussian():
    N = 40000
    t = 0.7
    start = G.circle_point(0.4)
    ens = S.simulate(CIRCLE, start, t, 1e-3, N, seed=5, record_times=[t])
    angles = np.arctan2(ens.chart_at(-1 + len(ens.record_times))[:, 1],
                        ens.chart_at(len(ens.record_times) - 1)[:, 0])
    K = 24
    edges = np.linspace(-math.pi, math.pi, K + 1)
    counts, _ = np.histogram(angles, bins=edges)
    eng = HK.make_engine(CIRCLE)
    expected = np.empty(K)
    for j in range(K):
        mids = np.linspace(edges[j], edges[j + 1], 9)
        dens = HK.eval_many(eng, t, start.coords,
                            np.stack([np.cos(mids), np.sin(mids)], axis=1))
        expected[j] = np.trapezoid(dens, mids) * N
    stat = float(np.sum((counts - expected) ** 2 / expected))
    assert stat < chi2.ppf(0.99, K - 1)


def test_sphere_first_eigenfunction_decay():
    s2 = G.sphere2()
    N = 30000
    t = 0.5
    ens = S.simulate(s2, G.base_point(s2), t, 1e-3, N, seed=1, record_times=[t])
    z = ens.chart_at(len(ens.record_times) - 1)[:, 2]
    se = z.std(ddof=1) / math.sqrt(N)
    assert abs(z.mean() - math.exp(-t)) < 4.0 * se


def test_weak_convergence_h_halving_on_circle():
    # exact-in-distribution increments: halving h moves estimates within noise
    t = 0.6
    f = lambda ch: ch[:, 0]
    est = []
    for h in (4e-3, 2e-3):
        ens = S.simulate(CIRCLE, G.circle_point(0.0), t, h, 20000, seed=9, record_times=[t])
        vals = f(ens.chart_at(len(ens.record_times) - 1))
        est.append((vals.mean(), vals.std(ddof=1) / math.sqrt(vals.size)))
    (m1, s1), (m2, s2) = est
    assert abs(m1 - m2) < 4.0 * math.hypot(s1, s2)


def test_fdd_mass_and_two_times():
    ens = S.simulate(CIRCLE, G.circle_point(0.3), 0.6, 1e-3, 20000, seed=9,
                     record_times=[0.2, 0.6])
    one = lambda ch: np.ones(ch.shape[0])
    rep = S.fdd_check(ens, [0.2, 0.6], [
        [one, one],
        [lambda ch: ch[:, 0], lambda ch: ch[:, 1]],  # low-order Fourier modes
        [lambda ch: ch[:, 1], lambda ch: ch[:, 0] * ch[:, 1]],
    ])
    assert rep.quad_values[0] == pytest.approx(1.0, abs=1e-9)
    assert rep.max_abs_z < 4.0


def test_fdd_two_time_quadrature_oracle():
    # independent double-integral oracle on an explicit angle lattice
    t1, t2 = 0.25, 0.5
    eng = HK.make_engine(CIRCLE)
    n = 512
    ang = np.arange(n) * (2 * math.pi / n)
    nodes = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    wq = 2 * math.pi / n
    start = G.circle_point(0.0)
    p1 = HK.eval_many(eng, t1, start.coords, nodes)
    f1 = nodes[:, 0]
    inner = np.array([
        np.sum(wq * HK.eval_many(eng, t2 - t1, nodes[i], nodes) * nodes[:, 1]) for i in range(n)
    ])
    oracle = float(np.sum(wq * p1 * f1 * inner))
    ens = S.simulate(CIRCLE, start, t2, 2e-3, 4000, seed=2, record_times=[t1, t2])
    rep = S.fdd_check(ens, [t1, t2], [[lambda ch: ch[:, 0], lambda ch: ch[:, 1]]])
    assert rep.quad_values[0] == pytest.approx(oracle, abs=1e-8)


def test_fdd_hemisphere_symmetry():
    s2 = G.sphere2()
    equator = G.make_point(s2, [1.0, 0, 0])
    ens = S.simulate(s2, equator, 0.3, 2e-3, 20000, seed=4, record_times=[0.3])
    vals = (ens.chart_at(len(ens.record_times) - 1)[:, 2] >= 0).astype(float)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 0.5) < 4.0 * se


def test_feynman_kac_trivial_cases():
    ens = S.simulate(CIRCLE, G.circle_point(0.0), 0.5, 2e-3, 3000, seed=3)
    assert S.feynman_kac(ens, P.Sum(())).value == 1.0
    est = S.feynman_kac(ens, P.Constant(2.0))
    assert est.value == pytest.approx(math.exp(-1.0), abs=1e-14)
    assert est.std_error == pytest.approx(0.0, abs=1e-14)
    # positivity with nonnegative terminal data
    est2 = S.feynman_kac(ens, P.cosine_potential(CIRCLE), f=lambda ch: np.abs(ch[:, 0]))
    assert est2.value >= 0.0


def test_feynman_kac_requires_full_paths():
    ens = S.simulate(CIRCLE, G.circle_point(0.0), 0.5, 2e-3, 100, seed=3, record_times=[0.5])
    with pytest.raises(DomainError):
        S.feynman_kac(ens, P.Constant(1.0))


def test_feynman_kac_vs_spectral_on_circle():
    w = P.cosine_potential(CIRCLE)
    ens = S.simulate(CIRCLE, G.circle_point(0.0), 0.5, 2e-3, 20000, seed=12)
    est = S.feynman_kac(ens, w)
    op = SG.discretize(CIRCLE, 1024, w)
    spectral = float(SG.semigroup_apply(op, 0.5, np.ones(1024))[0])
    assert abs(est.value - spectral) < 4.0 * est.std_error


def test_feynman_kac_capping_reported():
    e3 = G.euclidean(3)
    w = P.RadialPower(e3, G.base_point(e3), 1.0)
    ens = S.simulate(e3, G.base_point(e3), 0.05, 1e-3, 500, seed=8)
    est = S.feynman_kac(ens, w)
    assert est.capped_fraction > 0.0  # paths start at the singular center
    assert est.reliability_warning
    assert math.isfinite(est.value)


def test_kato_exponential_constant_and_zero():
    rep0 = S.kato_exponential_estimate(CIRCLE, P.Sum(()), [0.25, 0.5], [1.5, 2.0], 200, seed=2)
    assert all(e["C"] == 0.0 for e in rep0.table)
    c = 0.8
    rep = S.kato_exponential_estimate(CIRCLE, P.Constant(c), [0.25, 0.5, 1.0], [1.5, 2.0, 4.0],
                                      400, seed=2)
    # deterministic integrand: sup estimate is exactly e^{ct}
    for t, v in zip(rep.t_values, rep.sup_estimates):
        assert v == pytest.approx(math.exp(c * t), rel=1e-12)
    # fitted constants: smallest valid on the grid, decreasing in delta, <= c
    cs = [e["C"] for e in rep.table]
    assert all(a >= b for a, b in zip(cs, cs[1:]))
    assert all(cv <= c + 1e-12 for cv in cs)
    for e in rep.table:
        for t, v in zip(rep.t_values, rep.sup_estimates):
            assert e["delta"] * math.exp(t * e["C"]) >= v * (1 - 1e-12)


def test_kato_exponential_truncated_coulomb_finite():
    e3 = G.euclidean(3)
    w = P.Windowed(e3, P.RadialPower(e3, G.base_point(e3), 1.0, 0.3), G.BallWindow(G.base_point(e3), 1.0))
    rep = S.kato_exponential_estimate(e3, w, [0.2, 0.4], [1.5, 2.0, 4.0], 2000, h=1e-3, seed=6)
    assert not rep.overflowed
    cs = [e["C"] for e in rep.table]
    assert all(math.isfinite(cv) for cv in cs)
    assert all(a >= b - 1e-12 for a, b in zip(cs, cs[1:]))


def test_projection_trivial_mass():
    model = G.parse_manifold("product(euclidean:1,circle)")
    rep = S.elworthy_projection_check(model, 0, P.Constant(1.0), 0.4, G.base_point(model))
    assert rep.lhs_quad == pytest.approx(1.0, abs=1e-9)
    assert rep.rhs_quad == pytest.approx(1.0, abs=1e-9)
    assert rep.passed


def test_projection_indicator_equality_defect():
    model = G.parse_manifold("product(euclidean:3,euclidean:3)")
    leaf = P.leaves(model)[0][0]
    w = P.Indicator(leaf, G.BallWindow(G.base_point(leaf), 1.0))
    rep = S.elworthy_projection_check(model, 0, w, 0.3, G.base_point(model), N=20000, h=2e-3, seed=3)
    assert abs(rep.defect) <= rep.quad_tolerance + 1e-12
    assert rep.passed
    assert abs(rep.mc_z) < 4.0


def test_projected_ensemble_matches_direct_factor_fdd():
    model = G.parse_manifold("product(euclidean:1,circle)")
    ens = S.simulate(model, G.base_point(model), 0.5, 2e-3, 20000, seed=21, record_times=[0.5])
    proj = ens.project(1)
    rep = S.fdd_check(proj, [0.5], [[lambda ch: ch[:, 0]], [lambda ch: ch[:, 1]]])
    assert rep.max_abs_z < 4.0


def test_completeness_probe():
    rep = S.stochastic_completeness_probe(CIRCLE, [0.2, 1.0], 500, seed=4)
    assert all(v == 1.0 for v in rep.survival)
    assert all(abs(m - 1.0) < 1e-9 for m in rep.quad_mass)
    e2 = G.euclidean(2)
    rep2 = S.stochastic_completeness_probe(e2, [0.3], 500, seed=4)
    assert rep2.quad_mass[0] == pytest.approx(1.0, abs=1e-8)
    prod = G.parse_manifold("product(euclidean:1,circle)")
    rep3 = S.stochastic_completeness_probe(prod, [0.3], 300, seed=4)
    assert rep3.quad_mass[0] == pytest.approx(1.0, abs=1e-8)


def test_scheme_validation():
    with pytest.raises(UnsupportedModelError):
        S.simulate(G.sphere2(), G.base_point(G.sphere2()), 0.1, 1e-2, 10, seed=0,
                   scheme="chart_euler")
    with pytest.raises(DomainError):
        S.simulate(E1, G.base_point(E1), 0.1, 0.2, 10, seed=0)
    ens = S.simulate(G.sphere2(), G.base_point(G.sphere2()), 0.1, 0.05, 10, seed=0)
    assert ens.step_warning  # h above the curvature-scale guidance


def test_chart_euler_matches_geodesic_walk_on_flat():
    kw = dict(t=0.3, h=5e-3, N=200, seed=13)
    a = S.simulate(CIRCLE, G.circle_point(0.2), scheme="geodesic_walk", **kw)
    b = S.simulate(CIRCLE, G.circle_point(0.2), scheme="chart_euler", **kw)
    assert np.array_equal(a.positions, b.positions)


def test_truncated_prefix_property():
    ens = S.simulate(E1, G.base_point(E1), 1.0, 1e-2, 50, seed=5)
    sub = ens.truncated(0.5)
    assert sub.horizon == pytest.approx(0.5)
    assert np.array_equal(sub.positions, ens.positions[:, : sub.positions.shape[1], :])
