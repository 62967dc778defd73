"""Internal quadrature helpers.

Two workhorses live here:

* ``radial_integral``   -- 1-d integrals of rho -> f(rho) against the geodesic
  sphere area s_m(rho), with geometric cell ladders around features.
* ``two_point_integral``-- integrals of y -> f(d(y,x)) g(d(y,c)) over a whole
  model manifold.  On E^m, H^3, S^2 and the circle such integrands are
  axially symmetric about the geodesic through x and c, which reduces the
  integral to two dimensions regardless of the ambient dimension.

All rules are composite Gauss-Legendre over explicit cell partitions, so
excising a region maps exactly to dropping cells/nodes.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import UnsupportedModelError
from .geometry import Kind, ManifoldModel, ball_surface_many

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def gl_nodes(breaks: np.ndarray):
    """Composite 4-point Gauss-Legendre nodes/weights over a cell partition."""
    breaks = np.asarray(breaks, dtype=float)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    weights = (half[:, None] * _GL_W[None, :]).ravel()
    return nodes, weights


def feature_breaks(
    r_max: float,
    scales_at_zero=(),
    features=(),
    max_cell: float | None = None,
) -> np.ndarray:
    """Cell boundaries on [0, r_max]: geometric ladders out of 0 and around
    interior feature locations, then a global cap on the cell width."""
    pts = {0.0, r_max}
    for s in scales_at_zero:
        u = max(s, 1e-12) / 4.0
        while u < r_max:
            pts.add(u)
            u *= 2.0
    for loc, s in features:
        if not 0.0 < loc < r_max:
            continue
        pts.add(loc)
        u = max(s, 1e-12) / 4.0
        while u < r_max:
            for v in (loc - u, loc + u):
                if 0.0 < v < r_max:
                    pts.add(v)
            u *= 2.0
    out = np.array(sorted(pts))
    if max_cell is None:
        max_cell = r_max / 16.0
    refined = [out[0]]
    for right in out[1:]:
        left = refined[-1]
        k = int(math.ceil((right - left) / max_cell))
        for j in range(1, k + 1):
            refined.append(left + (right - left) * j / k)
    return np.array(refined)


def radial_integral(model: ManifoldModel, f, r_max: float, breaks: np.ndarray | None = None,
                    scales_at_zero=(), features=(), max_cell=None) -> float:
    """integral over B(x, r_max) of f(d(x, y)) dmu(y), reduced to 1-d."""
    if breaks is None:
        breaks = feature_breaks(r_max, scales_at_zero, features, max_cell)
    rho, w = gl_nodes(breaks)
    area = ball_surface_many(model, rho)
    return float(np.sum(w * area * f(rho)))


# ---------------------------------------------------------------------------
# two-point (axisymmetric) integrals


def _cross_distance(model: ManifoldModel, rho: np.ndarray, theta: np.ndarray, d: float) -> np.ndarray:
    """d(y, c) for y at polar coords (rho, theta) about x, with c on the axis
    at distance d.  Written in difference form so nearby points keep full
    precision."""
    k = model.kind
    sin_half_sq = np.sin(theta / 2.0) ** 2
    if k is Kind.EUCLIDEAN:
        return np.sqrt((rho - d) ** 2 + 4.0 * rho * d * sin_half_sq)
    if k is Kind.HYPERBOLIC3:
        cosh_m1 = 2.0 * np.sinh((rho - d) / 2.0) ** 2 + 2.0 * np.sinh(rho) * math.sinh(d) * sin_half_sq
        return 2.0 * np.arcsinh(np.sqrt(cosh_m1 / 2.0))
    if k is Kind.SPHERE2:
        one_m_cos = 2.0 * np.sin((rho - d) / 2.0) ** 2 + 2.0 * np.sin(rho) * math.sin(d) * sin_half_sq
        return 2.0 * np.arcsin(np.sqrt(np.clip(one_m_cos / 2.0, 0.0, 1.0)))
    raise UnsupportedModelError(str(k))


def _angular_jacobian(model: ManifoldModel, theta: np.ndarray) -> np.ndarray:
    """Weight of the direction sphere at polar angle theta (full rotation)."""
    if model.dim == 2:
        return np.full_like(theta, 2.0)  # both sides of the axis
    if model.dim == 3:
        return 2.0 * math.pi * np.sin(theta)
    raise UnsupportedModelError("two-point reduction implemented for m in {2, 3}")


def two_point_integral(
    model: ManifoldModel,
    f,
    g,
    d: float,
    r_max: float,
    f_scale: float,
    g_scale: float,
    g_singular_radius: float = 0.0,
    max_cell: float | None = None,
) -> float:
    """integral of f(d(y,x)) * g(d(y,c)) dmu(y) with d = d(x, c).

    ``f_scale``/``g_scale`` control cell refinement near the two centers.
    Nodes with d(y,c) < g_singular_radius are dropped (the caller accounts for
    the excised ball analytically).
    """
    k = model.kind
    if k is Kind.CIRCLE:
        return _two_point_circle(f, g, d, g_singular_radius)
    if k is Kind.SPHERE2:
        r_max = min(r_max, math.pi)
    if d <= 1e-14:
        # concentric: purely radial (any dimension, including m = 1)
        def combined(rho):
            vals = f(rho) * g(rho)
            if g_singular_radius > 0.0:
                vals = np.where(rho < g_singular_radius, 0.0, vals)
            return vals

        return radial_integral(
            model,
            combined,
            r_max,
            scales_at_zero=(f_scale, g_scale, g_singular_radius or f_scale),
            max_cell=max_cell,
        )
    if k is Kind.EUCLIDEAN and model.dim == 1:
        breaks = feature_breaks(
            r_max,
            scales_at_zero=(f_scale,),
            features=((d, min(g_scale, g_singular_radius or g_scale)),),
            max_cell=max_cell,
        )
        rho, w = gl_nodes(breaks)
        gplus = g(rho + d)
        gminus = g(np.abs(rho - d))
        if g_singular_radius > 0.0:
            gplus = np.where(rho + d < g_singular_radius, 0.0, gplus)
            gminus = np.where(np.abs(rho - d) < g_singular_radius, 0.0, gminus)
        return float(np.sum(w * f(rho) * (gplus + gminus)))
    rad_breaks = feature_breaks(
        r_max,
        scales_at_zero=(f_scale,),
        features=((d, min(g_scale, g_singular_radius or g_scale)),),
        max_cell=max_cell,
    )
    rho, w_rho = gl_nodes(rad_breaks)
    # angular feature width: the g-structure around the axis seen from x;
    # the angular cap shrinks together with the radial one
    w_ang = max(g_scale, g_singular_radius, 1e-6) / max(d, 1e-6)
    ang_cap = math.pi / 8.0
    if max_cell is not None:
        ang_cap *= max_cell / (r_max / 16.0)
    ang_breaks = feature_breaks(math.pi, scales_at_zero=(min(w_ang, math.pi),), max_cell=ang_cap)
    theta, w_theta = gl_nodes(ang_breaks)

    R, T = np.meshgrid(rho, theta, indexing="ij")
    dc = _cross_distance(model, R, T, d)
    vals = g(dc.ravel()).reshape(dc.shape)
    if g_singular_radius > 0.0:
        vals = np.where(dc < g_singular_radius, 0.0, vals)
    radial_part = w_rho * ball_surface_many(model, rho) * f(rho)
    ang_part = w_theta * _angular_jacobian(model, theta) / _full_rotation(model)
    return float(radial_part @ vals @ ang_part)


def _full_rotation(model: ManifoldModel) -> float:
    # ball_surface already contains the full direction-sphere volume; the
    # angular jacobian integrates to that same constant, so normalize it out.
    if model.dim == 2:
        return 2.0 * math.pi if model.kind is Kind.EUCLIDEAN else 2.0 * math.pi
    return 4.0 * math.pi


def _two_point_circle(f, g, d: float, g_singular_radius: float) -> float:
    # chart variable: signed angle from x; c sits at +d
    def wrap(a):
        return np.abs(np.mod(a + math.pi, 2.0 * math.pi) - math.pi)

    pts = {-math.pi, 0.0, math.pi}
    for loc in (0.0, d, d - 2.0 * math.pi):
        for s in (1e-4, 1e-3, 1e-2, 0.1, 0.5):
            for v in (loc - s, loc + s):
                if -math.pi < v < math.pi:
                    pts.add(v)
        if -math.pi < loc < math.pi:
            pts.add(loc)
    breaks = np.array(sorted(pts))
    refined = [breaks[0]]
    for right in breaks[1:]:
        left = refined[-1]
        k = int(math.ceil((right - left) / (math.pi / 16.0)))
        for j in range(1, k + 1):
            refined.append(left + (right - left) * j / k)
    theta, w = gl_nodes(np.array(refined))
    dist_x = np.abs(theta)
    dist_c = wrap(theta - d)
    vals = f(dist_x) * g(dist_c)
    if g_singular_radius > 0.0:
        vals = np.where(dist_c < g_singular_radius, 0.0, vals)
    return float(np.sum(w * vals))


# ---------------------------------------------------------------------------
# certificate integrals


def certificate_integral(time_factor, q: float) -> float:
    """integral over (0, 1] of time_factor(s)^(1/q) ds.

    Under s = e^{-x} a power-like singularity s^{-a} (a < 1) becomes the
    smooth exponential e^{-(1-a)x} on [0, inf); composite Gauss-Legendre in x
    then resolves the integral to machine precision however close a is to 1.
    The extent grows adaptively until the last segment is negligible."""

    def g(x: float) -> float:
        s = math.exp(-x)
        return time_factor(s) ** (1.0 / q) * s

    # direct integration on [0, X]; e^{-X} stays comfortably above the float
    # floor so the time factor cannot overflow internally
    X = 350.0
    breaks = np.arange(0.0, X + 0.25, 0.5)
    nodes, weights = gl_nodes(breaks)
    vals = np.array([g(float(x)) for x in nodes])
    total = float(np.sum(weights * vals))
    # geometric tail: by x = X any admissible factor is in its asymptotic
    # power regime, where g is exactly exponential
    gX = g(X)
    if gX > 1e-18 * max(total, 1e-300):
        # wide baseline keeps the fitted rate exact to ~1e-15 even when the
        # tail carries a sizable share of the total
        lam = math.log(g(X - 50.0) / gX) / 50.0
        if lam <= 0.0:
            return math.inf  # not integrable at 0
        total += gX / lam
    return total
