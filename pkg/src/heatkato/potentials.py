"""Potential descriptors: radial powers, indicators, Coulomb terms, pullbacks
along product projections, sums and sign decompositions.

Potentials are immutable descriptor trees.  Evaluation returns +inf exactly at
singular centers (never a silent overflow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import geometry as geom
from . import heat_kernel as hk
from .errors import DomainError, SingularityError, UnsupportedModelError
from .geometry import BallWindow, BoxWindow, Kind, ManifoldModel, Point, QuadratureGrid


class Potential:
    """Base class; concrete variants below."""


@dataclass(frozen=True)
class Constant(Potential):
    value: float


@dataclass(frozen=True)
class RadialPower(Potential):
    """w(y) = coefficient * d(y, center)^(-beta), beta > 0."""

    model: ManifoldModel
    center: Point
    beta: float
    coefficient: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise DomainError("radial power exponent must be positive")


@dataclass(frozen=True)
class Indicator(Potential):
    model: ManifoldModel
    window: object  # BallWindow or BoxWindow


@dataclass(frozen=True)
class CoulombPotential(Potential):
    """w(y) = profile(d(y, center)); profile(d) ~ 1/(4 pi d) near zero."""

    model: ManifoldModel
    center: Point
    profile: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TwoBody(Potential):
    """On a two-copy product: w(y1, y2) = profile(d_base(y1, y2))."""

    model: ManifoldModel  # product(base, base)
    profile: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Pullback(Potential):
    """inner o projection; index selects a leaf factor (int) or a pair (i, j)."""

    model: ManifoldModel  # the product model being projected
    index: object
    inner: Potential


@dataclass(frozen=True)
class RadialFunction(Potential):
    """Smooth bounded w(y) = profile(d(y, center)), e.g. cos of the distance."""

    model: ManifoldModel
    center: Point
    profile: Callable[[np.ndarray], np.ndarray]
    sup: float
    name: str = "radial"


def cosine_potential(model: ManifoldModel, center: Point | None = None) -> RadialFunction:
    """w(y) = cos(d(y, center)); on the circle with the default center this is
    cos(theta)."""
    c = center if center is not None else geom.base_point(model)
    return RadialFunction(model, c, np.cos, 1.0, "cos-distance")


@dataclass(frozen=True)
class Windowed(Potential):
    """inner * indicator(window); keeps singular potentials inside L^q."""

    model: ManifoldModel
    inner: Potential
    window: object  # BallWindow (or BoxWindow)


@dataclass(frozen=True)
class Sum(Potential):
    terms: tuple


@dataclass(frozen=True)
class Scale(Potential):
    factor: float
    inner: Potential


@dataclass(frozen=True)
class PosPart(Potential):
    inner: Potential


@dataclass(frozen=True)
class NegPart(Potential):
    inner: Potential


@dataclass(frozen=True)
class AbsVal(Potential):
    inner: Potential


def positive_part(w: Potential) -> Potential:
    return PosPart(w)


def negative_part(w: Potential) -> Potential:
    return NegPart(w)


def absolute(w: Potential) -> Potential:
    return AbsVal(w)


# ---------------------------------------------------------------------------
# product leaf bookkeeping


def leaves(model: ManifoldModel) -> list[tuple[ManifoldModel, int]]:
    """Flatten a product tree into (leaf model, chart offset) pairs."""
    out: list[tuple[ManifoldModel, int]] = []

    def walk(m: ManifoldModel, off: int):
        if m.kind is Kind.PRODUCT:
            for f in m.factors:
                walk(f, off)
                off += f.chart_dim
        else:
            out.append((m, off))

    walk(model, 0)
    return out


def _leaf_slice(model: ManifoldModel, index: int) -> tuple[ManifoldModel, slice]:
    ls = leaves(model)
    if not 0 <= index < len(ls):
        raise DomainError(f"factor index {index} out of range for {model.describe()}")
    leaf, off = ls[index]
    return leaf, slice(off, off + leaf.chart_dim)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_many(w: Potential, ys: np.ndarray) -> np.ndarray:
    """Vectorized evaluation on chart coordinate rows."""
    ys = np.atleast_2d(ys)
    if isinstance(w, Constant):
        return np.full(ys.shape[0], float(w.value))
    if isinstance(w, RadialPower):
        d = geom.distance_many(w.model, w.center.coords, ys)
        with np.errstate(divide="ignore"):
            return np.where(d > 0.0, w.coefficient * d ** (-w.beta), np.inf * np.sign(w.coefficient))
    if isinstance(w, Indicator):
        win = w.window
        if isinstance(win, BallWindow):
            d = geom.distance_many(w.model, win.center.coords, ys)
            return (d <= win.radius).astype(float)
        if isinstance(win, BoxWindow):
            hw = np.asarray(win.halfwidth, dtype=float)
            delta = ys - win.center.coords
            if w.model.kind is Kind.TORUS:
                delta = geom._wrap(delta, w.model.side_length)
            return np.all(np.abs(delta) <= hw, axis=1).astype(float)
        raise DomainError(f"indicator window {win!r} not supported")
    if isinstance(w, CoulombPotential):
        d = geom.distance_many(w.model, w.center.coords, ys)
        out = np.where(d > 0.0, w.profile(np.maximum(d, 1e-300)), np.inf)
        return out
    if isinstance(w, TwoBody):
        left, right = w.model.factors
        cl = left.chart_dim
        d = np.array(
            [geom.distance_many(left, row[:cl], row[None, cl:])[0] for row in ys]
        )
        return np.where(d > 0.0, w.profile(np.maximum(d, 1e-300)), np.inf)
    if isinstance(w, Pullback):
        if isinstance(w.index, tuple):
            i, j = w.index
            _, si = _leaf_slice(w.model, i)
            _, sj = _leaf_slice(w.model, j)
            sub = np.concatenate([ys[:, si], ys[:, sj]], axis=1)
            return evaluate_many(w.inner, sub)
        _, s = _leaf_slice(w.model, int(w.index))
        return evaluate_many(w.inner, ys[:, s])
    if isinstance(w, RadialFunction):
        d = geom.distance_many(w.model, w.center.coords, ys)
        return np.asarray(w.profile(d), dtype=float)
    if isinstance(w, Windowed):
        inside = evaluate_many(Indicator(w.model, w.window), ys)
        return evaluate_many(w.inner, ys) * inside
    if isinstance(w, Sum):
        if not w.terms:
            return np.zeros(ys.shape[0])
        acc = evaluate_many(w.terms[0], ys)
        for term in w.terms[1:]:
            acc = acc + evaluate_many(term, ys)
        return acc
    if isinstance(w, Scale):
        return w.factor * evaluate_many(w.inner, ys)
    if isinstance(w, PosPart):
        return np.maximum(evaluate_many(w.inner, ys), 0.0)
    if isinstance(w, NegPart):
        return np.maximum(-evaluate_many(w.inner, ys), 0.0)
    if isinstance(w, AbsVal):
        return np.abs(evaluate_many(w.inner, ys))
    raise DomainError(f"unknown potential {w!r}")


def evaluate(w: Potential, y: Point) -> float:
    return float(evaluate_many(w, y.coords[None, :])[0])


# ---------------------------------------------------------------------------
# singularity metadata (for excision and path capping)


@dataclass(frozen=True)
class SingularityInfo:
    model: ManifoldModel  # leaf model the center lives on
    center: Point
    beta: float
    profile: Callable[[np.ndarray], np.ndarray]  # local |w| as a function of distance
    coord_slice: slice  # where the leaf coordinates sit in the full chart
    pair_slices: tuple | None = None  # for diagonal (two-body) singular sets

    def distances(self, ys: np.ndarray) -> np.ndarray:
        ys = np.atleast_2d(ys)
        if self.pair_slices is not None:
            si, sj = self.pair_slices
            d = np.array(
                [geom.distance_many(self.model, row[si], row[None, sj])[0] for row in ys]
            )
            return d / math.sqrt(2.0)  # distance to the diagonal in the product metric
        return geom.distance_many(self.model, self.center.coords, ys[:, self.coord_slice])


def singularities(w: Potential, scale: float = 1.0, coord_slice: slice | None = None) -> list[SingularityInfo]:
    if isinstance(w, RadialPower):
        cs = coord_slice or slice(0, w.model.chart_dim)
        coef = abs(scale * w.coefficient)
        beta = w.beta
        return [
            SingularityInfo(w.model, w.center, beta, lambda r, c=coef, b=beta: c * r ** (-b), cs)
        ]
    if isinstance(w, CoulombPotential):
        cs = coord_slice or slice(0, w.model.chart_dim)
        sc = abs(scale)
        return [
            SingularityInfo(w.model, w.center, 1.0, lambda r, s=sc, p=w.profile: s * np.abs(p(r)), cs)
        ]
    if isinstance(w, TwoBody):
        left, _ = w.model.factors
        cl = left.chart_dim
        cs = coord_slice or slice(0, w.model.chart_dim)
        si = slice(cs.start, cs.start + cl)
        sj = slice(cs.start + cl, cs.start + 2 * cl)
        sc = abs(scale)
        return [
            SingularityInfo(
                left,
                geom.base_point(left),
                1.0,
                lambda r, s=sc, p=w.profile: s * np.abs(p(r)),
                cs,
                pair_slices=(si, sj),
            )
        ]
    if isinstance(w, Pullback):
        if isinstance(w.index, tuple):
            i, j = w.index
            _, si = _leaf_slice(w.model, i)
            _, sj = _leaf_slice(w.model, j)
            if sj.start != si.stop:
                # non-adjacent leaves: rebuild inner singularities with explicit pair slices
                out = []
                for s in singularities(w.inner, scale):
                    if s.pair_slices is not None:
                        out.append(
                            SingularityInfo(s.model, s.center, s.beta, s.profile, si, pair_slices=(si, sj))
                        )
                    else:
                        out.append(SingularityInfo(s.model, s.center, s.beta, s.profile, si))
                return out
            return singularities(w.inner, scale, slice(si.start, sj.stop))
        _, s = _leaf_slice(w.model, int(w.index))
        return singularities(w.inner, scale, s)
    if isinstance(w, Windowed):
        kept = []
        for s in singularities(w.inner, scale, coord_slice):
            if s.pair_slices is not None:
                kept.append(s)
                continue
            inside = evaluate_many(Indicator(w.model, w.window), s.center.coords[None, :])[0]
            if inside > 0:
                kept.append(s)
        return kept
    if isinstance(w, Sum):
        out = []
        for term in w.terms:
            out.extend(singularities(term, scale, coord_slice))
        return out
    if isinstance(w, Scale):
        return singularities(w.inner, scale * w.factor, coord_slice)
    if isinstance(w, (PosPart, NegPart, AbsVal)):
        return singularities(w.inner, scale, coord_slice)
    return []


def singular_distance_many(w: Potential, ys: np.ndarray) -> np.ndarray:
    """Distance from each row to the nearest singular set (inf if none)."""
    sings = singularities(w)
    ys = np.atleast_2d(ys)
    if not sings:
        return np.full(ys.shape[0], np.inf)
    d = np.full(ys.shape[0], np.inf)
    for s in sings:
        d = np.minimum(d, s.distances(ys))
    return d


# ---------------------------------------------------------------------------
# weighted L^q norms with singularity excision


@dataclass
class WeightedLqNorm:
    q: float
    value: float
    diverges: bool
    excision_radius: float
    excised_nodes: int
    window: str

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "value": self.value,
            "diverges": self.diverges,
            "excision_radius": self.excision_radius,
            "excised_nodes": self.excised_nodes,
            "window": self.window,
        }


def _weight_values(weight, grid: QuadratureGrid) -> np.ndarray:
    if weight is None:
        return np.ones(grid.size)
    if callable(weight):
        return np.array([float(weight(geom.Point(c))) for c in grid.node_coords])
    arr = np.asarray(weight, dtype=float)
    if arr.shape == ():
        return np.full(grid.size, float(arr))
    return arr


def _weight_at(weight, model: ManifoldModel, p: Point) -> float:
    if weight is None:
        return 1.0
    if callable(weight):
        return float(weight(p))
    arr = np.asarray(weight, dtype=float)
    if arr.shape == ():
        return float(arr)
    raise DomainError("array weights cannot be extrapolated to excised centers")


def lq_norm(
    w: Potential,
    q: float,
    weight,
    grid: QuadratureGrid,
    excision_radius: float | None = None,
) -> WeightedLqNorm:
    """(integral |w|^q * weight dmu)^(1/q) over the grid window.

    Integrable point singularities are excised and their ball contribution
    added from the local radial profile; beta*q >= m flags divergence.
    """
    if q < 1:
        raise DomainError("q must be >= 1")
    model = grid.model
    sings = [s for s in singularities(w) if s.pair_slices is None]
    subspace = [s for s in singularities(w) if s.pair_slices is not None]
    for s in sings:
        if s.beta * q >= s.model.dim:
            return WeightedLqNorm(q, math.inf, True, 0.0, 0, grid.window.describe())
    eps = excision_radius if excision_radius is not None else 2.0 * grid.resolution
    vals = np.abs(evaluate_many(w, grid.node_coords))
    wvals = _weight_values(weight, grid)
    keep = np.ones(grid.size, dtype=bool)
    for s in sings:
        keep &= s.distances(grid.node_coords) >= eps
    for s in subspace:
        keep &= s.distances(grid.node_coords) >= eps
    base = float(np.sum(grid.weights[keep] * vals[keep] ** q * wvals[keep]))
    correction = 0.0
    for s in sings:
        center_full = _embed_center(model, s)
        if center_full is None:
            continue
        wc = _weight_at(weight, model, center_full)
        integrand = lambda r, s=s: s.profile(np.atleast_1d(r))[0] ** q * geom.ball_surface(s.model, float(r))
        val, _ = quad(integrand, 0.0, eps, epsabs=1e-12, epsrel=1e-10, limit=200)
        rest = _smooth_rest_at(w, s, center_full)
        correction += wc * (val + rest**q * geom.ball_volume_radial(s.model, eps))
    total = base + correction
    return WeightedLqNorm(
        q, total ** (1.0 / q), False, eps, int(np.sum(~keep)), grid.window.describe()
    )


def _embed_center(model: ManifoldModel, s: SingularityInfo) -> Point | None:
    """Singularity center as a point of the grid's model (None for diagonals)."""
    if s.pair_slices is not None:
        return None
    if s.coord_slice.start == 0 and s.coord_slice.stop == model.chart_dim:
        return s.center
    # pullback center: singular set is a subspace; excision handled nodewise,
    # the ball correction does not apply
    return None


def _smooth_rest_at(w: Potential, s: SingularityInfo, center: Point) -> float:
    """|w - singular term| near the center, used to correct the excised ball."""
    other = 0.0
    for s2 in singularities(w):
        if s2 is s or s2.pair_slices is not None:
            continue
        d = float(s2.distances(center.coords[None, :])[0])
        if d > 1e-12:
            other += float(s2.profile(np.array([d]))[0])
    return other


# ---------------------------------------------------------------------------
# Coulomb potential (half the time-integrated heat kernel)


@dataclass
class CoulombValue:
    value: float
    tail_bound: float
    s_max: float

    def to_dict(self) -> dict:
        return {"value": self.value, "tail_bound": self.tail_bound, "s_max": self.s_max}


def _coulomb_supported(model: ManifoldModel) -> bool:
    # needs p(t,x,x) <= C t^{-3/2} for all t > 0
    if model.kind is Kind.EUCLIDEAN and model.dim == 3:
        return True
    return model.kind is Kind.HYPERBOLIC3


def coulomb(
    engine: hk.HeatKernelEngine,
    x: Point,
    y: Point,
    s_max: float | None = None,
    tol: float = 1e-10,
) -> CoulombValue:
    """(1/2) * integral over (0, s_max] of p(s, x, y) ds, plus a tail bound.

    Convergence needs the on-diagonal decay t^{-3/2}; only Euclidean(3) and
    Hyperbolic3 qualify among the built-ins.
    """
    model = engine.model
    if not _coulomb_supported(model):
        raise UnsupportedModelError(
            f"coulomb needs p(t,x,x) <= C t^(-3/2); {model.describe()} does not qualify"
        )
    d = geom.distance(model, x, y)
    if d == 0.0:
        raise SingularityError("coulomb potential diverges on the diagonal")

    def integrand(s: float) -> float:
        return 0.5 * float(hk.eval_radial(engine, s, np.array([d]))[0])

    def integrand_u(u: float) -> float:
        # far side under s = u^-2; for the Euclidean kernel this is a plain
        # Gaussian in u, so huge s_max costs nothing
        s = u**-2.0
        return integrand(s) * 2.0 * u**-3.0

    def tail(sm: float) -> float:
        if model.kind is Kind.EUCLIDEAN:
            return 0.5 * (2.0 * math.pi) ** -1.5 * 2.0 / math.sqrt(sm)
        ratio = 1.0 if d < 1e-8 else 2.0 * d * math.exp(-d) / (1.0 - math.exp(-2.0 * d))
        return 0.5 * ratio * (2.0 * math.pi * sm) ** -1.5 * 2.0 * math.exp(-sm / 2.0)

    def compute(sm: float) -> float:
        split = min(d * d, sm)
        a, _ = quad(integrand, 0.0, split, points=[split / 10.0], epsabs=1e-14, epsrel=1e-12, limit=300)
        if sm <= split:
            return a
        b, _ = quad(integrand_u, sm**-0.5, split**-0.5, epsabs=1e-14, epsrel=1e-12, limit=300)
        return a + b

    if s_max is not None:
        sm = s_max
        val = compute(sm)
    else:
        sm = max(10.0, 4.0 * d * d)
        val = compute(sm)
        for _ in range(200):
            if tail(sm) < tol * max(val, 1e-300):
                break
            if model.kind is Kind.EUCLIDEAN:
                # invert the sqrt tail directly rather than doubling 70 times
                sm = max(4.0 * sm, ((2.0 * math.pi) ** -1.5 / (tol * max(val, 1e-300))) ** 2)
            else:
                sm *= 4.0
            val = compute(sm)
    return CoulombValue(value=val, tail_bound=tail(sm), s_max=sm)


def coulomb_profile(model: ManifoldModel) -> Callable[[np.ndarray], np.ndarray]:
    """Closed-form radial profile of the Coulomb potential."""
    if model.kind is Kind.EUCLIDEAN and model.dim == 3:
        return lambda d: 1.0 / (4.0 * math.pi * d)
    if model.kind is Kind.HYPERBOLIC3:
        return lambda d: np.exp(-d) / (4.0 * math.pi * np.sinh(d))
    raise UnsupportedModelError(f"no Coulomb profile on {model.describe()}")


def make_coulomb_potential(model: ManifoldModel, center: Point) -> CoulombPotential:
    return CoulombPotential(model, center, coulomb_profile(model))


# ---------------------------------------------------------------------------
# many-body assembly


def many_body_assemble(
    l1: int, nuclei: list[Point], engine: hk.HeatKernelEngine
) -> Potential:
    """Attractive electron-nucleus terms plus repulsive electron-electron pairs
    on the l1-fold product configuration space."""
    if l1 < 1:
        raise DomainError("need at least one electron")
    model = engine.model
    if l1 == 1:
        base = model
        if base.kind is Kind.PRODUCT:
            raise DomainError("one-electron assembly expects the base model itself")
    else:
        ls = leaves(model)
        if len(ls) != l1:
            raise DomainError(
                f"model {model.describe()} has {len(ls)} factors, expected {l1}"
            )
        base = ls[0][0]
        if any(f.describe() != base.describe() for f, _ in ls):
            raise DomainError("configuration space must be a power of one base model")
    if base.dim != 3 or not _coulomb_supported(base):
        raise DomainError("many-body assembly needs a 3-dimensional base with t^(-3/2) decay")
    profile = coulomb_profile(base)
    terms: list[Potential] = []
    for i in range(l1):
        for y in nuclei:
            attract = CoulombPotential(base, y, profile)
            if l1 == 1:
                terms.append(Scale(-1.0, attract))
            else:
                terms.append(Scale(-1.0, Pullback(model, i, attract)))
    if l1 >= 2:
        pair_base = geom.product(base, base)
        for i in range(l1):
            for j in range(i + 1, l1):
                terms.append(Pullback(model, (i, j), TwoBody(pair_base, profile)))
    return Sum(tuple(terms))


# ---------------------------------------------------------------------------
# manifest syntax


def parse_potential(spec: str, model: ManifoldModel) -> Potential:
    """Parse specs like ``constant:5``, ``radialpower:beta=1:center=0,0,0``,
    ``coulomb:center=0,0,0``, ``indicator:ball:r=1:center=...``,
    ``pullback:1:<inner>``, ``scale:-2:<inner>``, ``sum[a;b;...]``."""
    from .errors import ManifestError

    s = spec.strip()
    low = s.lower()
    if low.startswith("sum[") and s.endswith("]"):
        inner = s[4:-1]
        if not inner.strip():
            return Sum(())
        return Sum(tuple(parse_potential(part, model) for part in inner.split(";")))
    head, _, rest = s.partition(":")
    head = head.strip().lower()
    if head == "constant":
        return Constant(float(rest))
    if head == "zero":
        return Sum(())
    if head == "scale":
        factor, _, inner = rest.partition(":")
        return Scale(float(factor), parse_potential(inner, model))
    if head == "pullback":
        idx, _, inner = rest.partition(":")
        idx = idx.strip()
        if "," in idx:
            i, j = (int(v) for v in idx.split(","))
            ls = leaves(model)
            pair = geom.product(ls[i][0], ls[j][0])
            return Pullback(model, (i, j), parse_potential(inner, pair))
        leaf, _ = _leaf_slice(model, int(idx))
        return Pullback(model, int(idx), parse_potential(inner, leaf))
    if head == "windowed":
        # leading key=value fields configure the ball; the remainder is the inner spec
        parts = rest.split(":")
        fields, consumed = {}, 0
        for part in parts:
            if "=" in part and part.split("=", 1)[0].strip().lower() in ("r", "center"):
                k, v = _kv(part)
                fields[k] = v
                consumed += 1
            else:
                break
        inner = ":".join(parts[consumed:])
        win = BallWindow(_center_point(fields, model), float(fields.get("r", 1.0)))
        return Windowed(model, parse_potential(inner, model), win)
    if head == "indicator":
        kindname = rest.split(":", 1)[0].strip().lower()
        fields = dict(_kv(part) for part in rest.split(":")[1:] if part)
        center = _center_point(fields, model)
        if kindname == "ball":
            return Indicator(model, BallWindow(center, float(fields.get("r", 1.0))))
        if kindname == "box":
            hw = tuple(float(v) for v in str(fields.get("w", "1")).split(","))
            if len(hw) == 1:
                hw = hw * model.dim
            return Indicator(model, BoxWindow(center, hw))
        raise ManifestError(f"unknown indicator region {kindname!r}")
    fields = dict(_kv(part) for part in rest.split(":") if part) if rest else {}
    if head == "radialpower":
        beta = float(fields.get("beta", 1.0))
        center = _center_point(fields, model)
        coeff = float(fields.get("coeff", 1.0))
        return RadialPower(model, center, beta, coeff)
    if head == "coulomb":
        return make_coulomb_potential(model, _center_point(fields, model))
    if head == "cosine":
        return cosine_potential(model, _center_point(fields, model))
    raise ManifestError(f"unknown potential spec {spec!r}")


def _kv(part: str) -> tuple[str, str]:
    from .errors import ManifestError

    k, sep, v = part.partition("=")
    if not sep:
        raise ManifestError(f"expected key=value, got {part!r}")
    return k.strip().lower(), v.strip()


def _center_point(fields: dict, model: ManifoldModel) -> Point:
    if "center" not in fields:
        return geom.base_point(model)
    vals = [float(v) for v in fields["center"].split(",")]
    return geom.make_point(model, vals)
