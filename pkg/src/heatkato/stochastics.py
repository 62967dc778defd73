"""Brownian motion on the model manifolds and path-functional estimators.

Sampling scheme: the geodesic random walk (Gaussian tangent step of metric
covariance h, pushed through the exponential map).  On the flat models the
increments are exact in distribution; on Sphere2/Hyperbolic3 the walk has
weak order one, which the 4-sigma testing budgets absorb.

Reproducibility contract: path i draws from Philox keyed by (seed, i), so
results are bit-identical for any block partitioning or worker count, with a
fixed (pairwise/blockwise) reduction order for all estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import geometry as geom
from . import heat_kernel as hk
from . import kato as kato_mod
from . import potentials as pot
from .errors import DomainError, UnsupportedModelError
from .geometry import Kind, ManifoldModel, Point

_MAX_STORE_BYTES = 600_000_000


def _path_dim(model: ManifoldModel) -> int:
    if model.kind is Kind.CIRCLE:
        return 1  # stored as the angle
    if model.kind is Kind.PRODUCT:
        return sum(_path_dim(f) for f in model.factors)
    return model.chart_dim


def _chart_from_path(model: ManifoldModel, paths: np.ndarray) -> np.ndarray:
    """(n, path_dim) -> (n, chart_dim)."""
    k = model.kind
    if k is Kind.CIRCLE:
        a = paths[..., 0]
        return np.stack([np.cos(a), np.sin(a)], axis=-1)
    if k is Kind.PRODUCT:
        out, i = [], 0
        for f in model.factors:
            w = _path_dim(f)
            out.append(_chart_from_path(f, paths[..., i : i + w]))
            i += w
        return np.concatenate(out, axis=-1)
    return paths


def _path_from_chart(model: ManifoldModel, chart: np.ndarray) -> np.ndarray:
    k = model.kind
    if k is Kind.CIRCLE:
        return np.arctan2(chart[..., 1], chart[..., 0])[..., None]
    if k is Kind.PRODUCT:
        out, i = [], 0
        for f in model.factors:
            w = f.chart_dim
            out.append(_path_from_chart(f, chart[..., i : i + w]))
            i += w
        return np.concatenate(out, axis=-1)
    return chart


def _is_flat(model: ManifoldModel) -> bool:
    if model.kind in (Kind.EUCLIDEAN, Kind.TORUS, Kind.CIRCLE):
        return True
    if model.kind is Kind.PRODUCT:
        return all(_is_flat(f) for f in model.factors)
    return False


def _has_curved_leaf(model: ManifoldModel) -> bool:
    return not _is_flat(model)


def _wrap_flat(model: ManifoldModel, paths: np.ndarray) -> np.ndarray:
    k = model.kind
    if k is Kind.TORUS:
        return np.mod(paths, model.side_length)
    if k is Kind.CIRCLE:
        return np.mod(paths + math.pi, 2.0 * math.pi) - math.pi
    if k is Kind.PRODUCT:
        out, i = [], 0
        for f in model.factors:
            w = _path_dim(f)
            out.append(_wrap_flat(f, paths[..., i : i + w]))
            i += w
        return np.concatenate(out, axis=-1)
    return paths


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one path, independent of any partitioning."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class PathEnsemble:
    model: ManifoldModel
    start: Point
    step: float
    horizon: float
    n_paths: int
    seed: int
    scheme: str
    record_times: np.ndarray  # actual recorded times (multiples of step)
    positions: np.ndarray  # (n_paths, n_records, path_dim)
    lifetimes: np.ndarray  # explosion times; inf on the complete built-ins
    step_warning: bool
    full: bool

    def chart_at(self, time_index: int) -> np.ndarray:
        return _chart_from_path(self.model, self.positions[:, time_index, :])

    def points_at(self, time_index: int) -> list[Point]:
        return [Point(c) for c in self.chart_at(time_index)]

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.record_times - t)))
        if abs(self.record_times[idx] - t) > 1e-9 + 1e-9 * abs(t):
            raise DomainError(f"time {t} was not recorded (nearest {self.record_times[idx]})")
        return idx

    def truncated(self, t: float) -> "PathEnsemble":
        """Prefix of the ensemble up to recorded time t (paths are shared)."""
        idx = self.time_index(t)
        return PathEnsemble(
            self.model, self.start, self.step, float(self.record_times[idx]), self.n_paths,
            self.seed, self.scheme, self.record_times[: idx + 1],
            self.positions[:, : idx + 1, :], self.lifetimes, self.step_warning,
            self.full,
        )

    def project(self, leaf_index: int) -> "PathEnsemble":
        """Ensemble of the projected paths on one product factor."""
        model = self.model
        if model.kind is not Kind.PRODUCT:
            raise UnsupportedModelError("projection needs a product ensemble")
        ls = pot.leaves(model)
        leaf = ls[leaf_index][0]
        off = sum(_path_dim(ls[j][0]) for j in range(leaf_index))
        w = _path_dim(leaf)
        start_chart = geom.split_point(model, self.start)[leaf_index] if len(model.factors) == len(ls) else None
        if start_chart is None:
            start_coords = _chart_from_path(leaf, self.positions[0, 0, off : off + w][None, :])[0]
            start_chart = Point(start_coords)
        return PathEnsemble(
            leaf, start_chart, self.step, self.horizon, self.n_paths, self.seed,
            self.scheme + "/projected", self.record_times,
            self.positions[:, :, off : off + w], self.lifetimes, self.step_warning, self.full,
        )


def _block_paths(model, start_path, n_steps, h, seed, i0, i1, record_idx):
    """Paths i0..i1-1 at the recorded step indices, via per-path streams."""
    td = model.tangent_dim
    B = i1 - i0
    z = np.empty((B, n_steps, td))
    for j in range(B):
        z[j] = path_generator(seed, i0 + j).standard_normal((n_steps, td))
    if _is_flat(model):
        # increments are exact; the whole path is a cumulative sum
        inc = math.sqrt(h) * z
        paths = np.concatenate(
            [np.zeros((B, 1, td)), np.cumsum(inc, axis=1)], axis=1
        ) + _path_from_chart(model, start_path[None, :])[0]
        paths = _wrap_flat(model, paths)
        return paths[:, record_idx, :]
    # curved: sequential exponential-map steps in chart coordinates
    X = np.broadcast_to(start_path, (B, start_path.size)).copy()
    out = np.empty((B, len(record_idx), _path_dim(model)))
    rec_pos = 0
    if record_idx[0] == 0:
        out[:, 0, :] = _path_from_chart(model, X)
        rec_pos = 1
    for k in range(n_steps):
        v = geom.tangent_from_normals(model, X, z[:, k, :], h)
        X = geom.exp_many(model, X, v)
        if rec_pos < len(record_idx) and record_idx[rec_pos] == k + 1:
            out[:, rec_pos, :] = _path_from_chart(model, X)
            rec_pos += 1
    return out


def simulate(
    model: ManifoldModel,
    start: Point,
    t: float,
    h: float,
    N: int,
    seed: int,
    scheme: str = "geodesic_walk",
    record_times: Sequence[float] | None = None,
    block_size: int = 4096,
) -> PathEnsemble:
    """Sample N Brownian paths up to horizon t with step h.

    ``record_times=None`` records every step (needed by feynman_kac); pass a
    coarse list for large-N distribution checks.
    """
    if h > t:
        raise DomainError("step must not exceed the horizon")
    if N < 1:
        raise DomainError("need at least one path")
    scheme = scheme.lower()
    if scheme not in ("geodesic_walk", "chart_euler"):
        raise DomainError(f"unknown scheme {scheme!r}")
    if scheme == "chart_euler" and not _is_flat(model):
        raise UnsupportedModelError("chart_euler needs a flat chart (Euclidean/torus/circle)")
    geom.make_point(model, start.coords)
    n_steps = max(1, int(round(t / h)))
    h_eff = t / n_steps
    warning = bool(_has_curved_leaf(model) and h_eff > 0.01)
    if record_times is None:
        record_idx = np.arange(n_steps + 1)
        full = True
    else:
        record_idx = sorted({int(round(tt / h_eff)) for tt in record_times} | {n_steps})
        if any(i < 0 or i > n_steps for i in record_idx):
            raise DomainError("record times must lie within the horizon")
        record_idx = np.array(record_idx, dtype=int)
        full = False
    need = N * len(record_idx) * _path_dim(model) * 8
    if need > _MAX_STORE_BYTES:
        raise DomainError(
            f"ensemble would need {need / 1e9:.1f} GB; pass coarser record_times"
        )
    start_path = start.coords.copy()
    positions = np.empty((N, len(record_idx), _path_dim(model)))
    for i0 in range(0, N, block_size):
        i1 = min(i0 + block_size, N)
        positions[i0:i1] = _block_paths(model, start_path, n_steps, h_eff, seed, i0, i1, record_idx)
    return PathEnsemble(
        model, start, h_eff, t, N, seed, scheme,
        record_times=record_idx * h_eff,
        positions=positions,
        lifetimes=np.full(N, np.inf),
        step_warning=warning,
        full=full,
    )


# ---------------------------------------------------------------------------
# finite-dimensional distributions


@dataclass
class FddReport:
    times: list
    mc_values: list
    quad_values: list
    std_errors: list
    z_scores: list

    @property
    def max_abs_z(self) -> float:
        return max(abs(z) for z in self.z_scores)

    def to_dict(self) -> dict:
        return {
            "times": self.times,
            "mc": self.mc_values,
            "quad": self.quad_values,
            "stderr": self.std_errors,
            "z": self.z_scores,
        }


def _fdd_grid(model: ManifoldModel, start: Point, t_max: float):
    eng = hk.make_engine(model)
    if model.compact:
        return eng, geom.build_grid(model, hk._compact_resolution(model), geom.FullWindow())
    radius = hk._kernel_reach(eng, t_max) + 1.0
    h = radius / 60.0
    return eng, geom.build_grid(model, h, geom.BallWindow(start, radius))


def fdd_check(
    ensemble: PathEnsemble,
    times: Sequence[float],
    test_functions: Sequence[Sequence[Callable[[np.ndarray], np.ndarray]]],
) -> FddReport:
    """Monte-Carlo averages of f_1(X_{t_1}) ... f_l(X_{t_l}) against nested
    heat-kernel quadrature; each entry of test_functions is one (f_1 .. f_l)
    tuple of chart-coordinate callables."""
    times = [float(t) for t in times]
    if sorted(times) != times or len(times) < 1:
        raise DomainError("times must be increasing")
    idxs = [ensemble.time_index(t) for t in times]
    model = ensemble.model
    eng, grid = _fdd_grid(model, ensemble.start, max(times))
    charts = [ensemble.chart_at(i) for i in idxs]
    mc_vals, quads, errs, zs = [], [], [], []
    for fs in test_functions:
        if len(fs) != len(times):
            raise DomainError("one test function per time")
        prod = np.ones(ensemble.n_paths)
        for f, ch in zip(fs, charts):
            prod = prod * np.asarray(f(ch), dtype=float)
        mc = float(np.mean(prod))
        se = float(np.std(prod, ddof=1) / math.sqrt(ensemble.n_paths))
        quad_val = _nested_kernel_expectation(eng, grid, ensemble.start, times, fs)
        mc_vals.append(mc)
        quads.append(quad_val)
        errs.append(se)
        zs.append((mc - quad_val) / se if se > 0 else 0.0)
    return FddReport(times, mc_vals, quads, errs, zs)


def _nested_kernel_expectation(eng, grid, start: Point, times, fs) -> float:
    # successive kernel transports: vector over grid nodes, chained backwards
    nodes = grid.node_coords
    weights = grid.weights
    vec = np.asarray(fs[-1](nodes), dtype=float)
    for j in range(len(times) - 1, 0, -1):
        dt = times[j] - times[j - 1]
        carried = np.empty(grid.size)
        chunk = max(1, 2_000_000 // grid.size)
        for a in range(0, grid.size, chunk):
            b = min(a + chunk, grid.size)
            K = np.stack([hk.eval_many(eng, dt, nodes[i], nodes) for i in range(a, b)])
            carried[a:b] = K @ (weights * vec)
        vec = np.asarray(fs[j - 1](nodes), dtype=float) * carried
    p0 = hk.eval_many(eng, times[0], start.coords, nodes)
    return float(np.sum(weights * p0 * vec))


# ---------------------------------------------------------------------------
# Feynman-Kac


@dataclass
class FeynmanKacEstimate:
    value: float
    std_error: float
    n_paths: int
    capped_fraction: float
    cap_value: float
    reliability_warning: bool
    potential: str

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "capped_fraction": self.capped_fraction,
            "cap_value": self.cap_value,
            "reliability_warning": self.reliability_warning,
        }


def _potential_values_on_paths(w: pot.Potential, model, positions: np.ndarray, eps_sing: float):
    """(values (N, n_rec), capped-path mask).  Values within eps_sing of a
    singular set are replaced by the value at distance eps_sing."""
    N, R, _ = positions.shape
    chart = _chart_from_path(model, positions.reshape(N * R, -1))
    vals = pot.evaluate_many(w, chart)
    sings = pot.singularities(w)
    capped = np.zeros(N * R, dtype=bool)
    cap_val = 0.0
    if sings:
        dist = pot.singular_distance_many(w, chart)
        near = dist < eps_sing
        if np.any(near):
            capped |= near
            caps = np.zeros_like(vals)
            for s in sings:
                caps += float(s.profile(np.array([eps_sing]))[0])
            cap_val = float(np.max(caps[near])) if np.any(near) else 0.0
            vals = np.where(near, np.sign(vals) * np.minimum(np.abs(vals), caps), vals)
    vals = np.where(np.isfinite(vals), vals, 0.0)
    return vals.reshape(N, R), capped.reshape(N, R).any(axis=1), cap_val


def feynman_kac(
    ensemble: PathEnsemble,
    w: pot.Potential,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
) -> FeynmanKacEstimate:
    """E[ exp(-int_0^t w(X_s) ds) f(X_t) ] by trapezoidal time integration.

    Needs a fully recorded ensemble.  Paths passing within sqrt(h) of a
    singular center contribute through a capped integrand; the capped
    fraction is reported and > 1% raises the reliability warning.
    """
    if not ensemble.full:
        raise DomainError("feynman_kac needs an ensemble recorded at every step")
    model = ensemble.model
    eps_sing = math.sqrt(ensemble.step)
    vals, capped_paths, cap_val = _potential_values_on_paths(w, model, ensemble.positions, eps_sing)
    h = ensemble.step
    integral = h * (np.sum(vals, axis=1) - 0.5 * vals[:, 0] - 0.5 * vals[:, -1])
    terminal = np.ones(ensemble.n_paths)
    if f is not None:
        terminal = np.asarray(f(ensemble.chart_at(len(ensemble.record_times) - 1)), dtype=float)
    alive = ~np.isfinite(ensemble.lifetimes)  # indicator {t < explosion time}
    weights = np.where(alive, np.exp(-integral) * terminal, 0.0)
    value = float(np.mean(weights))
    stderr = float(np.std(weights, ddof=1) / math.sqrt(ensemble.n_paths))
    frac = float(np.mean(capped_paths))
    return FeynmanKacEstimate(
        value, stderr, ensemble.n_paths, frac, cap_val, frac > 0.01, type(w).__name__
    )


# ---------------------------------------------------------------------------
# exponential Kato estimate


@dataclass
class KatoExponentialReport:
    t_values: list
    sup_estimates: list  # sup over starts of E[exp(int w_minus)]
    std_errors: list
    table: list  # per delta: {"delta": d, "C": smallest valid constant}
    overflowed: bool
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "t": self.t_values,
            "sup_estimate": self.sup_estimates,
            "stderr": self.std_errors,
            "table": self.table,
            "overflowed": self.overflowed,
            "n_paths": self.n_paths,
        }


def kato_exponential_estimate(
    model: ManifoldModel,
    w_minus: pot.Potential,
    t_grid: Sequence[float],
    delta_grid: Sequence[float],
    N: int,
    h: float = 2e-3,
    seed: int = 0,
    x_starts: Sequence[Point] | None = None,
    block_size: int = 4096,
) -> KatoExponentialReport:
    """sup_x E[exp(int_0^t w_minus(X_s) ds)] on the t-grid, then for each
    delta > 1 the smallest C with sup <= delta * exp(t C) across the grid."""
    ts = sorted(float(t) for t in t_grid)
    if any(t <= 0 for t in ts):
        raise DomainError("t grid must be positive")
    if any(d <= 1.0 for d in delta_grid):
        raise DomainError("delta must exceed 1")
    starts = list(x_starts) if x_starts else [geom.base_point(model)]
    horizon = ts[-1]
    n_steps = max(1, int(round(horizon / h)))
    h_eff = horizon / n_steps
    t_idx = [max(1, int(round(t / h_eff))) for t in ts]
    eps_sing = math.sqrt(h_eff)
    sup_est = np.full(len(ts), -np.inf)
    sup_err = np.zeros(len(ts))
    overflow = False
    for x in starts:
        acc_mean = np.zeros(len(ts))
        acc_m2 = np.zeros(len(ts))
        count = 0
        start_path = x.coords.copy()
        for i0 in range(0, N, block_size):
            i1 = min(i0 + block_size, N)
            block = _block_paths(
                model, start_path, n_steps, h_eff, seed, i0, i1, np.arange(n_steps + 1)
            )
            vals, _, _ = _potential_values_on_paths(w_minus, model, block, eps_sing)
            cum = np.cumsum(vals, axis=1)
            for j, k in enumerate(t_idx):
                integral = h_eff * (cum[:, k] - 0.5 * vals[:, 0] - 0.5 * vals[:, k])
                ev = np.exp(integral)
                acc_mean[j] += np.sum(ev)
                acc_m2[j] += np.sum(ev * ev)
            count += i1 - i0
        mean = acc_mean / count
        var = np.maximum(acc_m2 / count - mean**2, 0.0)
        err = np.sqrt(var / count)
        if not np.all(np.isfinite(mean)):
            overflow = True
        better = mean > sup_est
        sup_est = np.where(better, mean, sup_est)
        sup_err = np.where(better, err, sup_err)
    table = []
    for delta in delta_grid:
        cs = [
            (math.log(sup_est[j]) - math.log(delta)) / ts[j]
            for j in range(len(ts))
            if np.isfinite(sup_est[j]) and sup_est[j] > 0
        ]
        table.append({"delta": float(delta), "C": max(0.0, max(cs)) if cs else math.inf})
    return KatoExponentialReport(
        list(ts), [float(v) for v in sup_est], [float(e) for e in sup_err], table, overflow, N
    )


# ---------------------------------------------------------------------------
# projection of Kato potentials along product projections


@dataclass
class ProjectionReport:
    lhs_quad: float
    rhs_quad: float
    defect: float
    quad_tolerance: float
    mc_value: float | None
    mc_std_error: float | None
    mc_z: float | None

    @property
    def passed(self) -> bool:
        tol = self.quad_tolerance + 3.0 * (self.mc_std_error or 0.0)
        return self.lhs_quad <= self.rhs_quad + max(tol, 1e-12)

    def to_dict(self) -> dict:
        return {
            "lhs_quad": self.lhs_quad,
            "rhs_quad": self.rhs_quad,
            "defect": self.defect,
            "quad_tolerance": self.quad_tolerance,
            "mc_value": self.mc_value,
            "mc_std_error": self.mc_std_error,
            "mc_z": self.mc_z,
        }


def elworthy_projection_check(
    model: ManifoldModel,
    leaf_index: int,
    w: pot.Potential,
    t: float,
    x: Point,
    N: int = 0,
    h: float = 2e-3,
    seed: int = 0,
) -> ProjectionReport:
    """Both sides of the projection bound for the canonical factor projection:
    smoothing of w o pi on the product against smoothing of w on the factor.

    The left side uses the factorization of the product kernel (the fiber
    integral contributes the factor masses); the optional Monte-Carlo route
    estimates the left side from projected product paths.
    """
    if model.kind is not Kind.PRODUCT:
        raise UnsupportedModelError("projection check needs a product model")
    ls = pot.leaves(model)
    leaf, off = ls[leaf_index]
    leaf_eng = hk.make_engine(leaf)
    xi = Point(x.coords[off : off + leaf.chart_dim])
    inner = kato_mod.smoothed_abs(leaf_eng, w, t, xi)
    refined = kato_mod.smoothed_abs(leaf_eng, w, t, xi, refinement=1)
    quad_err = abs(refined.value - inner.value)
    rhs = refined.value
    mass_total, mass_err = 1.0, 0.0
    for j, (lm, loff) in enumerate(ls):
        if j == leaf_index:
            continue
        eng_j = hk.make_engine(lm)
        mj, ej = hk.kernel_mass(eng_j, t, Point(x.coords[loff : loff + lm.chart_dim]))
        mass_total *= mj
        mass_err += ej
    lhs = refined.value * mass_total
    tol = (
        inner.tail_bound * (1.0 + mass_total)
        + mass_err * max(refined.value, 1.0)
        + 3.0 * quad_err
    )
    mc_val = mc_err = mc_z = None
    if N > 0:
        ens = simulate(model, x, t, h, N, seed, record_times=[t])
        proj = ens.project(leaf_index)
        chart = proj.chart_at(len(proj.record_times) - 1)
        vals = np.abs(pot.evaluate_many(w, chart))
        vals = np.where(np.isfinite(vals), vals, np.nan)
        ok = ~np.isnan(vals)
        mc_val = float(np.mean(vals[ok]))
        mc_err = float(np.std(vals[ok], ddof=1) / math.sqrt(ok.sum()))
        mc_z = (mc_val - rhs) / mc_err if mc_err > 0 else 0.0
    return ProjectionReport(lhs, rhs, lhs - rhs, tol, mc_val, mc_err, mc_z)


# ---------------------------------------------------------------------------
# stochastic completeness probe


@dataclass
class CompletenessProbe:
    t_values: list
    survival: list  # MC fraction of paths alive (1 on complete models)
    quad_mass: list
    defects: list

    def to_dict(self) -> dict:
        return {
            "t": self.t_values,
            "survival": self.survival,
            "quad_mass": self.quad_mass,
            "defect": self.defects,
        }


def stochastic_completeness_probe(
    model: ManifoldModel,
    t_grid: Sequence[float],
    N: int,
    h: float = 2e-3,
    seed: int = 0,
    start: Point | None = None,
) -> CompletenessProbe:
    """Survival fraction of the walk against the quadrature kernel mass.

    The built-in models are complete: no path ever explodes, so survival is
    identically one and the informative number is the mass defect."""
    start = start or geom.base_point(model)
    ts = sorted(float(t) for t in t_grid)
    ens = simulate(model, start, ts[-1], h, N, seed, record_times=ts)
    eng = hk.make_engine(model)
    surv, masses, defects = [], [], []
    alive_frac = float(np.mean(~np.isfinite(ens.lifetimes)))
    for t in ts:
        mass, err = hk.kernel_mass(eng, t, start)
        surv.append(alive_frac)
        masses.append(mass)
        defects.append(abs(alive_frac - mass) - err)
    return CompletenessProbe(ts, surv, masses, defects)
