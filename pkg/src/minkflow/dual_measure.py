"""L_p Gauss dual curvature measures of polygons and smooth grid bodies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NotConvex, StepTooLarge
from .gauss_integrals import Exponents, quermassintegral
from .sphere_geom import (
    TWO_PI,
    ConvexBodyGrid,
    GridFunction,
    Polygon,
    certify_convex,
    support_of_polygon,
    trig_interpolate,
    wulff_polygon,
    wulff_shape,
)

EDGE_NODES = 64
EDGE_RTOL = 1e-12
_ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite sum of point masses on the circle."""

    directions: np.ndarray
    weights: np.ndarray
    even: bool = False

    def __post_init__(self):
        d = np.mod(np.asarray(self.directions, dtype=float).ravel(), TWO_PI)
        w = np.asarray(self.weights, dtype=float).ravel()
        if d.shape != w.shape:
            raise ValueError("directions and weights differ in length")
        if w.size and not np.min(w) > 0.0:
            raise ValueError("atom weights must be positive")
        order = np.argsort(d)
        d, w = d[order], w[order]
        if d.size > 1:
            gaps = np.diff(np.append(d, d[0] + TWO_PI))
            if np.min(gaps) <= _ANGLE_TOL:
                raise ValueError("atom directions must be distinct modulo 2*pi")
        if self.even and d.size:
            anti = np.mod(d + np.pi, TWO_PI)
            j = np.argmin(np.abs(np.angle(np.exp(1j * (anti[:, None] - d[None, :])))), axis=1)
            gap = np.abs(np.angle(np.exp(1j * (anti - d[j]))))
            if np.max(gap) > _ANGLE_TOL or not np.allclose(w[j], w, rtol=1e-12, atol=0.0):
                raise ValueError("even measure must be invariant under theta -> theta + pi")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    def is_spread(self) -> bool:
        """True iff no closed half-circle contains every atom."""
        if self.weights.size < 2:
            return False
        gaps = np.diff(np.append(self.directions, self.directions[0] + TWO_PI))
        return bool(np.max(gaps) < np.pi - _ANGLE_TOL)


@dataclass(frozen=True)
class MeasureDensity:
    """Density of an absolutely continuous measure w.r.t. arc length."""

    density: GridFunction

    def __post_init__(self):
        if np.min(self.density.values) < 0.0:
            raise ValueError("measure density must be non-negative")


def _planar_density(h, dh, b, exps: Exponents) -> np.ndarray:
    rho2 = h * h + dh * dh
    return np.exp(-0.5 * rho2) * h ** (1.0 - exps.p) * rho2 ** (0.5 * (exps.q - exps.n)) * b


def measure_density_grid(K: ConvexBodyGrid, exps: Exponents) -> MeasureDensity:
    """Density of C_{gamma,p,q}(K, .): the left-hand side of the Monge-Ampere equation."""
    b = K.principal_radius.values
    if np.min(b) <= K.eps_convex:
        i = int(np.argmin(b))
        raise NotConvex(float(K.thetas[i]), float(b[i]), K.eps_convex)
    return MeasureDensity(GridFunction(_planar_density(K.h.values, K.dh.values, b, exps)))


def _edge_integrals(P: Polygon, exps: Exponents, nodes: int) -> np.ndarray:
    x_nodes, w_nodes = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (x_nodes + 1.0)
    v0 = P.vertices
    e = P.edges
    pts = v0[:, None, :] + s[None, :, None] * e[:, None, :]
    r2 = np.einsum("ijk,ijk->ij", pts, pts)
    integrand = np.exp(-0.5 * r2) * r2 ** (0.5 * (exps.q - exps.n))
    return 0.5 * P.edge_lengths * (integrand @ w_nodes) * P.edge_supports ** (1.0 - exps.p)


def measure_of_polygon(P: Polygon, exps: Exponents, nodes: int = EDGE_NODES) -> DiscreteMeasure:
    """One atom per edge: (x.nu)^(1-p) exp(-|x|^2/2) |x|^(q-n) integrated along the edge."""
    prev = _edge_integrals(P, exps, nodes)
    while nodes < 4096:
        nodes *= 2
        cur = _edge_integrals(P, exps, nodes)
        done = np.max(np.abs(cur - prev) / np.abs(cur)) < EDGE_RTOL
        prev = cur
        if done:
            break
    return DiscreteMeasure(P.normal_angles, prev)


def total_mass(mu: DiscreteMeasure | MeasureDensity) -> float:
    if isinstance(mu, MeasureDensity):
        return mu.density.integral()
    return float(np.sum(mu.weights))


def _evaluate(fn, theta: np.ndarray) -> np.ndarray:
    if isinstance(fn, GridFunction):
        return trig_interpolate(fn.values, theta)
    return np.broadcast_to(np.asarray(fn(theta), dtype=float), np.shape(theta))


def integrate_against(fn: GridFunction | Callable, mu: DiscreteMeasure | MeasureDensity) -> float:
    """``int fn dmu``; grid test functions are trigonometrically interpolated off-grid."""
    if isinstance(mu, MeasureDensity):
        theta = mu.density.thetas
        vals = fn.values if isinstance(fn, GridFunction) and fn.n_points == theta.size \
            else _evaluate(fn, theta)
        return float(np.sum(vals * mu.density.values) * mu.density.spacing)
    return float(np.sum(_evaluate(fn, mu.directions) * mu.weights))


@dataclass(frozen=True)
class VariationalReport:
    t_step: float
    v_plus: float
    v_minus: float
    central_difference: float
    predicted: float
    relative_gap: float
    body_path: str  # "grid" (spectral [h_t]) or "polygon" (sampled Wulff shape)


def _perturbed(h: np.ndarray, f: np.ndarray, p: float, t: float) -> np.ndarray:
    base = h ** p + t * f ** p
    if not np.all(np.isfinite(base)) or np.min(base) <= 0.0:
        raise StepTooLarge(f"h^p + t f^p is not positive for t={t}")
    out = base ** (1.0 / p)
    if not np.all(np.isfinite(out)):
        raise StepTooLarge(f"h_t overflows for t={t}")
    return out


def verify_variational_formula(K: ConvexBodyGrid | Polygon, f: GridFunction, exps: Exponents,
                               t_step: float) -> VariationalReport:
    """Central-difference check of dV/dt = -(1/p) int f^p dC_{gamma,p,q}(K, .).

    ``h_t = (h_K^p + t f^p)^(1/p)`` on the grid of ``f``. For grid bodies the
    Wulff shape [h_t] is the smooth body with support h_t whenever h_t stays
    convex (both signs of t); otherwise, and for polygons, the sampled Wulff
    polygon is used.
    """
    p = exps.p
    if p == 0:
        raise ValueError("the L_p variational formula needs p != 0")
    if not t_step > 0.0:
        raise StepTooLarge(f"t_step must be positive, got {t_step}")
    fv = f.values
    if np.min(fv) <= 0.0:
        raise ValueError("f must be positive")
    n = f.n_points
    if isinstance(K, Polygon):
        h = support_of_polygon(K, n).values
        mu = measure_of_polygon(K, exps)
        predicted = -integrate_against(lambda th: trig_interpolate(fv, th) ** p, mu) / p
    else:
        if K.n_points != n:
            raise ValueError("body and f must share the grid")
        h = K.h.values
        predicted = -integrate_against(GridFunction(fv ** p), measure_density_grid(K, exps)) / p

    h_plus = _perturbed(h, fv, p, t_step)
    h_minus = _perturbed(h, fv, p, -t_step)
    path = "polygon"
    if isinstance(K, ConvexBodyGrid):
        try:
            bodies = [certify_convex(GridFunction(h_plus)), certify_convex(GridFunction(h_minus))]
            path = "grid"
        except (NotConvex, ValueError):
            pass
    if path == "polygon":
        try:
            bodies = [wulff_shape(GridFunction(h_plus)), wulff_shape(GridFunction(h_minus))]
        except ValueError as exc:
            raise StepTooLarge(str(exc)) from None
    v_plus, v_minus = (quermassintegral(B, exps.q) for B in bodies)
    cd = (v_plus - v_minus) / (2.0 * t_step)
    gap = abs(cd - predicted) / abs(predicted)
    return VariationalReport(t_step, v_plus, v_minus, cd, predicted, gap, path)


def tangent_polygon(target: ConvexBodyGrid | Polygon, m: int) -> Polygon:
    """Circumscribed m-gon with outer normals at 2*pi*j/m."""
    theta = TWO_PI * np.arange(m) / m
    if isinstance(target, Polygon):
        h = target.support(theta)
    else:
        h = trig_interpolate(target.h.values, theta)
    return wulff_polygon(theta, h)


@dataclass(frozen=True)
class ConvergenceTable:
    refinements: list[int]
    values: list[float]
    limit: float
    errors: list[float] = field(default_factory=list)

    @property
    def orders(self) -> list[float]:
        """Empirical orders log2(e_k / e_{k+1}) / log2(m_{k+1} / m_k)."""
        out = []
        for k in range(len(self.errors) - 1):
            ratio = self.refinements[k + 1] / self.refinements[k]
            if self.errors[k + 1] == 0.0 or self.errors[k] == 0.0:
                out.append(float("inf"))
            else:
                out.append(float(np.log(self.errors[k] / self.errors[k + 1]) / np.log(ratio)))
        return out


def weak_convergence_study(target: ConvexBodyGrid | Polygon, refinements: Sequence[int],
                           test_fn: GridFunction | Callable, exps: Exponents) -> ConvergenceTable:
    """``int test_fn dC(K_m, .)`` for tangent m-gons K_m against the target's value."""
    refinements = [int(m) for m in refinements]
    if any(b <= a for a, b in zip(refinements, refinements[1:])):
        raise ValueError("refinements must be strictly increasing")
    if isinstance(target, Polygon):
        limit = integrate_against(test_fn, measure_of_polygon(target, exps))
    else:
        limit = integrate_against(test_fn, measure_density_grid(target, exps))
    values = [
        integrate_against(test_fn, measure_of_polygon(tangent_polygon(target, m), exps))
        for m in refinements
    ]
    errors = [abs(v - limit) for v in values]
    return ConvergenceTable(refinements, values, limit, errors)
