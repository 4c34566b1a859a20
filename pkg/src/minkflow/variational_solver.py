"""Variational solver for even discrete measures.

Minimises

    Phi(Q) = (1/p) sum_i w_i h_Q(v_i)^p + int_{S^1} F(rho_Q(u)) du

over origin-symmetric convex bodies Q, parametrised by even support samples on
a uniform grid and convexified through their Wulff shape. At a minimiser the
L_p Gauss dual curvature measure of Q equals the prescribed measure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dual_measure import DiscreteMeasure, measure_of_polygon
from .errors import DomainError, FacetMismatch, MaxIters, MinkowskiError, NotSpread
from .gauss_integrals import Exponents, quermassintegral, tail_integral_F
from .sphere_geom import (
    TWO_PI,
    GridFunction,
    Polygon,
    even_symmetrize,
    grid_angles,
    support_of_polygon,
    wulff_polygon,
    wulff_shape,
)

log = logging.getLogger(__name__)

FACET_DROP_MASS = 1e-10
FACET_MISMATCH_MASS = 1e-8
_ANGLE_MATCH = 1e-9


@dataclass
class VariationalConfig:
    exps: Exponents
    mu: DiscreteMeasure
    n_grid: int = 64
    step_init: float = 0.5
    grad_eps: float = 1e-6
    el_tol: float = 1e-6
    max_iters: int = 500
    gradient: str = "fd"  # or "measure": per-facet h^(p-1) (w - C) from the dual measure
    # after the Wulff projection, also drop facets whose normals carry no atom
    prune_off_atom: bool = True
    atom_index: np.ndarray = field(init=False, repr=False)
    atom_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.exps.require_planar()
        if not (self.exps.p > 0 and self.exps.q > 0):
            raise DomainError("the variational solver needs p > 0 and q > 0")
        if self.n_grid < 16 or self.n_grid % 2:
            raise ValueError("n_grid must be even and >= 16")
        if self.gradient not in ("fd", "measure"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if not self.mu.even:
            raise ValueError("the variational solver needs an even measure")
        if not self.mu.is_spread():
            raise NotSpread("measure is concentrated in a closed half-circle")
        spacing = TWO_PI / self.n_grid
        idx = np.rint(self.mu.directions / spacing).astype(int) % self.n_grid
        snap = np.abs(np.angle(np.exp(1j * (self.mu.directions - idx * spacing))))
        if np.max(snap) > 0.5 * spacing + 1e-12:
            raise ValueError("atom too far from the grid")
        if np.unique(idx).size != idx.size:
            raise ValueError("two atoms snap to the same grid angle; refine n_grid")
        self.atom_index = idx
        self.atom_weights = np.array(self.mu.weights)

    @property
    def atom_angles(self) -> np.ndarray:
        return grid_angles(self.n_grid)[self.atom_index]


@dataclass
class VariationalReport:
    iterations: int
    phi: float
    el_residual: float
    converged: bool
    phi_history: list[float] = field(default_factory=list)
    gradient_evaluations: int = 0


def _objective_of_polygon(Q: Polygon, cfg: VariationalConfig) -> float:
    p = cfg.exps.p
    hq = Q.support(cfg.atom_angles)
    return float(np.sum(cfg.atom_weights * hq ** p) / p) + quermassintegral(Q, cfg.exps.q)


def objective_phi(h: GridFunction, cfg: VariationalConfig) -> float:
    """Phi of the Wulff shape of ``h`` (both terms use h_[h], not h)."""
    if np.min(h.values) <= 0.0:
        raise DomainError("support samples must be positive")
    return _objective_of_polygon(wulff_shape(h), cfg)


def disk_objective(r: float, cfg: VariationalConfig) -> float:
    p = cfg.exps.p
    return float(np.sum(cfg.atom_weights)) * r ** p / p + TWO_PI * tail_integral_F(r, cfg.exps.q)


def _match_facets(K: Polygon, cfg: VariationalConfig, mu_K: DiscreteMeasure) -> np.ndarray:
    """Measure of K at each atom direction; raises on massive facets off the atoms."""
    atoms = cfg.atom_angles
    masses = np.zeros(atoms.size)
    diff = np.abs(np.angle(np.exp(1j * (mu_K.directions[:, None] - atoms[None, :]))))
    nearest = np.argmin(diff, axis=1)
    for e, (j, w) in enumerate(zip(nearest, mu_K.weights)):
        if diff[e, j] <= _ANGLE_MATCH:
            masses[j] += w
        elif w > FACET_MISMATCH_MASS:
            raise FacetMismatch(
                f"facet at {np.degrees(mu_K.directions[e]):.6f} deg carries mass {w:.3g}"
            )
        elif w > FACET_DROP_MASS:
            log.debug("ignoring off-atom facet of mass %.3g", w)
    return masses


def el_residual(K: Polygon, cfg: VariationalConfig) -> float:
    """Max relative mismatch between the dual measure of K and the target atoms."""
    masses = _match_facets(K, cfg, measure_of_polygon(K, cfg.exps))
    w = cfg.atom_weights
    return float(np.max(np.abs(masses - w) / w))


class _EvenCoordinates:
    """Maps the first half of the grid to an even support vector and back."""

    def __init__(self, n: int):
        self.n = n
        self.half = n // 2

    def expand(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([x, x])

    def restrict(self, h: np.ndarray) -> np.ndarray:
        return 0.5 * (h[: self.half] + h[self.half:])


def _project(h: np.ndarray, cfg: VariationalConfig) -> tuple[np.ndarray, Polygon]:
    """Even symmetrisation, then the support of the Wulff shape.

    With ``prune_off_atom`` the Wulff shape of the atom-direction values alone
    is used. It contains the full Wulff shape and has the same support at
    every atom, so Phi can only drop; without this, grid coordinates that
    merely touch a vertex have zero gradient and re-cut the corners each time
    the atom facets move outwards.
    """
    Q = wulff_shape(even_symmetrize(GridFunction(h)))
    if cfg.prune_off_atom:
        Q = wulff_polygon(cfg.atom_angles, Q.support(cfg.atom_angles))
    return support_of_polygon(Q, h.size).values, Q


def _fd_gradient(x: np.ndarray, coords: _EvenCoordinates, cfg: VariationalConfig) -> np.ndarray:
    """Central differences of Phi in the even coordinates.

    With ``prune_off_atom`` the iterate's objective only sees the atom
    coordinates, so the others get zero and the differences are taken of the
    pruned objective itself; differencing ``objective_phi`` there would pick up
    one-sided corner cuts from grid constraints that touch a vertex.
    """
    if cfg.prune_off_atom:
        def phi(xv):
            hv = coords.expand(xv)[cfg.atom_index]
            return _objective_of_polygon(wulff_polygon(cfg.atom_angles, hv), cfg)
        active = np.unique(cfg.atom_index % coords.half)
    else:
        def phi(xv):
            return objective_phi(GridFunction(coords.expand(xv)), cfg)
        active = np.arange(x.size)
    g = np.zeros_like(x)
    for j in active:
        eps = cfg.grad_eps * x[j]
        xp = x.copy()
        xm = x.copy()
        xp[j] += eps
        xm[j] -= eps
        g[j] = (phi(xp) - phi(xm)) / (2.0 * eps)
    return g


def measure_gradient(h: np.ndarray, Q: Polygon, cfg: VariationalConfig) -> np.ndarray:
    """dPhi/dh_i = h_i^(p-1) (w_i - C(Q, {theta_i})) at facet normals on the grid (full grid)."""
    n = h.size
    spacing = TWO_PI / n
    mu_Q = measure_of_polygon(Q, cfg.exps)
    idx = np.rint(mu_Q.directions / spacing).astype(int) % n
    on_grid = np.abs(np.angle(np.exp(1j * (mu_Q.directions - idx * spacing)))) <= _ANGLE_MATCH
    mass = np.zeros(n)
    np.add.at(mass, idx[on_grid], mu_Q.weights[on_grid])
    w = np.zeros(n)
    w[cfg.atom_index] = cfg.atom_weights
    return h ** (cfg.exps.p - 1.0) * (w - mass)


def _gradient(x, h, Q, coords, cfg):
    if cfg.gradient == "fd":
        return _fd_gradient(x, coords, cfg)
    g_full = measure_gradient(h, Q, cfg)
    return g_full[: coords.half] + g_full[coords.half:]


def _safe_residual(Q: Polygon, cfg: VariationalConfig) -> float:
    try:
        return el_residual(Q, cfg)
    except FacetMismatch:
        return math.inf


def solve_variational(cfg: VariationalConfig) -> tuple[Polygon, VariationalReport]:
    """Projected descent with backtracking over even support samples.

    Raises ``MaxIters`` (carrying the best polygon and the report) when
    ``el_residual`` stays above ``el_tol`` after ``max_iters`` iterations.
    """
    coords = _EvenCoordinates(cfg.n_grid)
    r0 = minimize_scalar(lambda r: disk_objective(r, cfg), bounds=(1e-3, 20.0),
                         method="bounded", options={"xatol": 1e-10}).x
    h, Q = _project(np.full(cfg.n_grid, r0), cfg)
    x = coords.restrict(h)
    phi = _objective_of_polygon(Q, cfg)
    report = VariationalReport(0, phi, _safe_residual(Q, cfg), False, [phi])
    step = cfg.step_init
    prev = None

    for it in range(1, cfg.max_iters + 1):
        if report.el_residual < cfg.el_tol:
            report.converged = True
            break
        g = _gradient(x, h, Q, coords, cfg)
        report.gradient_evaluations += 1
        if prev is not None:
            dx, dg = x - prev[0], g - prev[1]
            curv = float(dx @ dg)
            # Barzilai-Borwein trial step, then halve until the objective decreases
            step = float(dx @ dx) / curv if curv > 0 else 2.0 * step
            step = min(max(step, 1e-12), 1e3)
        s = step
        accepted = False
        while s > 1e-14:
            x_try = x - s * g
            if np.min(x_try) > 0.0:
                try:
                    h_try, Q_try = _project(coords.expand(x_try), cfg)
                    phi_try = _objective_of_polygon(Q_try, cfg)
                except MinkowskiError:
                    phi_try = math.inf
                if phi_try < phi:
                    accepted = True
                    break
            s *= 0.5
        report.iterations = it
        if not accepted:
            log.info("line search stalled at iteration %d", it)
            report.el_residual = _safe_residual(Q, cfg)
            report.converged = report.el_residual < cfg.el_tol
            break
        prev = (x, g)
        h, Q, phi = h_try, Q_try, phi_try
        x = coords.restrict(h)
        report.phi = phi
        report.phi_history.append(phi)
        report.el_residual = _safe_residual(Q, cfg)
    else:
        report.converged = report.el_residual < cfg.el_tol

    if not report.converged:
        raise MaxIters(
            f"el_residual {report.el_residual:.3g} >= el_tol {cfg.el_tol:.3g} "
            f"after {report.iterations} iterations", best=Q, report=report,
        )
    return Q, report

