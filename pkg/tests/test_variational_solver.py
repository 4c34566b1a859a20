import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from minkflow.dual_measure import DiscreteMeasure, measure_of_polygon
from minkflow.errors import DomainError, FacetMismatch, MaxIters, NotSpread
from minkflow.flow_solver import FlowConfig, FlowStatus, run_flow
from minkflow.gauss_integrals import Exponents, quermassintegral, tail_integral_F
from minkflow.sphere_geom import GridFunction, Polygon, support_of_polygon, wulff_polygon
from minkflow.variational_solver import (
    VariationalConfig,
    disk_objective,
    el_residual,
    measure_gradient,
    objective_phi,
    solve_variational,
)

P2Q2 = Exponents(2.0, 2.0)


def axis_measure(w=1.0, phase=0.0):
    d = phase + np.array([0.0, 0.5, 1.0, 1.5]) * np.pi
    return DiscreteMeasure(d, np.full(4, w), even=True)


def regular_measure(m, w):
    return DiscreteMeasure(2 * np.pi * np.arange(m) / m, np.full(m, w), even=True)


def mgon_apothem(m, w):
    """Apothem a of the regular m-gon whose p=q=2 edge mass equals w."""
    t = math.tan(math.pi / m)

    def mass(a):
        return quad(lambda y: math.exp(-0.5 * (a * a + y * y)), -a * t, a * t,
                    epsabs=1e-15, epsrel=1e-13)[0] / a - w

    return brentq(mass, 1e-3, 10.0, xtol=1e-14)


def regular_polygon(m, a, phase=0.0):
    th = phase + 2 * np.pi * np.arange(m) / m
    return wulff_polygon(th, np.full(m, a))


def test_square_apothem_oracle_value():
    # a^{-1} int_{-a}^{a} e^{-(a^2+y^2)/2} dy = 1
    a = mgon_apothem(4, 1.0)
    direct = brentq(lambda a: quad(lambda y: math.exp(-0.5 * (a * a + y * y)), -a, a)[0] / a - 1,
                    0.1, 5.0, xtol=1e-14)
    assert a == pytest.approx(direct, abs=1e-12)


def test_config_validation():
    with pytest.raises(DomainError):
        VariationalConfig(Exponents(0.0, 2.0), axis_measure())
    with pytest.raises(DomainError):
        VariationalConfig(Exponents(2.0, -1.0), axis_measure())
    with pytest.raises(ValueError):
        VariationalConfig(P2Q2, axis_measure(), n_grid=63)
    with pytest.raises(ValueError):
        VariationalConfig(P2Q2, DiscreteMeasure(np.array([0.0, 1.0, 2.0]), np.ones(3)))
    two = DiscreteMeasure(np.array([0.0, np.pi]), np.ones(2), even=True)
    with pytest.raises(NotSpread):
        VariationalConfig(P2Q2, two)
    close = DiscreteMeasure(np.array([0.0, 0.01, np.pi, np.pi + 0.01, 1.0, 1.0 + np.pi]),
                            np.ones(6), even=True)
    with pytest.raises(ValueError):
        VariationalConfig(P2Q2, close, n_grid=64)


def test_atom_snapping():
    mu = axis_measure(phase=0.01)
    cfg = VariationalConfig(P2Q2, mu, n_grid=64)
    assert np.allclose(cfg.atom_angles, [0, np.pi / 2, np.pi, 3 * np.pi / 2])


def test_objective_of_disk_samples():
    cfg = VariationalConfig(P2Q2, axis_measure())
    for r in (0.5, 1.0, 1.7):
        # the Wulff shape of a constant is a 64-gon, not a disk: compare with it
        Q = regular_polygon(64, r)
        expected = 2 * r * r + quermassintegral(Q, 2.0)
        assert objective_phi(GridFunction.constant(r, 64), cfg) == pytest.approx(expected, rel=1e-12)
        assert disk_objective(r, cfg) == pytest.approx(2 * r * r + 2 * math.pi * math.exp(-0.5 * r * r),
                                                       rel=1e-13)
    with pytest.raises(DomainError):
        objective_phi(GridFunction(np.r_[0.0, np.ones(63)]), cfg)


def test_objective_p1_plug_in():
    cfg = VariationalConfig(Exponents(1.0, 1.0), axis_measure(0.7))
    Q = regular_polygon(64, 1.0)
    assert objective_phi(GridFunction.constant(1.0, 64), cfg) == pytest.approx(
        4 * 0.7 + quermassintegral(Q, 1.0), rel=1e-12)
    assert disk_objective(1.0, cfg) == pytest.approx(2.8 + 2 * math.pi * tail_integral_F(1.0, 1.0), rel=1e-13)


def test_disk_argmin():
    cfg = VariationalConfig(P2Q2, axis_measure())
    r = minimize_scalar(lambda r: disk_objective(r, cfg), bounds=(0.1, 3), method="bounded",
                        options={"xatol": 1e-10}).x
    assert r == pytest.approx(math.sqrt(2 * math.log(math.pi / 2)), abs=1e-7)
    assert r == pytest.approx(0.9503501, abs=1e-7)


def test_el_residual_exact_and_linear():
    a = mgon_apothem(4, 1.0)
    cfg = VariationalConfig(P2Q2, axis_measure(), el_tol=1e-6)
    assert el_residual(regular_polygon(4, a), cfg) < 1e-10
    r1 = el_residual(regular_polygon(4, a * (1 + 1e-4)), cfg)
    r2 = el_residual(regular_polygon(4, a * (1 + 2e-4)), cfg)
    assert r2 / r1 == pytest.approx(2.0, rel=1e-3)


def test_el_residual_spurious_facet():
    cfg = VariationalConfig(P2Q2, axis_measure())
    a = mgon_apothem(4, 1.0)
    th = np.array([0.0, np.pi / 4, np.pi / 2, np.pi, 1.5 * np.pi])
    cut = wulff_polygon(th, np.array([a, 0.8 * a * math.sqrt(2), a, a, a]))
    with pytest.raises(FacetMismatch):
        el_residual(cut, cfg)


def test_solve_square():
    cfg = VariationalConfig(P2Q2, axis_measure(), el_tol=1e-6)
    Q, rep = solve_variational(cfg)
    a = mgon_apothem(4, 1.0)
    assert rep.converged and rep.el_residual < 1e-6
    assert Q.n_vertices == 4
    assert np.max(np.abs(Q.edge_supports - a)) < 1e-4
    assert np.all(np.diff(rep.phi_history) < 0)
    assert rep.phi <= disk_objective(math.sqrt(2 * math.log(math.pi / 2)), cfg)


@pytest.mark.parametrize("m", [8, 12])
def test_solve_regular_mgon(m):
    w = 4.0 / m
    cfg = VariationalConfig(P2Q2, regular_measure(m, w), n_grid=96 if m == 12 else 64,
                            gradient="measure")
    Q, rep = solve_variational(cfg)
    assert Q.n_vertices == m
    assert np.max(np.abs(Q.edge_supports - mgon_apothem(m, w))) < 1e-4


def test_fd_and_measure_gradients_agree():
    mu = DiscreteMeasure(np.array([0.0, 1.4, np.pi, np.pi + 1.4]), np.array([1.0, 0.6, 1.0, 0.6]),
                         even=True)
    runs = {}
    for grad in ("fd", "measure"):
        Q, _ = solve_variational(VariationalConfig(P2Q2, mu, n_grid=64, gradient=grad))
        runs[grad] = support_of_polygon(Q, 256).values
    assert np.max(np.abs(runs["fd"] - runs["measure"])) < 1e-5


def test_measure_gradient_vanishes_at_solution():
    a = mgon_apothem(4, 1.0)
    cfg = VariationalConfig(P2Q2, axis_measure())
    Q = regular_polygon(4, a)
    h = support_of_polygon(Q, 64).values
    assert np.max(np.abs(measure_gradient(h, Q, cfg))) < 1e-10


def test_rotation_equivariance():
    n = 64
    base = np.array([0.0, 1.1, np.pi, np.pi + 1.1])
    base = 2 * np.pi / n * np.rint(base / (2 * np.pi / n))
    w = np.array([1.0, 0.5, 1.0, 0.5])
    shift = 5 * 2 * np.pi / n
    Q0, _ = solve_variational(VariationalConfig(P2Q2, DiscreteMeasure(base, w, even=True), n_grid=n))
    Q1, _ = solve_variational(VariationalConfig(P2Q2, DiscreteMeasure(base + shift, w, even=True), n_grid=n))
    u = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    assert np.max(np.abs(Q1.support(u + shift) - Q0.support(u))) < 1e-5


def test_solution_beats_disks():
    mu = DiscreteMeasure(np.array([0.0, 0.9, np.pi, np.pi + 0.9]), np.array([0.8, 0.3, 0.8, 0.3]), even=True)
    cfg = VariationalConfig(P2Q2, mu)
    Q, rep = solve_variational(cfg)
    r = np.linspace(0.2, 3, 2000)
    assert rep.phi < min(disk_objective(x, cfg) for x in r)
    # the returned polygon's measure reproduces the atoms
    m = measure_of_polygon(Q, P2Q2)
    assert np.allclose(np.sort(m.weights), np.sort(mu.weights), rtol=1e-5)


def test_max_iters_carries_best():
    cfg = VariationalConfig(P2Q2, axis_measure(), max_iters=1)
    with pytest.raises(MaxIters) as info:
        solve_variational(cfg)
    assert isinstance(info.value.best, Polygon)
    assert info.value.report.iterations == 1


@pytest.mark.slow
def test_cross_solver_agreement():
    n = 256
    exps = Exponents(2.0, 1.0)
    f = GridFunction.from_function(lambda t: math.exp(-0.5) * (1 + 0.05 * np.cos(2 * t)), n)
    flow = run_flow(FlowConfig(exps, f, residual_tol=1e-9))
    assert flow.status is FlowStatus.CONVERGED
    mu = DiscreteMeasure(f.thetas, f.values * 2 * np.pi / n, even=True)
    Q, _ = solve_variational(VariationalConfig(exps, mu, n_grid=n, gradient="measure",
                                               el_tol=1e-4, max_iters=2000))
    assert np.max(np.abs(support_of_polygon(Q, n).values - flow.body.h.values)) < 1e-3
