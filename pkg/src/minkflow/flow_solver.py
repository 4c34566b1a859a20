"""Gauss curvature flow for the planar L_p Gauss dual Minkowski problem.

The support function evolves by

    dh/dt = h - f h^p exp(|x|^2/2) |x|^(n-q) / (h'' + h),   |x|^2 = h^2 + h'^2,

whose stationary points solve the Monge-Ampere equation

    exp(-|x|^2/2) h^(1-p) |x|^(q-n) (h'' + h) = f.

The functional ``Phi = int f varphi(h) dtheta + int F(rho(u)) du`` is
non-increasing along the flow; every accepted time step is required to respect
that (up to ``PHI_SLACK``).
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NotConvex
from .gauss_integrals import Exponents, phi_support, tail_integral
from .sphere_geom import (
    TWO_PI,
    ConvexBodyGrid,
    GridFunction,
    certify_convex,
    gauss_map_angle,
    spectral_d1_d2,
    trig_interpolate,
)

log = logging.getLogger(__name__)

PHI_SLACK = 1e-10
GROWTH_FACTOR = 1.2
GROWTH_AFTER = 10
# step scale (relative to the CFL step) below which the run is declared diverged
MIN_STEP_SCALE = 2.0 ** -30


class FlowStatus(enum.Enum):
    CONVERGED = "Converged"
    TIMEOUT = "Timeout"
    DIVERGED = "Diverged"


@dataclass
class FlowConfig:
    exps: Exponents
    f: GridFunction
    initial: ConvexBodyGrid | None = None
    dt_safety: float = 0.25
    residual_tol: float = 1e-7
    max_time: float = 200.0
    snapshot_stride: int = 500
    max_steps: int = 2_000_000
    h_cap: float = 50.0
    eps_convex_rel: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.dt_safety < 1.0:
            raise ValueError("dt_safety must lie in (0, 1)")
        if not self.residual_tol > 0.0:
            raise ValueError("residual_tol must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be a positive integer")
        if np.min(self.f.values) <= 0.0:
            raise DomainError("target density f must be positive")
        self.exps.require_planar()
        if self.initial is None:
            self.initial = certify_convex(GridFunction.constant(1.0, self.f.n_points))
        if self.initial.n_points != self.f.n_points:
            raise ValueError("initial body and f must share the grid")


@dataclass
class FlowTrace:
    times: list[float] = field(default_factory=list)
    phi_values: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    h_bounds: list[tuple[float, float]] = field(default_factory=list)
    radius_bounds: list[tuple[float, float]] = field(default_factory=list)
    snapshots: list[GridFunction] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    # Phi after every accepted step (index 0 is the initial value)
    phi_history: list[float] = field(default_factory=list)
    accepted_steps: int = 0
    rejected_steps: int = 0
    phi_rejections: int = 0

    def record(self, t, phi, residual, h, b):
        self.steps.append(self.accepted_steps)
        self.times.append(float(t))
        self.phi_values.append(float(phi))
        self.residuals.append(float(residual))
        self.h_bounds.append((float(h.min()), float(h.max())))
        self.radius_bounds.append((float(b.min()), float(b.max())))
        self.snapshots.append(GridFunction(h.copy()))

    def descent_violations(self, slack: float = PHI_SLACK) -> int:
        return int(np.sum(np.diff(self.phi_history) > slack))


@dataclass
class FlowResult:
    body: ConvexBodyGrid | None
    trace: FlowTrace
    status: FlowStatus
    diagnostic: str = ""
    final_time: float = 0.0
    final_residual: float = math.inf

    def __iter__(self):
        return iter((self.body, self.trace, self.status))


class _State:
    """Derived quantities of a support vector, computed once per accepted step."""

    __slots__ = ("h", "dh", "b", "rho2", "g")

    def __init__(self, h: np.ndarray, f: np.ndarray, exps: Exponents, derivs=None):
        self.h = h
        dh, d2h = spectral_d1_d2(h, dense=True) if derivs is None else derivs
        self.dh = dh
        self.b = d2h + h
        self.rho2 = h * h + dh * dh
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            # g = f h^p e^{|x|^2/2} |x|^(n-q) / b, assembled in log space
            self.g = np.exp(np.log(f) + exps.p * np.log(h) + 0.5 * self.rho2
                            + 0.5 * (exps.n - exps.q) * np.log(self.rho2) - np.log(self.b))

    @property
    def velocity(self) -> np.ndarray:
        return self.h - self.g

    def residual(self) -> float:
        # density / f = h / g
        return float(np.max(np.abs(self.h / self.g - 1.0)))

    def phi(self, f: np.ndarray, exps: Exponents) -> float:
        jac = self.h * self.b / self.rho2
        vals = f * phi_support(self.h, exps.p) + tail_integral(np.sqrt(self.rho2), exps.q) * jac
        return float(np.sum(vals) * TWO_PI / self.h.size)

    def stiffness(self) -> float:
        return float(np.max(self.g / self.b))

    @classmethod
    def of_body(cls, K: ConvexBodyGrid, f: np.ndarray, exps: Exponents) -> "_State":
        # reuse the body's FFT derivatives; the dense matrices are for stepping only
        return cls(K.h.values, f, exps, (K.dh.values, K.d2h.values))


def _body(h: GridFunction | np.ndarray) -> ConvexBodyGrid:
    return certify_convex(h if isinstance(h, GridFunction) else GridFunction(h))


def _check_f(f: GridFunction, K: ConvexBodyGrid):
    if np.min(f.values) <= 0.0:
        raise DomainError("target density f must be positive")
    if f.n_points != K.n_points:
        raise ValueError("body and f must share the grid")


def flow_velocity(K: ConvexBodyGrid, f: GridFunction, exps: Exponents) -> GridFunction:
    """Normal velocity of the support function, h - f h^p e^{|x|^2/2} |x|^(n-q) / b."""
    _check_f(f, K)
    b = K.principal_radius.values
    if np.min(b) <= K.eps_convex:
        i = int(np.argmin(b))
        raise NotConvex(float(K.thetas[i]), float(b[i]), K.eps_convex)
    return GridFunction(_State.of_body(K, f.values, exps).velocity)


def radial_velocity(K: ConvexBodyGrid, f: GridFunction, exps: Exponents, u):
    """d rho(u)/dt = -f(xi) h^(p-1) rho^(n-q+1) e^{rho^2/2} / b + rho at xi = alpha_K(u)."""
    _check_f(f, K)
    scalar = np.ndim(u) == 0
    xi = np.atleast_1d(gauss_map_angle(K, u, method="spectral"))
    hv = K.h.values
    h = trig_interpolate(hv, xi)
    dh = trig_interpolate(hv, xi, 1)
    b = h + trig_interpolate(hv, xi, 2)
    fx = trig_interpolate(f.values, xi)
    rho = np.hypot(h, dh)
    p, q, n = exps.p, exps.q, exps.n
    out = -fx * h ** (p - 1) * rho ** (n - q + 1) * np.exp(0.5 * rho * rho) / b + rho
    return float(out[0]) if scalar else out


def lyapunov_phi(K: ConvexBodyGrid, f: GridFunction, exps: Exponents) -> float:
    """``int f varphi(h) dtheta + int F(rho(u)) du``; the second integral uses du = h b / |x|^2 dtheta."""
    _check_f(f, K)
    return _State.of_body(K, f.values, exps).phi(f.values, exps)


def ma_residual(K: ConvexBodyGrid, f: GridFunction, exps: Exponents) -> float:
    """Sup-norm relative defect of the Monge-Ampere equation."""
    _check_f(f, K)
    b = K.principal_radius.values
    if np.min(b) <= K.eps_convex:
        i = int(np.argmin(b))
        raise NotConvex(float(K.thetas[i]), float(b[i]), K.eps_convex)
    return _State.of_body(K, f.values, exps).residual()


def check_admissibility(f, exps: Exponents) -> tuple[float, float, bool]:
    """Bounds (limsup_{s->inf}, liminf_{s->0+}) of s^(q-p) e^{-s^2/2}, and whether f fits strictly."""
    vals = f.values if isinstance(f, GridFunction) else np.atleast_1d(np.asarray(f, dtype=float))
    lower = 0.0
    if exps.q < exps.p:
        upper = math.inf
    elif exps.q == exps.p:
        upper = 1.0
    else:
        upper = 0.0
    ok = bool(lower < float(np.min(vals)) and float(np.max(vals)) < upper)
    return lower, upper, ok


def _rk4(h, s0: _State, f, exps, dt, eps):
    """One RK4 step; returns None if an intermediate stage loses convexity or positivity."""
    k1 = s0.velocity
    stages = [k1]
    for c in (0.5, 0.5, 1.0):
        hs = h + c * dt * stages[-1]
        if np.min(hs) <= 0.0:
            return None
        st = _State(hs, f, exps)
        if np.min(st.b) <= eps or not np.all(np.isfinite(st.g)):
            return None
        stages.append(st.velocity)
    k1, k2, k3, k4 = stages
    return h + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_flow(cfg: FlowConfig) -> FlowResult:
    """Integrate the flow until the Monge-Ampere residual drops below ``residual_tol``."""
    exps = cfg.exps
    f = np.asarray(cfg.f.values)
    n = f.size
    dtheta2 = (TWO_PI / n) ** 2
    h = np.array(cfg.initial.h.values)
    eps = cfg.eps_convex_rel * float(np.max(h))
    state = _State(h, f, exps)
    phi = state.phi(f, exps)
    res = state.residual()
    trace = FlowTrace()
    trace.phi_history.append(phi)
    trace.record(0.0, phi, res, h, state.b)
    t = 0.0
    scale = 1.0
    streak = 0
    status = None
    diagnostic = ""

    while True:
        if res < cfg.residual_tol:
            status = FlowStatus.CONVERGED
            break
        if t >= cfg.max_time:
            status, diagnostic = FlowStatus.TIMEOUT, f"t={t:.6g} reached max_time"
            break
        if trace.accepted_steps >= cfg.max_steps:
            status, diagnostic = FlowStatus.TIMEOUT, f"max_steps={cfg.max_steps} reached"
            break
        stiff = state.stiffness()
        if not math.isfinite(stiff):
            status, diagnostic = FlowStatus.DIVERGED, "non-finite speed"
            break
        dt = scale * cfg.dt_safety * dtheta2 / stiff

        failure = None
        h_new = _rk4(h, state, f, exps, dt, eps)
        if h_new is None or not np.all(np.isfinite(h_new)):
            failure = "stage lost convexity/positivity"
        elif np.max(h_new) > cfg.h_cap:
            status = FlowStatus.DIVERGED
            diagnostic = f"max h = {np.max(h_new):.6g} > h_cap = {cfg.h_cap}"
            break
        elif np.min(h_new) <= 0.0:
            failure = f"min h = {np.min(h_new):.6g} <= 0"
        else:
            new_state = _State(h_new, f, exps)
            if np.min(new_state.b) <= eps:
                failure = f"min(h''+h) = {np.min(new_state.b):.6g} <= eps_convex = {eps:.3g}"
            elif not np.all(np.isfinite(new_state.g)):
                failure = "non-finite speed"
            else:
                new_phi = new_state.phi(f, exps)
                if new_phi > phi + PHI_SLACK:
                    failure = f"Phi increased by {new_phi - phi:.3g}"
                    trace.phi_rejections += 1

        if failure is not None:
            trace.rejected_steps += 1
            scale *= 0.5
            streak = 0
            if scale < MIN_STEP_SCALE:
                status, diagnostic = FlowStatus.DIVERGED, failure
                break
            continue

        h, state, phi = h_new, new_state, new_phi
        res = state.residual()
        t += dt
        trace.accepted_steps += 1
        trace.phi_history.append(phi)
        streak += 1
        if streak >= GROWTH_AFTER:
            scale = min(1.0, scale * GROWTH_FACTOR)
            streak = 0
        if trace.accepted_steps % cfg.snapshot_stride == 0:
            trace.record(t, phi, res, h, state.b)

    if trace.times[-1] != t:
        trace.record(t, phi, res, h, state.b)
    try:
        body = _body(h)
    except ValueError:
        body = None
    log.info("flow %s at t=%.6g after %d steps, residual %.3g %s", status.value, t,
             trace.accepted_steps, res, diagnostic)
    return FlowResult(body, trace, status, diagnostic, t, res)


@dataclass
class UniquenessReport:
    results: list[FlowResult]
    distances: np.ndarray
    max_residual: float
    tolerance: float

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances)) if self.distances.size else 0.0

    @property
    def passed(self) -> bool:
        return all(r.status is FlowStatus.CONVERGED for r in self.results) and \
            self.max_distance < self.tolerance


def uniqueness_harness(f: GridFunction, exps: Exponents, initials: list[ConvexBodyGrid],
                       max_workers: int = 1, **flow_options) -> UniquenessReport:
    """Run the flow from several initial bodies and compare the limits (q < p only)."""
    if not exps.q < exps.p:
        raise DomainError(f"uniqueness is only asserted for q < p, got p={exps.p}, q={exps.q}")
    if not initials:
        raise ValueError("need at least one initial body")
    cfgs = [FlowConfig(exps=exps, f=f, initial=K, **flow_options) for K in initials]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_flow, cfgs))
    else:
        results = [run_flow(c) for c in cfgs]
    m = len(results)
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            hi, hj = results[i].trace.snapshots[-1].values, results[j].trace.snapshots[-1].values
            dist[i, j] = dist[j, i] = float(np.max(np.abs(hi - hj)))
    pairs = dist[np.triu_indices(m, 1)]
    return UniquenessReport(results, pairs, max(r.final_residual for r in results),
                            10.0 * cfgs[0].residual_tol)

