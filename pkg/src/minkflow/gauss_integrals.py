"""Gaussian radial integrals.

``F(s) = int_s^inf exp(-r^2/2) r^(q-1) dr`` is the building block of the Gauss
dual quermassintegral, the variational objective and the flow's Lyapunov
functional. ``q`` may be any real number; lower limits are always positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .sphere_geom import TWO_PI, ConvexBodyGrid, Polygon

R_TAIL_PAD = 12.0
QUAD_TOL = 1e-13
# relative stopping tolerance of the doubling Simpson rule
QUAD_RTOL = 1e-14
# beyond this radius exp(-r^2/2) underflows for any sane q
_R_NEGLIGIBLE = 40.0
_ANCHORS_PER_OCTAVE = 8
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class Exponents:
    p: float
    q: float
    n: int = 2

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise DomainError(f"exponents must be finite, got p={self.p}, q={self.q}")

    def require_planar(self):
        if self.n != 2:
            raise DomainError(f"only n = 2 is supported by the solvers, got n={self.n}")


def _simpson_doubling(g, a: float, b: float, tol: float) -> float:
    """Composite Simpson on [a, b], doubling panels until successive sums agree.

    The stopping rule is relative (``tol`` times the running sum, floored far
    below any representable tail) so deep-tail values keep full precision.
    """
    if b <= a:
        return 0.0
    n = 16
    prev = None
    while True:
        x = np.linspace(a, b, n + 1)
        y = g(x)
        s = (b - a) / (3 * n) * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
        if prev is not None:
            delta = s - prev
            if abs(delta) <= max(tol * abs(s), 1e-300) or n >= 1 << 22:
                return s + delta / 15.0
        prev = s
        n *= 2


def tail_integral_F(s: float, q: float) -> float:
    """``int_s^inf exp(-r^2/2) r^(q-1) dr`` truncated at ``max(s, 1) + 12``."""
    s = float(s)
    if not s > 0.0:
        raise DomainError(f"tail integral needs s > 0, got {s}")
    if s >= _R_NEGLIGIBLE:
        return 0.0
    r_max = max(s, 1.0) + R_TAIL_PAD
    total = 0.0
    if s < 1.0:
        # r = e^x removes the r^(q-1) blow-up near 0
        total += _simpson_doubling(
            lambda x: np.exp(-0.5 * np.exp(2 * x) + q * x), math.log(s), 0.0, QUAD_RTOL
        )
    lo = max(s, 1.0)
    total += _simpson_doubling(
        lambda r: np.exp(-0.5 * r * r) * r ** (q - 1.0), lo, r_max, QUAD_RTOL
    )
    return total


@lru_cache(maxsize=65536)
def _anchor_value(k: int, q: float) -> float:
    return tail_integral_F(2.0 ** (k / _ANCHORS_PER_OCTAVE), q)


def tail_integral(s, q: float) -> np.ndarray:
    """Vectorised ``F``: cached anchor values plus a short Gauss-Legendre correction.

    ``F(s) = F(a) - int_{ln a}^{ln s} exp(-e^{2x}/2) e^{qx} dx`` with the anchor
    ``a = 2^(k/8)`` nearest to ``s``; the correction interval has length at
    most ln(2)/16, where 16 nodes are exact to rounding.
    """
    s = np.asarray(s, dtype=float)
    if s.size and not np.min(s) > 0.0:
        raise DomainError("tail integral needs s > 0 everywhere")
    q = float(q)
    flat = s.ravel()
    out = np.zeros_like(flat)
    live = flat < _R_NEGLIGIBLE
    sl = flat[live]
    k = np.rint(_ANCHORS_PER_OCTAVE * np.log2(sl)).astype(int)
    if k.size:
        k0 = int(k.min())
        table = np.array([_anchor_value(kk, q) for kk in range(k0, int(k.max()) + 1)])
        anchors = table[k - k0]
    else:
        anchors = np.zeros(0)
    x0 = k * (math.log(2.0) / _ANCHORS_PER_OCTAVE)
    x1 = np.log(sl)
    half = 0.5 * (x1 - x0)
    mid = 0.5 * (x1 + x0)
    x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.exp(-0.5 * np.exp(2 * x) + q * x)
    out[live] = anchors - half * (vals @ _GL_WEIGHTS)
    return out.reshape(s.shape)


def tail_integrand(r, q: float) -> np.ndarray:
    """``-F'(r) = exp(-r^2/2) r^(q-1)``."""
    r = np.asarray(r, dtype=float)
    return np.exp(-0.5 * r * r) * r ** (q - 1.0)


def phi_radial(r, q: float):
    """Antiderivative of ``s^(q-1) exp(-s^2/2)`` normalised to vanish at infinity (= -F)."""
    if np.ndim(r) == 0:
        return -tail_integral_F(r, q)
    return -tail_integral(r, q)


def phi_support(t, p: float):
    """``t^p / p`` for p != 0 and ``log t`` for p == 0."""
    t_arr = np.asarray(t, dtype=float)
    if t_arr.size and not np.min(t_arr) > 0.0:
        raise DomainError("phi_support needs t > 0")
    out = np.log(t_arr) if p == 0 else t_arr ** p / p
    return float(out) if np.ndim(t) == 0 else out


def _gl_composite(fn, a: np.ndarray, b: np.ndarray, panels: int) -> np.ndarray:
    """Composite 16-point Gauss-Legendre of ``fn`` over each interval [a_j, b_j]."""
    edges = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, panels + 1)[None, :]
    lo, hi = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (hi - lo)
    x = (0.5 * (hi + lo))[..., None] + half[..., None] * _GL_NODES
    return np.einsum("ijk,k,ij->i", fn(x), _GL_WEIGHTS, half)


def integrate_intervals(fn, a, b, rtol: float = 1e-14, start_panels: int = 2,
                        max_panels: int = 1 << 12) -> np.ndarray:
    """Per-interval integrals by composite Gauss-Legendre with panel doubling."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    panels = start_panels
    prev = _gl_composite(fn, a, b, panels)
    while panels < max_panels:
        panels *= 2
        cur = _gl_composite(fn, a, b, panels)
        if np.max(np.abs(cur - prev)) <= rtol * max(1.0, float(np.sum(np.abs(cur)))):
            return cur
        prev = cur
    return prev


def polygon_arcs(P: Polygon) -> tuple[np.ndarray, np.ndarray]:
    """Angular offsets from each edge normal to the directions of its end vertices."""
    phi = P.normal_angles
    beta0 = P.vertex_angles
    beta1 = np.roll(beta0, -1)
    s0 = np.mod(beta0 - phi + np.pi, TWO_PI) - np.pi
    s1 = np.mod(beta1 - phi + np.pi, TWO_PI) - np.pi
    return s0, s1


def quermassintegral(K: ConvexBodyGrid | Polygon, q: float) -> float:
    """Gauss dual quermassintegral ``int_{R^2 \\ K} exp(-|x|^2/2)|x|^(q-2) dx``.

    Evaluated in polar form ``int_{S^1} F(rho_K(u)) du``. Grid bodies use the
    trapezoid rule in the normal angle with the Jacobian du/dtheta; polygons
    use Gauss-Legendre on each edge's angular arc, where rho = h / cos(u - phi).
    """
    if isinstance(K, Polygon):
        h = K.edge_supports
        s0, s1 = polygon_arcs(K)
        fn = lambda x: tail_integral(h[:, None, None] / np.cos(x), q)  # noqa: E731
        return float(np.sum(integrate_intervals(fn, s0, s1)))
    rho = K.radius
    if np.min(rho) <= 0.0:
        raise DomainError("radial function must be positive")
    dtheta = TWO_PI / K.n_points
    return float(np.sum(tail_integral(rho, q) * K.direction_jacobian) * dtheta)
