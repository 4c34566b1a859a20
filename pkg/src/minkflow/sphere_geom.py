"""Support-function calculus on the unit circle.

Convex bodies appear in two representations:

* ``ConvexBodyGrid``: samples of a smooth support function on the uniform grid
  ``theta_i = 2*pi*i/N`` together with its spectral derivatives.
* ``Polygon``: an origin-containing convex polygon given by CCW vertices.

The two meet through Wulff shapes (grid samples -> polygon) and
``support_of_polygon`` (polygon -> grid samples).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateEdge,
    EmptyInterior,
    InvalidPolygon,
    NotConvex,
    NotPositive,
)

TWO_PI = 2.0 * np.pi
DEFAULT_N = 256
VERTEX_DEDUP_TOL = 1e-12
# Rows of the periodic (direction, value) table padded on each side for interpolation.
_TABLE_PAD = 4


def grid_angles(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


@lru_cache(maxsize=32)
def _wavenumbers(n: int) -> np.ndarray:
    return np.arange(n // 2 + 1, dtype=float)


# above this size the FFT beats a dense matrix-vector product
_DENSE_MAX_N = 512


@lru_cache(maxsize=8)
def _diff_matrices(n: int) -> np.ndarray:
    """Stacked (2n, n) matrix mapping samples to first and second spectral derivatives."""
    d1, d2 = _fft_d1_d2(np.eye(n))
    d1, d2 = d1.T.copy(), d2.T.copy()
    for d in (d1, d2):
        # exact annihilation of constants: each diagonal is minus its off-diagonal row sum
        np.fill_diagonal(d, 0.0)
        np.fill_diagonal(d, -d.sum(axis=1))
    return np.ascontiguousarray(np.vstack([d1, d2]))


def _fft_d1_d2(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[-1]
    k = _wavenumbers(n)
    c = np.fft.rfft(values)
    d1 = 1j * k * c
    d1[..., -1] = 0.0  # Nyquist mode has no real odd derivative
    d2 = -(k * k) * c
    return np.fft.irfft(d1, n), np.fft.irfft(d2, n)


def spectral_d1_d2(values: np.ndarray, dense: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """First and second Fourier derivatives of periodic samples (raw 1-D arrays).

    ``dense=True`` uses a cached differentiation matrix for small grids. It is
    several times faster but carries ~1e-11 absolute rounding in the second
    derivative even for constants, so it is reserved for time stepping.
    """
    n = values.shape[-1]
    if not dense or values.ndim != 1 or n > _DENSE_MAX_N:
        return _fft_d1_d2(values)
    both = _diff_matrices(n) @ values
    return both[:n], both[n:]


@dataclass(frozen=True)
class GridFunction:
    """Samples of a periodic function at ``theta_i = 2*pi*i/N``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        n = v.size
        if n < 16 or n % 2:
            raise ValueError(f"grid size must be even and >= 16, got {n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], n: int = DEFAULT_N):
        theta = grid_angles(n)
        return cls(np.broadcast_to(np.asarray(fn(theta), dtype=float), theta.shape))

    @classmethod
    def constant(cls, c: float, n: int = DEFAULT_N):
        return cls(np.full(n, float(c)))

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def thetas(self) -> np.ndarray:
        return grid_angles(self.n_points)

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_points

    def integral(self) -> float:
        """Trapezoid rule over the circle (spectrally accurate for smooth data)."""
        return float(np.sum(self.values) * self.spacing)

    def __len__(self):
        return self.n_points


def spectral_derivatives(h: GridFunction) -> tuple[GridFunction, GridFunction]:
    d1, d2 = spectral_d1_d2(h.values)
    return GridFunction(d1), GridFunction(d2)


def trig_interpolate(values: np.ndarray, theta, deriv: int = 0) -> np.ndarray:
    """Evaluate the ``deriv``-th derivative of the trigonometric interpolant."""
    values = np.asarray(values, dtype=float)
    n = values.size
    theta = np.asarray(theta, dtype=float)
    c = np.fft.rfft(values) / n
    k = _wavenumbers(n)
    w = np.full(k.size, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    coef = w * c * (1j * k) ** deriv
    phase = np.exp(1j * np.multiply.outer(theta, k))
    return np.real(phase @ coef)


@dataclass(frozen=True)
class ConvexBodyGrid:
    """Grid support function certified strictly convex, with cached derivatives."""

    h: GridFunction
    dh: GridFunction
    d2h: GridFunction
    principal_radius: GridFunction
    eps_convex: float = field(default=0.0)

    @property
    def n_points(self) -> int:
        return self.h.n_points

    @property
    def thetas(self) -> np.ndarray:
        return self.h.thetas

    @property
    def radius(self) -> np.ndarray:
        """|x| = sqrt(h^2 + h'^2) at the boundary point with normal theta_i."""
        return np.hypot(self.h.values, self.dh.values)

    @property
    def boundary_points(self) -> np.ndarray:
        t = self.thetas
        h, dh = self.h.values, self.dh.values
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([h * c - dh * s, h * s + dh * c])

    @property
    def direction_angles(self) -> np.ndarray:
        """Polar angle of the boundary point with normal theta_i (strictly increasing)."""
        return self.thetas + np.arctan2(self.dh.values, self.h.values)

    @property
    def direction_jacobian(self) -> np.ndarray:
        """d(direction)/d(theta) = h (h'' + h) / |x|^2."""
        h = self.h.values
        return h * self.principal_radius.values / (h * h + self.dh.values ** 2)


def certify_convex(h: GridFunction, eps_convex: float | None = None) -> ConvexBodyGrid:
    v = h.values
    if np.min(v) <= 0.0:
        i = int(np.argmin(v))
        raise NotPositive(f"h = {v[i]:.6g} <= 0 at theta={h.thetas[i]:.6g}")
    if eps_convex is None:
        eps_convex = 1e-8 * float(np.max(v))
    d1, d2 = spectral_d1_d2(v)
    b = d2 + v
    i = int(np.argmin(b))
    if b[i] <= eps_convex:
        raise NotConvex(float(h.thetas[i]), float(b[i]), eps_convex)
    return ConvexBodyGrid(h, GridFunction(d1), GridFunction(d2), GridFunction(b), eps_convex)


def even_symmetrize(h: GridFunction) -> GridFunction:
    v = h.values
    return GridFunction(0.5 * (v + np.roll(v, -(v.size // 2))))


# ---------------------------------------------------------------------------
# Polygons


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class Polygon:
    """Strictly convex CCW polygon with the origin in its interior."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if v.shape[0] < 3:
            raise InvalidPolygon("a polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise InvalidPolygon("non-finite vertex")
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.min(lengths) <= VERTEX_DEDUP_TOL:
            raise DegenerateEdge(f"edge {int(np.argmin(lengths))} has zero length")
        turn = _cross(edges, np.roll(edges, -1, axis=0))
        if np.min(turn) <= 0.0:
            raise InvalidPolygon("vertices are not strictly convex in CCW order")
        normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
        supports = np.einsum("ij,ij->i", normals, v)
        if np.min(supports) <= 0.0:
            raise InvalidPolygon("origin is not in the interior")
        # total turning must be one revolution (rejects self-winding vertex lists)
        angles = np.arctan2(normals[:, 1], normals[:, 0])
        winding = np.sum(np.mod(np.diff(np.append(angles, angles[0])), TWO_PI))
        if not np.isclose(winding, TWO_PI, atol=1e-9):
            raise InvalidPolygon("vertex list winds more than once")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """Edge i runs from vertex i to vertex i+1."""
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.hypot(e[:, 0], e[:, 1])

    @property
    def edge_normals(self) -> np.ndarray:
        e = self.edges
        return np.column_stack([e[:, 1], -e[:, 0]]) / self.edge_lengths[:, None]

    @property
    def normal_angles(self) -> np.ndarray:
        n = self.edge_normals
        return np.mod(np.arctan2(n[:, 1], n[:, 0]), TWO_PI)

    @property
    def edge_supports(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.edge_normals, self.vertices)

    @property
    def vertex_angles(self) -> np.ndarray:
        v = self.vertices
        return np.arctan2(v[:, 1], v[:, 0])

    def support(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return np.max(u @ self.vertices.T, axis=-1)

    def radial(self, theta) -> np.ndarray:
        """Exact radial function by ray casting against every edge line."""
        theta = np.asarray(theta, dtype=float)
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        dots = u @ self.edge_normals.T
        with np.errstate(divide="ignore"):
            ratio = np.where(dots > 0.0, self.edge_supports / dots, np.inf)
        return np.min(ratio, axis=-1)


def support_of_polygon(P: Polygon, n: int = DEFAULT_N) -> GridFunction:
    return GridFunction(P.support(grid_angles(n)))


def polar_body(P: Polygon) -> Polygon:
    """Polar polygon: vertex i is edge_normal_i / h_i.

    Vertex i of the double polar is vertex i+1 of P (same cyclic sequence).
    """
    return Polygon(P.edge_normals / P.edge_supports[:, None])


def _dedup_cyclic(v: np.ndarray, tol: float) -> np.ndarray:
    keep = [0]
    for i in range(1, v.shape[0]):
        if np.max(np.abs(v[i] - v[keep[-1]])) > tol:
            keep.append(i)
    if len(keep) > 1 and np.max(np.abs(v[keep[-1]] - v[keep[0]])) <= tol:
        keep.pop()
    return v[keep]


def _drop_flat_vertices(v: np.ndarray) -> np.ndarray:
    while v.shape[0] > 3:
        e_in = v - np.roll(v, 1, axis=0)
        e_out = np.roll(v, -1, axis=0) - v
        scale = np.hypot(e_in[:, 0], e_in[:, 1]) * np.hypot(e_out[:, 0], e_out[:, 1])
        sin_turn = _cross(e_in, e_out) / scale
        i = int(np.argmin(sin_turn))
        if sin_turn[i] > 1e-12:
            break
        v = np.delete(v, i, axis=0)
    return v


def wulff_polygon(normal_angles, values) -> Polygon:
    """Intersection of half-planes {x : x.u_i <= values_i}.

    Computed through the dual convex hull of the points u_i / values_i, whose
    polar is the Wulff shape; each hull edge (a, b) yields the Wulff vertex x
    with x.a = x.b = 1.
    """
    angles = np.asarray(normal_angles, dtype=float)
    f = np.asarray(values, dtype=float)
    if np.min(f) <= 0.0:
        raise EmptyInterior("Wulff shape needs strictly positive support values")
    pts = np.column_stack([np.cos(angles), np.sin(angles)]) / f[:, None]
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise EmptyInterior(f"dual hull is degenerate: {exc}") from None
    a = pts[hull.vertices]  # CCW in 2D
    b = np.roll(a, -1, axis=0)
    det = _cross(a, b)
    edge_len = np.hypot(*(b - a).T)
    if np.min(det / edge_len) <= 1e-14:
        raise EmptyInterior("origin is not interior to the dual hull (unbounded Wulff shape)")
    # solve [a; b] x = [1; 1]
    x = np.column_stack([b[:, 1] - a[:, 1], a[:, 0] - b[:, 0]]) / det[:, None]
    x = _drop_flat_vertices(_dedup_cyclic(x, VERTEX_DEDUP_TOL))
    return Polygon(x)


def wulff_shape(f: GridFunction) -> Polygon:
    return wulff_polygon(f.thetas, f.values)


# ---------------------------------------------------------------------------
# Radial function and Gauss map of grid bodies


def _periodic_table(x: np.ndarray, y: np.ndarray, y_period: float = 0.0):
    k = _TABLE_PAD
    xe = np.concatenate([x[-k:] - TWO_PI, x, x[:k] + TWO_PI])
    ye = np.concatenate([y[-k:] - y_period, y, y[:k] + y_period])
    return xe, ye


def _wrap_into(u: np.ndarray, start: float) -> np.ndarray:
    return start + np.mod(u - start, TWO_PI)


def _gauss_map_grid(K: ConvexBodyGrid, u: np.ndarray, method: str) -> np.ndarray:
    alpha = K.direction_angles
    theta = K.thetas
    uu = _wrap_into(u, alpha[0])
    xe, ye = _periodic_table(alpha, theta, TWO_PI)
    xi = PchipInterpolator(xe, ye)(uu)
    if method == "pchip":
        return xi
    if method != "spectral":
        raise ValueError(f"unknown interpolation method {method!r}")
    hv = K.h.values
    for _ in range(20):
        h = trig_interpolate(hv, xi)
        dh = trig_interpolate(hv, xi, 1)
        d2h = trig_interpolate(hv, xi, 2)
        g = xi + np.arctan2(dh, h) - uu
        dg = h * (h + d2h) / (h * h + dh * dh)
        step = g / dg
        xi = xi - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return xi


def gauss_map_angle(K: ConvexBodyGrid | Polygon, u, method: str = "pchip"):
    """Outer normal angle alpha_K(u) at the boundary point rho_K(u) u.

    For polygons the normal at a vertex is not unique; the normal of the edge
    hit by the ray is returned (vertex directions form a null set).
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if isinstance(K, Polygon):
        uv = np.stack([np.cos(u), np.sin(u)], axis=-1)
        dots = uv @ K.edge_normals.T
        with np.errstate(divide="ignore"):
            ratio = np.where(dots > 0.0, K.edge_supports / dots, np.inf)
        out = K.normal_angles[np.argmin(ratio, axis=-1)]
    else:
        out = np.mod(_gauss_map_grid(K, u, method), TWO_PI)
    return float(out[0]) if scalar else out


def radial_from_support(K: ConvexBodyGrid | Polygon, u, method: str = "pchip"):
    """Radial function rho_K(u).

    Grid bodies use the boundary table (direction alpha_i, radius |x_i|):
    ``method="pchip"`` interpolates it with monotone cubics, ``"spectral"``
    solves alpha(theta) = u on the trigonometric interpolant of h instead.
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if isinstance(K, Polygon):
        out = K.radial(u)
    elif method == "pchip":
        alpha = K.direction_angles
        xe, ye = _periodic_table(alpha, K.radius)
        out = PchipInterpolator(xe, ye)(_wrap_into(u, alpha[0]))
    else:
        xi = _gauss_map_grid(K, u, method)
        hv = K.h.values
        out = np.hypot(trig_interpolate(hv, xi), trig_interpolate(hv, xi, 1))
    return float(out[0]) if scalar else out
