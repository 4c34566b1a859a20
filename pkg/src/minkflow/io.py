"""Plain-text file formats.

Every numeric field is written with 17 significant digits so that doubles
survive a write/read round trip bit for bit. Files are comma separated with a
single header line; ``#`` starts a comment.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dual_measure import DiscreteMeasure, MeasureDensity
from .flow_solver import FlowTrace
from .sphere_geom import GridFunction, Polygon, grid_angles

NUM = "%.17g"


def _read_table(path, columns: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != columns:
                raise ValueError(f"{path}:{lineno}: expected {columns} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                if rows:
                    raise ValueError(f"{path}:{lineno}: non-numeric field") from None
                # first non-comment line may be a header
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows)


def _write_table(path, header: str, columns) -> None:
    data = np.column_stack(columns)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, fmt=NUM, delimiter=",", header=header, comments="")


def read_polygon(path) -> Polygon:
    return Polygon(_read_table(path, 2))


def write_polygon(path, P: Polygon) -> None:
    _write_table(path, "x,y", [P.vertices[:, 0], P.vertices[:, 1]])


def read_grid_function(path) -> GridFunction:
    data = _read_table(path, 2)
    n = data.shape[0]
    if not np.allclose(data[:, 0], grid_angles(n), rtol=0.0, atol=1e-12):
        raise ValueError(f"{path}: theta column is not the uniform grid 2*pi*i/{n}")
    return GridFunction(data[:, 1])


def write_grid_function(path, h: GridFunction, name: str = "value") -> None:
    _write_table(path, f"theta,{name}", [h.thetas, h.values])


def read_atoms(path, even: bool = False) -> DiscreteMeasure:
    """Atom file with ``theta_degrees,weight`` rows."""
    data = _read_table(path, 2)
    return DiscreteMeasure(np.radians(data[:, 0]), data[:, 1], even=even)


def write_atoms(path, mu: DiscreteMeasure) -> None:
    _write_table(path, "theta,weight", [mu.directions, mu.weights])


def write_density(path, mu: MeasureDensity) -> None:
    write_grid_function(path, mu.density, "density")


def write_trace(path, trace: FlowTrace) -> None:
    hb = np.asarray(trace.h_bounds, dtype=float).reshape(-1, 2)
    bb = np.asarray(trace.radius_bounds, dtype=float).reshape(-1, 2)
    _write_table(path, "t,phi,residual,h_min,h_max,b_min,b_max",
                 [trace.times, trace.phi_values, trace.residuals,
                  hb[:, 0], hb[:, 1], bb[:, 0], bb[:, 1]])


def _format_value(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) and v > 0 else NUM % v
    return str(v)


def write_report(path, items: dict) -> None:
    """Key-value report, one ``key = value`` per line in insertion order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {_format_value(v)}\n")


def read_report(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out
