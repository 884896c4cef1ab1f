"""Flat-file formats: run configuration, diagnostics CSV, legacy-ASCII VTK.

Floats are written with %.17g so that every file round-trips bitwise through
float(); the determinism guarantees of the drivers rest on that.
"""

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

CSV_COLUMNS = ("t", "wmax_E", "wmax_L", "E", "enstrophy", "palinstrophy",
               "gamma_L", "gamma_sheet", "cd", "cd_pres", "cd_fric", "cl",
               "n_particles")


def _fmt(v: float) -> str:
    return "%.17g" % v


# ---------------------------------------------------------------------------
# Configuration files

def parse_config(path) -> dict:
    """key=value lines; `#` starts a comment; values stay strings."""
    out = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{path}:{ln}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not val:
            raise ConfigurationError(f"{path}:{ln}: empty key or value")
        if key in out:
            raise ConfigurationError(f"{path}:{ln}: duplicate key {key!r}")
        out[key] = val
    return out


def write_config(mapping, path) -> None:
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Diagnostics time series

@dataclass(frozen=True)
class DiagnosticsRecord:
    """One CSV row; field order matches CSV_COLUMNS."""

    t: float
    wmax_e: float = 0.0
    wmax_l: float = 0.0
    energy: float = 0.0
    enstrophy: float = 0.0
    palinstrophy: float = 0.0
    gamma_l: float = 0.0
    gamma_sheet: float = 0.0
    cd: float = 0.0
    cd_pres: float = 0.0
    cd_fric: float = 0.0
    cl: float = 0.0
    n_particles: int = 0

    def __post_init__(self):
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"non-finite diagnostic {f.name} at t={self.t}")

    def row(self) -> str:
        vals = [getattr(self, f.name) for f in fields(self)]
        return ",".join(_fmt(v) for v in vals[:-1]) + f",{vals[-1]:d}"


def write_timeseries(records, path) -> None:
    records = list(records)
    ts = [r.t for r in records]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("records are not in increasing time order")
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(r.row() for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def read_timeseries(path):
    """Returns (column names, float array of shape (n_records, 13))."""
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ConfigurationError(f"{path}: not a diagnostics CSV")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]],
                    dtype=float).reshape(len(lines) - 1, len(CSV_COLUMNS))
    return list(CSV_COLUMNS), data


# ---------------------------------------------------------------------------
# Legacy-ASCII VTK

_VTK_HEADER = "# vtk DataFile Version 3.0\n{title}\nASCII\n"


def _vtk_points(xs, ys) -> str:
    rows = "\n".join(f"{_fmt(x)} {_fmt(y)} 0" for x, y in zip(xs, ys))
    return f"POINTS {len(xs)} double\n{rows}\n"


def _vtk_scalars(name, vals) -> str:
    body = "\n".join(_fmt(v) for v in vals)
    return f"SCALARS {name} double 1\nLOOKUP_TABLE default\n{body}\n"


def _vtk_vectors(name, vx, vy) -> str:
    body = "\n".join(f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(vx, vy))
    return f"VECTORS {name} double\n{body}\n"


def write_vtk_particles(particles, path) -> None:
    """Point cloud with the circulation as a scalar attribute."""
    n = particles.n
    parts = [_VTK_HEADER.format(title="vortex particles"),
             "DATASET POLYDATA\n",
             _vtk_points(particles.x, particles.y),
             f"VERTICES {n} {2 * n}\n"]
    parts.append("\n".join(f"1 {i}" for i in range(n)) + ("\n" if n else ""))
    parts.append(f"POINT_DATA {n}\n")
    parts.append(_vtk_scalars("gamma", particles.gam))
    Path(path).write_text("".join(parts))


def write_vtk_mesh(mesh, path, point_data=None) -> None:
    """Triangle mesh with optional per-vertex scalars/vectors.

    point_data maps a name to a (nv,) scalar array or a (nv, 2) vector array.
    """
    nt = mesh.n_triangles
    parts = [_VTK_HEADER.format(title="triangle mesh"),
             "DATASET UNSTRUCTURED_GRID\n",
             _vtk_points(mesh.vertices[:, 0], mesh.vertices[:, 1]),
             f"CELLS {nt} {4 * nt}\n"]
    parts.append("\n".join(f"3 {a} {b} {c}" for a, b, c in mesh.triangles))
    parts.append(f"\nCELL_TYPES {nt}\n" + "\n".join(["5"] * nt) + "\n")
    if point_data:
        parts.append(f"POINT_DATA {mesh.n_vertices}\n")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 1:
                parts.append(_vtk_scalars(name, arr))
            else:
                parts.append(_vtk_vectors(name, arr[:, 0], arr[:, 1]))
    Path(path).write_text("".join(parts))


def write_vtk_grid(grid, values, path, name="vorticity") -> None:
    """Structured transfer-grid field; `values` has shape (ny, nx)."""
    values = np.asarray(values)
    if values.shape != (grid.ny, grid.nx):
        raise ValueError(f"grid field shape {values.shape} does not match "
                         f"({grid.ny}, {grid.nx})")
    parts = [_VTK_HEADER.format(title="transfer grid"),
             "DATASET STRUCTURED_POINTS\n",
             f"DIMENSIONS {grid.nx} {grid.ny} 1\n",
             f"ORIGIN {_fmt(grid.xs[0])} {_fmt(grid.ys[0])} 0\n",
             f"SPACING {_fmt(grid.h)} {_fmt(grid.h)} 1\n",
             f"POINT_DATA {grid.nx * grid.ny}\n",
             _vtk_scalars(name, values.ravel())]
    Path(path).write_text("".join(parts))


class _Tokens:
    """Whitespace token stream over a VTK file body."""

    def __init__(self, text):
        self.toks = text.split()
        self.i = 0

    def next(self) -> str:
        if self.i >= len(self.toks):
            raise ConfigurationError("truncated VTK file")
        self.i += 1
        return self.toks[self.i - 1]

    def floats(self, n) -> np.ndarray:
        out = np.array([float(self.next()) for _ in range(n)])
        return out

    def expect(self, word):
        got = self.next()
        if got != word:
            raise ConfigurationError(f"expected {word!r} in VTK file, got {got!r}")


def _read_vtk_body(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise ConfigurationError(f"{path}: not a legacy VTK file")
    if lines[2].strip() != "ASCII":
        raise ConfigurationError(f"{path}: only ASCII VTK is supported")
    return _Tokens("\n".join(lines[3:]))


def _read_attributes(tk, n):
    data = {}
    while tk.i < len(tk.toks):
        kind = tk.next()
        name = tk.next()
        if kind == "SCALARS":
            tk.next()                    # value type
            tk.next()                    # component count
            tk.expect("LOOKUP_TABLE")
            tk.next()
            data[name] = tk.floats(n)
        elif kind == "VECTORS":
            tk.next()
            flat = tk.floats(3 * n).reshape(n, 3)
            data[name] = flat[:, :2].copy()
        else:
            raise ConfigurationError(f"unsupported VTK attribute {kind!r}")
    return data


def read_vtk_particles(path):
    """Returns (x, y, gamma) arrays from a particle-cloud file."""
    tk = _read_vtk_body(path)
    tk.expect("DATASET")
    tk.expect("POLYDATA")
    tk.expect("POINTS")
    n = int(tk.next())
    tk.next()
    pts = tk.floats(3 * n).reshape(n, 3)
    tk.expect("VERTICES")
    n_cells = int(tk.next())
    total = int(tk.next())
    tk.floats(total)
    if n_cells != n:
        raise ConfigurationError(f"{path}: malformed particle vertices")
    tk.expect("POINT_DATA")
    int(tk.next())
    data = _read_attributes(tk, n)
    return pts[:, 0], pts[:, 1], data["gamma"]


def read_vtk_mesh(path):
    """Returns (points (n,2), triangles (nt,3), point_data dict)."""
    tk = _read_vtk_body(path)
    tk.expect("DATASET")
    tk.expect("UNSTRUCTURED_GRID")
    tk.expect("POINTS")
    n = int(tk.next())
    tk.next()
    pts = tk.floats(3 * n).reshape(n, 3)[:, :2].copy()
    tk.expect("CELLS")
    nt = int(tk.next())
    int(tk.next())
    cells = tk.floats(4 * nt).reshape(nt, 4).astype(int)
    if np.any(cells[:, 0] != 3):
        raise ConfigurationError(f"{path}: non-triangle cells")
    tk.expect("CELL_TYPES")
    int(tk.next())
    tk.floats(nt)
    data = {}
    if tk.i < len(tk.toks):
        tk.expect("POINT_DATA")
        int(tk.next())
        data = _read_attributes(tk, n)
    return pts, cells[:, 1:].copy(), data


def read_vtk_grid(path):
    """Returns (xs, ys, values (ny, nx), name) from a structured-points file."""
    tk = _read_vtk_body(path)
    tk.expect("DATASET")
    tk.expect("STRUCTURED_POINTS")
    tk.expect("DIMENSIONS")
    nx, ny = int(tk.next()), int(tk.next())
    int(tk.next())
    tk.expect("ORIGIN")
    x0, y0 = float(tk.next()), float(tk.next())
    tk.next()
    tk.expect("SPACING")
    hx, hy = float(tk.next()), float(tk.next())
    tk.next()
    tk.expect("POINT_DATA")
    n = int(tk.next())
    if n != nx * ny:
        raise ConfigurationError(f"{path}: POINT_DATA size mismatch")
    data = _read_attributes(tk, n)
    (name, vals), = data.items()
    return (x0 + hx * np.arange(nx), y0 + hy * np.arange(ny),
            vals.reshape(ny, nx), name)
