"""Figures rendered from a finished run directory.

Everything is derived from the files a run leaves behind (diagnostics.csv
and optional VTK snapshots), so reports can be regenerated at any time
without touching the solver.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ConfigurationError
from .io import read_timeseries, read_vtk_grid

__all__ = ["render_report"]


def _column(columns, data, name):
    return data[:, columns.index(name)]


def _timeseries_figure(columns, data, path) -> None:
    t = _column(columns, data, "t")
    fig, axes = plt.subplots(2, 2, figsize=(9.0, 6.5), sharex=True)

    ax = axes[0, 0]
    ax.plot(t, _column(columns, data, "wmax_E"), label="Eulerian")
    ax.plot(t, _column(columns, data, "wmax_L"), "--", label="Lagrangian")
    ax.set_ylabel("max |vorticity|")
    ax.legend(fontsize="small")

    for ax, name in ((axes[0, 1], "E"), (axes[1, 0], "enstrophy"),
                     (axes[1, 1], "palinstrophy")):
        ax.plot(t, _column(columns, data, name))
        ax.set_ylabel(name)
    for ax in axes[1]:
        ax.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _circulation_figure(columns, data, path) -> None:
    t = _column(columns, data, "t")
    gl = _column(columns, data, "gamma_L")
    gs = _column(columns, data, "gamma_sheet")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.5))
    ax1.plot(t, gl, label="particles")
    ax1.plot(t, gs, "--", label="sheet")
    ax1.plot(t, gl + gs, ":", label="total")
    ax1.set_xlabel("t")
    ax1.set_ylabel("circulation")
    ax1.legend(fontsize="small")
    ax2.plot(t, _column(columns, data, "n_particles"))
    ax2.set_xlabel("t")
    ax2.set_ylabel("particle count")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _forces_figure(columns, data, path) -> bool:
    names = ("cd", "cd_pres", "cd_fric", "cl")
    series = {n: _column(columns, data, n) for n in names}
    if all(np.all(s == 0.0) for s in series.values()):
        return False
    t = _column(columns, data, "t")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.5))
    ax1.plot(t, series["cd"], label="total")
    ax1.plot(t, series["cd_pres"], "--", label="pressure")
    ax1.plot(t, series["cd_fric"], ":", label="friction")
    ax1.set_xlabel("t")
    ax1.set_ylabel("drag coefficient")
    ax1.legend(fontsize="small")
    ax2.plot(t, series["cl"])
    ax2.set_xlabel("t")
    ax2.set_ylabel("lift coefficient")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def _latest_grid_file(out: Path):
    best = None
    best_t = None
    for p in out.glob("grid-t*.vtk"):
        try:
            t = float(p.name[len("grid-t"):-len(".vtk")])
        except ValueError:
            continue
        if best_t is None or t > best_t:
            best, best_t = p, t
    return best, best_t


def _vorticity_figure(path_in: Path, t: float, path_out: Path) -> None:
    xs, ys, values, name = read_vtk_grid(path_in)
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    vmax = float(np.max(np.abs(values))) or 1.0
    mesh = ax.pcolormesh(xs, ys, values, cmap="RdBu_r",
                         vmin=-vmax, vmax=vmax, shading="nearest")
    fig.colorbar(mesh, ax=ax, label=name)
    ax.set_aspect("equal")
    ax.set_title(f"{name} at t = {t:g}")
    fig.tight_layout()
    fig.savefig(path_out, dpi=150)
    plt.close(fig)


def render_report(out_dir) -> list[Path]:
    """Render PNG figures next to a run's diagnostics.csv.

    Returns the list of files written.  Timeseries panels always appear
    when records exist; force curves only when any are nonzero, and a
    vorticity map only when the run left grid snapshots.
    """
    out = Path(out_dir)
    csv = out / "diagnostics.csv"
    if not csv.is_file():
        raise ConfigurationError(f"{csv} not found; run the case first")
    columns, data = read_timeseries(csv)
    written = []
    if data.shape[0] > 0:
        for fig, name in ((_timeseries_figure, "report-timeseries.png"),
                          (_circulation_figure, "report-circulation.png")):
            fig(columns, data, out / name)
            written.append(out / name)
        if _forces_figure(columns, data, out / "report-forces.png"):
            written.append(out / "report-forces.png")
    grid_file, t = _latest_grid_file(out)
    if grid_file is not None:
        _vorticity_figure(grid_file, t, out / "report-vorticity.png")
        written.append(out / "report-vorticity.png")
    return written
