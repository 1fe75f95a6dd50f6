"""Output writers: legacy VTK snapshots and the CSV energy log."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .assembly import SystemState
from .physics import ModelParams, fluid_fraction

CSV_HEADER = ("step", "time", "kinetic", "dw_energy", "grad_energy", "total",
              "visc_diss", "drag_diss", "ch_diss", "solid_area")


class OutputError(OSError):
    pass


def _fmt(v: float) -> str:
    return f"{float(v):.17e}"


def write_vtk(state: SystemState, path, params: ModelParams | None = None) -> Path:
    """Write vertex data of ``state`` as a legacy ASCII unstructured grid.

    Point data: ``phi``, ``mu``, ``p``, ``velocity`` (z padded with 0),
    ``w = fluid_fraction(phi) * v`` and ``c`` when present.  Velocities are
    the P2 values at the mesh vertices.
    """
    params = params or ModelParams()
    mesh = state.phi.space.mesh
    nv = mesh.n_vertices
    n2 = state.v.space.scalar.ndofs
    vx = state.v.coefficients[:nv]
    vy = state.v.coefficients[n2:n2 + nv]
    phi = state.phi.coefficients
    ff = fluid_fraction(phi, params)
    lines = ["# vtk DataFile Version 3.0", "fluidsolid snapshot t=" + _fmt(state.time), "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices]
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    lines.append(f"POINT_DATA {nv}")

    def scalar(name, vals):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in vals)

    def vector(name, ax, ay):
        lines.append(f"VECTORS {name} double")
        lines.extend(f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(ax, ay))

    scalar("phi", phi)
    scalar("mu", state.mu.coefficients)
    scalar("p", state.p.coefficients)
    if state.c is not None:
        scalar("c", state.c.coefficients)
    vector("velocity", vx, vy)
    vector("w", ff * vx, ff * vy)
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def write_energy_csv(records, path) -> Path:
    """Write one row per step record (see :data:`CSV_HEADER`)."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in records:
                e, s = r.energy, r.shrinkage
                w.writerow([r.step, _fmt(r.time), _fmt(e.kinetic), _fmt(e.dw_energy), _fmt(e.grad_energy),
                            _fmt(e.total), _fmt(e.visc_dissipation), _fmt(e.drag_dissipation),
                            _fmt(e.ch_dissipation), _fmt(s.solid_area)])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def read_energy_csv(path) -> dict:
    """Columns of an energy log as numpy arrays keyed by header name."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
    cols["step"] = cols["step"].astype(int)
    return cols
