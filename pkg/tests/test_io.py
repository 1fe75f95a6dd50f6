import numpy as np
import pytest

from _util import random_state
from fluidsolid.assembly import Discretization
from fluidsolid.driver import EnergyReport, ShrinkageReport, StepRecord
from fluidsolid.io import CSV_HEADER, OutputError, read_energy_csv, write_energy_csv, write_vtk
from fluidsolid.physics import fluid_fraction


def parse_vtk(path):
    """Minimal legacy-VTK reader: points, cells and named point arrays."""
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile") and lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    out, i = {}, 4
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + n]])
            i += n + 1
        elif head[0] == "CELLS":
            n = int(head[1])
            out["cells"] = np.array([[int(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + n]])
            assert int(head[2]) == out["cells"].size
            i += n + 1
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["types"] = [int(v) for v in lines[i + 1:i + 1 + n]]
            i += n + 1
        elif head[0] == "POINT_DATA":
            npts = int(head[1])
            i += 1
        elif head[0] == "SCALARS":
            out[head[1]] = np.array([float(v) for v in lines[i + 2:i + 2 + npts]])
            i += npts + 2
        elif head[0] == "VECTORS":
            out[head[1]] = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + npts]])
            i += npts + 1
        else:
            raise AssertionError(f"unexpected line {lines[i]!r}")
    return out


def test_vtk_two_triangles(tmp_path, unit_mesh, params, rng):
    d = Discretization(unit_mesh)
    st = random_state(d, rng, time=0.5)
    data = parse_vtk(write_vtk(st, tmp_path / "s.vtk", params))
    assert data["points"].shape == (4, 3)
    np.testing.assert_array_equal(data["points"][:, :2], unit_mesh.vertices)
    assert data["cells"].shape == (2, 4) and np.all(data["cells"][:, 0] == 3)
    np.testing.assert_array_equal(data["cells"][:, 1:], unit_mesh.triangles)
    assert data["types"] == [5, 5]
    np.testing.assert_array_equal(data["phi"], st.phi.coefficients)
    np.testing.assert_array_equal(data["mu"], st.mu.coefficients)
    np.testing.assert_array_equal(data["p"], st.p.coefficients)
    assert "c" not in data
    nv, n2 = d.nv, d.n2
    v = np.column_stack([st.v.coefficients[:nv], st.v.coefficients[n2:n2 + nv]])
    np.testing.assert_array_equal(data["velocity"][:, :2], v)
    np.testing.assert_allclose(data["w"][:, :2], fluid_fraction(st.phi.coefficients, params)[:, None] * v,
                               rtol=1e-15)
    assert np.all(data["w"][:, 2] == 0.0)


def test_vtk_includes_concentration(tmp_path, unit_mesh, rng):
    d = Discretization(unit_mesh, reactive=True)
    st = random_state(d, rng)
    data = parse_vtk(write_vtk(st, tmp_path / "c.vtk"))
    np.testing.assert_array_equal(data["c"], st.c.coefficients)


def test_vtk_unwritable_path(tmp_path, unit_mesh, rng):
    st = random_state(Discretization(unit_mesh), rng)
    with pytest.raises(OutputError):
        write_vtk(st, tmp_path / "missing" / "s.vtk")


def _record(k, rng):
    vals = rng.normal(size=7) * 10.0 ** rng.integers(-12, 3, size=7)
    energy = EnergyReport(*vals, time=0.02 * k)
    shrink = ShrinkageReport(rng.uniform(), rng.uniform(), 0.1, None, 0.18, None)
    return StepRecord(k, 0.02 * k, energy, shrink, None, 1.0, 1)


def test_energy_csv_round_trip_is_bitwise(tmp_path, rng):
    records = [_record(k, rng) for k in range(6)]
    cols = read_energy_csv(write_energy_csv(records, tmp_path / "e.csv"))
    assert tuple(cols) == CSV_HEADER
    np.testing.assert_array_equal(cols["step"], np.arange(6))
    for r, i in zip(records, range(6)):
        e = r.energy
        got = [cols[k][i] for k in CSV_HEADER[1:]]
        want = [r.time, e.kinetic, e.dw_energy, e.grad_energy, e.total, e.visc_dissipation,
                e.drag_dissipation, e.ch_dissipation, r.shrinkage.solid_area]
        assert got == want


def test_energy_csv_unwritable_path(tmp_path):
    with pytest.raises(OutputError):
        write_energy_csv([], tmp_path / "no" / "e.csv")
