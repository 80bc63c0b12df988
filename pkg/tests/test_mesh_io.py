import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import solved
from sprest.estimators import estimate
from sprest.geometry import DomainSpec, build_structured_mesh, refine_elements
from sprest.mesh_io import (VTK_QUAD, VTK_QUADRATIC_QUAD, error_cell_data, field_point_data,
                            mesh_from_dict, mesh_to_dict, read_mesh_json, write_mesh_json,
                            write_vtk)
from sprest.reporting import Series, format_table, plot_svg, read_csv, write_csv


def meshes():
    sq = refine_elements(refine_elements(build_structured_mesh(DomainSpec.square(), 2, "Q4"),
                                         [0]), [0, 1])
    ann = refine_elements(build_structured_mesh(DomainSpec.annulus(), 2, "Q8"), [3])
    tagged = build_structured_mesh(DomainSpec.square().with_tags(left="dirichlet"), 3, "Q8")
    return [sq, ann, tagged]


@pytest.mark.parametrize("i", range(3))
def test_json_round_trip(i, tmp_path):
    m = meshes()[i]
    p = write_mesh_json(tmp_path / "m.json", m, cell_data={"lvl": m.levels})
    r = read_mesh_json(p)
    assert np.array_equal(r.elements, m.elements)
    assert np.array_equal(r.nodes, m.nodes)
    assert r.constraints.keys() == m.constraints.keys()
    assert [(b.side, b.tag) for b in r.boundary_edges] == \
        [(b.side, b.tag) for b in m.boundary_edges]
    assert json.loads(p.read_text())["cell_data"]["lvl"] == m.levels.tolist()


def test_bad_documents_raise():
    m = meshes()[0]
    d = mesh_to_dict(m)
    with pytest.raises(ValueError):
        mesh_from_dict({**d, "format": "other"})
    with pytest.raises(ValueError):
        mesh_from_dict({**d, "leaves": d["leaves"][::-1]})
    bad = {**d, "nodes": (np.array(d["nodes"]) + 0.1).tolist()}
    with pytest.raises(ValueError):
        mesh_from_dict(bad)


@pytest.mark.parametrize("order,ctype,nn", [("Q4", VTK_QUAD, 4), ("Q8", VTK_QUADRATIC_QUAD, 8)])
def test_vtk_structure(order, ctype, nn, tmp_path):
    _, fe, rec = solved("pipe", order, 2, hanging=True)
    m = fe.mesh
    p = write_vtk(tmp_path / "f.vtk", m, field_point_data(fe, rec),
                  error_cell_data(estimate(fe, rec)), title="pipe")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile Version")
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINTS {m.n_nodes} double" in lines
    assert f"CELLS {m.n_elements} {m.n_elements * (nn + 1)}" in lines
    k = lines.index(f"CELL_TYPES {m.n_elements}")
    assert all(int(x) == ctype for x in lines[k + 1:k + 1 + m.n_elements])
    assert f"CELL_DATA {m.n_elements}" in lines
    assert f"POINT_DATA {m.n_nodes}" in lines
    text = "\n".join(lines)
    for name in ("zz2", "E3", "u_fe", "u_rec"):
        assert name in text


def test_vtk_rejects_wrong_length(tmp_path):
    m = meshes()[0]
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", m, cell_data={"bad": np.zeros(m.n_elements + 1)})


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1, "c": None}, {"a": 2, "b": 1e-300, "c": "x"}]
    p = write_csv(tmp_path / "t.csv", rows, ("a", "b", "c"))
    back = read_csv(p)
    assert [r["a"] for r in back] == ["1", "2"]
    assert float(back[1]["b"]) == 1e-300
    assert back[0]["c"] == ""
    assert p.read_text().splitlines()[0] == "a,b,c"


def test_svg_is_xml(tmp_path):
    p = plot_svg(tmp_path / "p.svg", [Series("a<b", [1, 10, 100], [1, 0.1, 0.01])],
                 title="t & u", hlines=[("target", 0.05)])
    root = ET.parse(p).getroot()
    assert root.tag.endswith("svg")


def test_format_table():
    out = format_table([{"x": 1.5, "y": None}], ("x", "y"))
    assert out.splitlines()[0].split() == ["x", "y"]
