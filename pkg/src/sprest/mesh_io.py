"""Mesh and field serialization: a JSON schema and legacy VTK text.

JSON schema (``format: sprest-mesh``, ``version: 1``)::

    domain       {kind, a_inner, b_outer, size, tag_overrides}
    order        "Q4" | "Q8"
    divisions    level-0 divisions
    max_level    refinement level cap
    leaves       [[level, i, j], ...] quadtree leaves in element order
    nodes        [[x, y], ...]
    elements     [[n0, n1, ...], ...] corners ccw then midsides
    levels       [level, ...]
    boundary     [{element, local_edge, side, tag}, ...]
    constraints  {hanging node: [[masters...], [weights...]]}
    point_data   optional {name: [[...], ...]} nodal fields
    cell_data    optional {name: [...]} per-element fields

The mesh is rebuilt from ``domain``, ``divisions``, ``max_level`` and
``leaves``; the remaining mesh entries are checked against the rebuild.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from sprest.geometry import DomainSpec, QuadMesh, _assemble
from sprest.quadrature import node_points

FORMAT = "sprest-mesh"
VERSION = 1

# legacy VTK cell types
VTK_QUAD = 9
VTK_QUADRATIC_QUAD = 23


def mesh_to_dict(mesh: QuadMesh, point_data: dict | None = None,
                 cell_data: dict | None = None) -> dict:
    d = mesh.domain
    out = {
        "format": FORMAT, "version": VERSION,
        "domain": {"kind": d.kind, "a_inner": d.a_inner, "b_outer": d.b_outer,
                   "size": d.size, "tag_overrides": [list(t) for t in d.tag_overrides]},
        "order": mesh.order, "divisions": mesh.divisions, "max_level": mesh.max_level,
        "leaves": [list(leaf) for leaf in mesh.leaves],
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "levels": mesh.levels.tolist(),
        "boundary": [{"element": b.element, "local_edge": b.local_edge, "side": b.side,
                      "tag": b.tag} for b in mesh.boundary_edges],
        "constraints": {str(k): [list(m), list(w)] for k, (m, w) in
                        sorted(mesh.constraints.items())},
    }
    if point_data:
        out["point_data"] = {k: np.asarray(v).tolist() for k, v in point_data.items()}
    if cell_data:
        out["cell_data"] = {k: np.asarray(v).tolist() for k, v in cell_data.items()}
    return out


def mesh_from_dict(data: dict) -> QuadMesh:
    if data.get("format") != FORMAT or data.get("version") != VERSION:
        raise ValueError("not a sprest-mesh version 1 document")
    dd = data["domain"]
    spec = DomainSpec(dd["kind"], dd["a_inner"], dd["b_outer"], dd["size"],
                      tuple(tuple(t) for t in dd.get("tag_overrides", ())))
    leaves = {tuple(int(v) for v in leaf) for leaf in data["leaves"]}
    mesh = _assemble(spec, data["order"], int(data["divisions"]), int(data["max_level"]), leaves)
    if [list(leaf) for leaf in mesh.leaves] != [list(leaf) for leaf in data["leaves"]]:
        raise ValueError("leaf order does not match the rebuilt mesh")
    if "elements" in data and mesh.elements.tolist() != data["elements"]:
        raise ValueError("connectivity does not match the rebuilt mesh")
    if "nodes" in data and not np.allclose(mesh.nodes, np.asarray(data["nodes"]),
                                           rtol=1e-12, atol=1e-12):
        raise ValueError("node coordinates do not match the rebuilt mesh")
    return mesh


def write_mesh_json(path, mesh: QuadMesh, point_data=None, cell_data=None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(mesh_to_dict(mesh, point_data, cell_data), indent=1))
    return path


def read_mesh_json(path) -> QuadMesh:
    return mesh_from_dict(json.loads(Path(path).read_text()))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_vtk(path, mesh: QuadMesh, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "sprest mesh") -> Path:
    """Legacy ASCII VTK unstructured grid with optional point and cell data.

    Arrays of shape (n,) are written as scalars, (n, 2) as vectors padded
    with zero and (n, 3) as generic 3-component fields.
    """
    path = Path(path)
    nn = mesh.elements.shape[1]
    ctype = VTK_QUAD if nn == 4 else VTK_QUADRATIC_QUAD
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in mesh.nodes]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (nn + 1)}")
    lines += [f"{nn} " + " ".join(str(int(v)) for v in row) for row in mesh.elements]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(ctype)] * mesh.n_elements

    def block(kind, count, data):
        if not data:
            return
        lines.append(f"{kind} {count}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != count:
                raise ValueError(f"{name}: expected {count} rows, got {arr.shape[0]}")
            name = name.replace(" ", "_")
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in arr)
            elif arr.shape[1] == 2:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{_fmt(a)} {_fmt(b)} 0.0" for a, b in arr)
            else:
                lines.append("FIELD FieldData 1")
                lines.append(f"{name} {arr.shape[1]} {count} double")
                lines.extend(" ".join(_fmt(v) for v in row) for row in arr)

    block("CELL_DATA", mesh.n_elements, cell_data)
    block("POINT_DATA", mesh.n_nodes, point_data)
    path.write_text("\n".join(lines) + "\n")
    return path


def field_point_data(fe, rec=None) -> dict:
    """Nodal FE (and recovered) displacement and stress for export."""
    ps = node_points(fe.mesh)
    out = {"u_fe": fe.u.reshape(-1, 2), "stress_fe": fe.stress_at(ps)}
    if rec is not None:
        v = rec.evaluate(ps)
        out["u_rec"] = v.u
        out["stress_rec"] = v.sigma
    return out


def error_cell_data(report) -> dict:
    """Per-element error maps of an ErrorReport."""
    out = {"zz2": report.zz2_elem, "E2": report.E2_elem, "E3": report.E3_elem}
    if report.exact_estar2_elem is not None:
        out["exact_estar2"] = report.exact_estar2_elem
        out["exact_e2"] = report.exact_e2_elem
    return out
