"""Run artifacts: trace CSV, legacy VTK snapshots, state and summary JSON."""

from __future__ import annotations

import csv
import json
import pathlib

import numpy as np

from .energy import Deformation, bulk_density_field, deformation_gradients
from .mesh import PhaseField
from .tensor3 import det

__all__ = [
    "TRACE_COLUMNS",
    "format_number",
    "write_trace_csv",
    "read_trace_csv",
    "write_vtk",
    "write_json",
    "write_state",
    "load_state",
]

TRACE_COLUMNS = (
    "k", "t", "E_bulk", "E_int", "W_ext", "E_spring", "E_total",
    "D_step", "Diss_cum", "lower_2sided", "upper_2sided",
    "balance_residual", "min_detF", "y_iters", "z_sweeps",
)


def format_number(x):
    """17 significant digits: doubles survive the round trip exactly."""
    return f"{float(x):.17g}"


def write_trace_csv(path, records):
    path = pathlib.Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in records:
            writer.writerow([
                r.k, format_number(r.t),
                format_number(r.e_bulk), format_number(r.e_int),
                format_number(r.w_ext), format_number(r.e_spring),
                format_number(r.e_total), format_number(r.d_step),
                format_number(r.diss_cum), format_number(r.lower_2sided),
                format_number(r.upper_2sided), format_number(r.balance_residual),
                format_number(r.min_det_f), r.y_iters, r.z_sweeps,
            ])
    return path


def read_trace_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {key: (int(row[key]) if key in ("k", "y_iters", "z_sweeps")
                            else float(row[key])) for key in TRACE_COLUMNS}
            rows.append(parsed)
    return rows


def write_vtk(path, mesh, y, z, model):
    """Legacy ASCII unstructured grid: deformed points, per-cell phase
    label, determinant and bulk density."""
    pos = y.positions
    dets = det(deformation_gradients(mesh, y))
    dens = bulk_density_field(mesh, y, z, model)
    lines = [
        "# vtk DataFile Version 3.0",
        "smasim state",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_nodes} double",
    ]
    for p in pos:
        lines.append(" ".join(format_number(c) for c in p))
    lines.append(f"CELLS {mesh.num_tets} {5 * mesh.num_tets}")
    for tet in mesh.tets:
        lines.append("4 " + " ".join(str(int(i)) for i in tet))
    lines.append(f"CELL_TYPES {mesh.num_tets}")
    lines.extend(["10"] * mesh.num_tets)
    lines.append(f"CELL_DATA {mesh.num_tets}")
    lines.append("SCALARS phase int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(v)) for v in z.labels)
    lines.append("SCALARS det_F double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(format_number(v) for v in dets)
    lines.append("SCALARS bulk_density double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(format_number(v) for v in dens)
    path = pathlib.Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_json(path, payload):
    path = pathlib.Path(path)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def write_state(path, y, z, t=0.0):
    return write_json(path, {
        "time": float(t),
        "deformation": [[float(c) for c in p] for p in y.positions],
        "labels": [int(v) for v in z.labels],
    })


def load_state(path, mesh, num_phases):
    with open(path) as fh:
        doc = json.load(fh)
    pos = np.asarray(doc["deformation"], dtype=float)
    if pos.shape != (mesh.num_nodes, 3):
        raise ValueError("state deformation does not match the mesh")
    labels = np.asarray(doc["labels"], dtype=np.int64)
    if len(labels) != mesh.num_tets:
        raise ValueError("state labels do not match the mesh")
    return float(doc.get("time", 0.0)), Deformation(pos), PhaseField(labels, num_phases)
