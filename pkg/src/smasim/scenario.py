"""Scenario documents: parsing, validation and normalization.

A scenario is a JSON object bundling the mesh specification, material
parameters, loading program, dissipation metric, solver configuration and
the initial state.  Parsing resolves defaults into a canonical document
whose hash fingerprints the run.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import pathlib

import numpy as np

from .dissipation import DissipationMetric
from .energy import (
    BulkDensity,
    Deformation,
    InterfaceDensity,
    LoadProgram,
    MaterialModel,
)
from .mesh import PhaseField, TetMesh, build_box_mesh, load_mesh
from .solver import SolverConfig

__all__ = ["Scenario", "ScenarioError", "load_scenario", "scenario_from_document"]


class ScenarioError(ValueError):
    """Invalid scenario document; the message names the offending field."""


_IDENTITY = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]

_SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolverConfig)}


@dataclasses.dataclass
class Scenario:
    document: dict
    mesh: TetMesh
    model: MaterialModel
    metric: DissipationMetric
    program: LoadProgram
    config: SolverConfig
    horizon: float
    steps: int
    y0: Deformation
    z0: PhaseField
    fingerprint: str
    vtk_every: int

    @property
    def num_phases(self):
        return self.model.num_phases

    def to_document(self):
        return copy.deepcopy(self.document)


def _fail(path, msg):
    raise ScenarioError(f"{path}: {msg}")


def _need(obj, key, path, kind=None):
    if key not in obj:
        _fail(f"{path}.{key}", "missing required field")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        _fail(f"{path}.{key}", f"expected {kind.__name__}")
    return value


def _matrix3(value, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3, 3):
        _fail(path, "expected a 3x3 matrix")
    return arr


def _vector3(value, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        _fail(path, "expected a 3-vector")
    return arr


def _normalize(doc):
    """Fill defaults and resolve symbolic values into a canonical document."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    out = copy.deepcopy(doc)

    mesh = _need(out, "mesh", "scenario", dict)
    mtype = _need(mesh, "type", "mesh", str)
    if mtype == "box":
        for key, default in (("nx", 1), ("ny", 1), ("nz", 1),
                             ("lx", 1.0), ("ly", 1.0), ("lz", 1.0)):
            mesh.setdefault(key, default)
        mesh.setdefault("gamma0", [])
        mesh.setdefault("gamma1", [])
    elif mtype == "file":
        _need(mesh, "path", "mesh", str)
    else:
        _fail("mesh.type", f"unknown mesh type {mtype!r}")

    mat = _need(out, "material", "scenario", dict)
    mat.setdefault("exponent_p", 4.0)
    mat.setdefault("exponent_q", 2.0)
    phases = _need(mat, "phases", "material", list)
    if len(phases) < 2:
        _fail("material.phases", "need at least two phases")
    p_exp = float(mat["exponent_p"])
    q_exp = float(mat["exponent_q"])
    for i, ph in enumerate(phases):
        path = f"material.phases[{i}]"
        if not isinstance(ph, dict):
            _fail(path, "expected an object")
        if i == 0:
            ph.setdefault("well", copy.deepcopy(_IDENTITY))
        _need(ph, "well", path)
        ph.setdefault("a", 1.0)
        ph.setdefault("b", 0.0)
        ph.setdefault("gamma", 0.0)
        ph.setdefault("delta", 0.0)
        ph.setdefault("kappa", 0.0)
        if ph["delta"] == "balanced":
            ph["delta"] = BulkDensity.balanced_delta(
                float(ph["a"]), float(ph["b"]), p_exp, q_exp
            )

    itf = _need(out, "interface", "scenario", dict)
    itf.setdefault("smoothing", 1e-8)
    iphases = _need(itf, "phases", "interface", list)
    if len(iphases) != len(phases):
        _fail("interface.phases", "phase count differs from material.phases")
    for i, ph in enumerate(iphases):
        path = f"interface.phases[{i}]"
        if not isinstance(ph, dict):
            _fail(path, "expected an object")
        _need(ph, "alpha", path)
        ph.setdefault("beta", 0.0)
        ph.setdefault("gamma", 0.0)

    dis = out.setdefault("dissipation", {})
    if "weights" not in dis:
        dis.setdefault("norm", "l1")

    time = _need(out, "time", "scenario", dict)
    horizon = float(_need(time, "horizon", "time"))
    time.setdefault("steps", 1)

    load = out.setdefault("loading", {})
    load.setdefault("times", [0.0, horizon] if horizon > 0.0 else [0.0])
    g = len(load["times"])
    load.setdefault("body_force", [[0.0, 0.0, 0.0]] * g)
    load.setdefault("traction", [[0.0, 0.0, 0.0]] * g)
    load.setdefault("target", [
        {"matrix": copy.deepcopy(_IDENTITY), "offset": [0.0, 0.0, 0.0]}
        for _ in range(g)
    ])
    load.setdefault("spring_stiffness", 0.0)
    for key in ("body_force", "traction", "target"):
        if len(load[key]) != g:
            _fail(f"loading.{key}", f"expected {g} entries to match the time grid")
    for i, item in enumerate(load["target"]):
        if not isinstance(item, dict):
            _fail(f"loading.target[{i}]", "expected an object")
        item.setdefault("matrix", copy.deepcopy(_IDENTITY))
        item.setdefault("offset", [0.0, 0.0, 0.0])

    solver = out.setdefault("solver", {})
    unknown = set(solver) - _SOLVER_FIELDS
    if unknown:
        _fail("solver", f"unknown fields {sorted(unknown)}")
    defaults = SolverConfig()
    for f in dataclasses.fields(SolverConfig):
        solver.setdefault(f.name, getattr(defaults, f.name))

    init = out.setdefault("initial", {})
    init.setdefault("deformation", {"type": "identity"})
    init.setdefault("phase", {"type": "uniform", "label": 0})

    output = out.setdefault("output", {})
    output.setdefault("vtk_every", 1)
    return out


def _build_mesh(spec, base_dir):
    if spec["type"] == "box":
        try:
            return build_box_mesh(
                spec["nx"], spec["ny"], spec["nz"],
                spec["lx"], spec["ly"], spec["lz"],
                gamma0=tuple(spec["gamma0"]), gamma1=tuple(spec["gamma1"]),
            )
        except ValueError as exc:
            _fail("mesh", str(exc))
    path = pathlib.Path(base_dir) / spec["path"]
    try:
        with open(path) as fh:
            return load_mesh(json.load(fh))
    except OSError as exc:
        _fail("mesh.path", f"cannot read {path}: {exc}")
    except ValueError as exc:
        _fail("mesh.path", str(exc))


def _build_material(doc):
    mat = doc["material"]
    phases = mat["phases"]
    wells = []
    for i, ph in enumerate(phases):
        well = _matrix3(ph["well"], f"material.phases[{i}].well")
        if not np.allclose(well, well.T, rtol=0.0, atol=1e-12):
            _fail(f"material.phases[{i}].well", "not symmetric")
        if np.any(np.linalg.eigvalsh(0.5 * (well + well.T)) <= 0.0):
            _fail(f"material.phases[{i}].well", "not symmetric positive definite")
        wells.append(well)
    if not np.array_equal(wells[0], np.eye(3)):
        _fail("material.phases[0].well", "austenite well must be the identity")
    try:
        bulk = BulkDensity(
            np.stack(wells),
            a=[float(ph["a"]) for ph in phases],
            b=[float(ph["b"]) for ph in phases],
            gamma=[float(ph["gamma"]) for ph in phases],
            delta=[float(ph["delta"]) for ph in phases],
            kappa=[float(ph["kappa"]) for ph in phases],
            p=float(mat["exponent_p"]),
            q=float(mat["exponent_q"]),
        )
    except ValueError as exc:
        _fail("material", str(exc))
    itf = doc["interface"]
    try:
        interface = InterfaceDensity(
            alpha=[float(ph["alpha"]) for ph in itf["phases"]],
            beta=[float(ph["beta"]) for ph in itf["phases"]],
            gamma=[float(ph["gamma"]) for ph in itf["phases"]],
            smoothing=float(itf["smoothing"]),
            num_phases=len(phases),
        )
    except ValueError as exc:
        _fail("interface", str(exc))
    return MaterialModel(bulk, interface)


def _build_metric(doc, num_phases):
    dis = doc["dissipation"]
    try:
        if "weights" in dis:
            return DissipationMetric(num_phases, weights=dis["weights"])
        return DissipationMetric(num_phases, norm=dis["norm"])
    except ValueError as exc:
        _fail("dissipation", str(exc))


def _build_program(doc, mesh):
    load = doc["loading"]
    times = np.asarray(load["times"], dtype=float)
    body = np.asarray(load["body_force"], dtype=float)
    if body.ndim == 3 and body.shape[1] != mesh.num_tets:
        _fail("loading.body_force", "per-element force does not match the mesh")
    target = load["target"]
    tmat = np.stack([
        _matrix3(item.get("matrix", _IDENTITY), f"loading.target[{i}].matrix")
        for i, item in enumerate(target)
    ])
    toff = np.stack([
        _vector3(item.get("offset", (0.0, 0.0, 0.0)), f"loading.target[{i}].offset")
        for i, item in enumerate(target)
    ])
    try:
        return LoadProgram(
            times,
            body=body,
            traction=np.asarray(load["traction"], dtype=float),
            target_matrix=tmat,
            target_offset=toff,
            spring_k=float(load["spring_stiffness"]),
        )
    except ValueError as exc:
        _fail("loading", str(exc))


def _build_initial(doc, mesh, num_phases):
    init = doc["initial"]
    dspec = init["deformation"]
    dtype = dspec.get("type", "identity")
    if dtype == "identity":
        y0 = Deformation.identity(mesh)
    elif dtype == "affine":
        y0 = Deformation.affine(
            mesh,
            _matrix3(dspec.get("matrix", _IDENTITY), "initial.deformation.matrix"),
            _vector3(dspec.get("offset", (0.0, 0.0, 0.0)),
                     "initial.deformation.offset"),
        )
    else:
        _fail("initial.deformation.type", f"unknown type {dtype!r}")

    pspec = init["phase"]
    ptype = pspec.get("type", "uniform")
    if ptype == "uniform":
        label = int(pspec.get("label", 0))
        if not 0 <= label < num_phases:
            _fail("initial.phase.label", "label out of range")
        z0 = PhaseField.uniform(mesh, label, num_phases)
    elif ptype == "halfspace":
        normal = _vector3(pspec.get("normal", (1.0, 0.0, 0.0)),
                          "initial.phase.normal")
        offset = float(pspec.get("offset", 0.0))
        inside = int(pspec.get("inside", 1))
        outside = int(pspec.get("outside", 0))
        for name, lab in (("inside", inside), ("outside", outside)):
            if not 0 <= lab < num_phases:
                _fail(f"initial.phase.{name}", "label out of range")
        proj = mesh.tet_centroids() @ normal
        labels = np.where(proj < offset, inside, outside).astype(np.int64)
        z0 = PhaseField(labels, num_phases)
    elif ptype == "list":
        labels = np.asarray(pspec.get("labels", ()), dtype=np.int64)
        if len(labels) != mesh.num_tets:
            _fail("initial.phase.labels", "length does not match the mesh")
        try:
            z0 = PhaseField(labels, num_phases)
        except ValueError as exc:
            _fail("initial.phase.labels", str(exc))
    else:
        _fail("initial.phase.type", f"unknown type {ptype!r}")
    return y0, z0


def scenario_from_document(doc, base_dir=".", tol_overrides=None, seed=None):
    """Validate and build a Scenario from a parsed JSON document."""
    doc = _normalize(doc)
    if seed is not None:
        doc["solver"]["seed"] = int(seed)
    for key, value in (tol_overrides or {}).items():
        if key not in _SOLVER_FIELDS:
            _fail("solver", f"unknown override {key!r}")
        current = doc["solver"][key]
        doc["solver"][key] = type(current)(value) if not isinstance(current, bool) \
            else bool(value)

    mesh = _build_mesh(doc["mesh"], base_dir)
    model = _build_material(doc)
    metric = _build_metric(doc, model.num_phases)
    program = _build_program(doc, mesh)

    time = doc["time"]
    horizon = float(time["horizon"])
    steps = int(time["steps"])
    if horizon <= 0.0:
        _fail("time.horizon", "must be positive")
    if steps < 1:
        _fail("time.steps", "must be at least 1")
    if program.horizon < horizon - 1e-12:
        _fail("loading.times", "load program ends before the time horizon")

    try:
        config = SolverConfig(**doc["solver"])
    except (TypeError, ValueError) as exc:
        _fail("solver", str(exc))

    y0, z0 = _build_initial(doc, mesh, model.num_phases)
    if len(y0.positions) != mesh.num_nodes:
        _fail("initial.deformation", "node count mismatch")

    fingerprint = hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()

    return Scenario(
        document=doc,
        mesh=mesh,
        model=model,
        metric=metric,
        program=program,
        config=config,
        horizon=horizon,
        steps=steps,
        y0=y0,
        z0=z0,
        fingerprint=fingerprint,
        vtk_every=int(doc["output"]["vtk_every"]),
    )


def load_scenario(path, tol_overrides=None, seed=None):
    """Read and build a scenario from a JSON file."""
    path = pathlib.Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_document(
        doc, base_dir=path.parent, tol_overrides=tol_overrides, seed=seed
    )
