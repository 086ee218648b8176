"""Quasistatic simulator for shape-memory-alloy microstructure.

Piecewise-affine deformations and a per-element phase partition evolve by
time-incremental minimization of a polyconvex bulk energy, an
interface-polyconvex surface energy, external loading and a
rate-independent dissipation distance, with built-in verification of the
stability and energy-balance certificates.

Submodules import lazily so the CLI can cap thread pools before numpy
loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor3", "mesh", "energy", "dissipation", "solver",
    "scenario", "output", "report", "cli",
)

_EXPORTS = {
    "TetMesh": "mesh",
    "PhaseField": "mesh",
    "PhaseBoundary": "mesh",
    "MeshError": "mesh",
    "build_box_mesh": "mesh",
    "load_mesh": "mesh",
    "mesh_document": "mesh",
    "phase_boundary": "mesh",
    "partition_perimeter": "mesh",
    "Deformation": "energy",
    "BulkDensity": "energy",
    "InterfaceDensity": "energy",
    "InterfaceVector": "energy",
    "MaterialModel": "energy",
    "LoadProgram": "energy",
    "bulk_energy": "energy",
    "bulk_energy_gradient": "energy",
    "interface_energy": "energy",
    "interface_energy_gradient": "energy",
    "loading": "energy",
    "loading_gradient": "energy",
    "total_energy": "energy",
    "energy_breakdown": "energy",
    "energy_time_derivative": "energy",
    "gauss_identity_check": "energy",
    "DissipationMetric": "dissipation",
    "total_dissipation": "dissipation",
    "trajectory_dissipation": "dissipation",
    "SolverConfig": "solver",
    "StepRecord": "solver",
    "Trajectory": "solver",
    "minimize_y": "solver",
    "minimize_z": "solver",
    "incremental_step": "solver",
    "evolve": "solver",
    "audit_trajectory": "solver",
    "check_stability": "solver",
    "check_admissibility": "solver",
    "oracle_enumerate": "solver",
    "Scenario": "scenario",
    "ScenarioError": "scenario",
    "load_scenario": "scenario",
}

__all__ = sorted(set(_EXPORTS) | set(_SUBMODULES))


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
