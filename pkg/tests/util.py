"""Shared builders for the test suite."""

import numpy as np

from smasim.dissipation import DissipationMetric
from smasim.energy import (
    BulkDensity,
    Deformation,
    InterfaceDensity,
    LoadProgram,
    MaterialModel,
    deformation_gradients,
)
from smasim.mesh import PhaseField, build_box_mesh
from smasim.tensor3 import det

WELL_1 = np.diag([1.3, 0.9, 0.9])


def two_phase_bulk(kappa=(0.0, 0.0)):
    wells = np.stack([np.eye(3), WELL_1])
    return BulkDensity(
        wells, a=1.0, b=1.0, gamma=10.0,
        delta=BulkDensity.balanced_delta(1.0, 1.0, 4.0, 2.0),
        kappa=kappa, p=4.0, q=2.0,
    )


def two_phase_interface(alpha=0.02, beta=0.01, gamma=0.015, smoothing=1e-8):
    return InterfaceDensity(alpha=alpha, beta=beta, gamma=gamma,
                            smoothing=smoothing, num_phases=2)


def two_phase_model(**iface_kw):
    return MaterialModel(two_phase_bulk(), two_phase_interface(**iface_kw))


def ramp_program(spring_k=5.0):
    return LoadProgram(
        [0.0, 1.0],
        body=[[0.0, 0.0, 0.0], [0.0, 0.0, -0.5]],
        traction=[[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]],
        target_matrix=[np.eye(3), np.diag([1.2, 0.95, 0.95])],
        target_offset=[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]],
        spring_k=spring_k,
    )


def l1_metric(num_phases=2):
    return DissipationMetric(num_phases, norm="l1")


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, [0, 1]] = q[:, [1, 0]]
    return q


def random_admissible(mesh, rng, scale=0.04):
    """Random nodal perturbation of the identity with positive determinants."""
    for _ in range(50):
        pos = mesh.nodes + scale * rng.standard_normal(mesh.nodes.shape)
        y = Deformation(pos)
        if det(deformation_gradients(mesh, y)).min() > 0.1:
            return y
        scale *= 0.7
    raise RuntimeError("could not build an admissible random state")


def half_split_labels(mesh, axis=0, cut=0.5):
    return (mesh.tet_centroids()[:, axis] > cut).astype(np.int64)


def half_split_field(mesh, axis=0, cut=0.5):
    return PhaseField(half_split_labels(mesh, axis, cut), 2)


def cube_mesh(n, **kw):
    return build_box_mesh(n, n, n, 1.0, 1.0, 1.0, **kw)
