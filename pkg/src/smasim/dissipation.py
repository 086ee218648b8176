"""Rate-independent dissipation distances between phase fields."""

from __future__ import annotations

import numpy as np

__all__ = [
    "DissipationMetric",
    "total_dissipation",
    "trajectory_dissipation",
]

_NORMS = ("l1", "l2", "linf")


class DissipationMetric:
    """Pointwise transformation cost between phase labels.

    Either a norm on the one-hot label difference (default l1, so any
    flip costs 2 per unit volume) or an explicit symmetric weight table
    with zero diagonal and positive off-diagonal entries.  Validation
    enforces the metric axioms including the triangle inequality.
    """

    def __init__(self, num_phases, norm="l1", weights=None):
        if num_phases < 2:
            raise ValueError("need at least two phases")
        self.num_phases = int(num_phases)
        self.norm = None
        if weights is not None:
            table = np.asarray(weights, dtype=float)
            if table.shape != (num_phases, num_phases):
                raise ValueError(
                    f"weight table must be {num_phases}x{num_phases}, got {table.shape}"
                )
            if not np.allclose(table, table.T, rtol=0.0, atol=0.0):
                raise ValueError("weight table must be symmetric")
            if np.any(np.diag(table) != 0.0):
                raise ValueError("weight table diagonal must be zero")
            off = table[~np.eye(num_phases, dtype=bool)]
            if np.any(off <= 0.0):
                raise ValueError("off-diagonal weights must be positive")
            for i in range(num_phases):
                for j in range(num_phases):
                    for k in range(num_phases):
                        if table[i, j] > table[i, k] + table[k, j] + 1e-15:
                            raise ValueError(
                                f"weights violate the triangle inequality at ({i},{k},{j})"
                            )
            self.table = table
        else:
            if norm not in _NORMS:
                raise ValueError(f"unknown norm {norm!r}; pick one of {_NORMS}")
            self.norm = norm
            eye = np.eye(num_phases)
            diff = eye[:, None, :] - eye[None, :, :]
            if norm == "l1":
                table = np.abs(diff).sum(axis=-1)
            elif norm == "l2":
                table = np.sqrt((diff * diff).sum(axis=-1))
            else:
                table = np.abs(diff).max(axis=-1)
            self.table = table
        self.table.setflags(write=False)

    def pointwise(self, i, j):
        """Distance between two labels."""
        if not (0 <= i < self.num_phases and 0 <= j < self.num_phases):
            raise ValueError("label out of range")
        return float(self.table[i, j])


def total_dissipation(mesh, z1, z2, metric):
    """Volume-weighted dissipation of switching field z1 into z2."""
    if len(z1.labels) != len(z2.labels) or len(z1.labels) != mesh.num_tets:
        raise ValueError("phase fields do not match the mesh")
    return float(np.dot(mesh.volumes, metric.table[z1.labels, z2.labels]))


def trajectory_dissipation(mesh, metric, steps, start, stop):
    """Dissipation of a piecewise-constant label curve over [start, stop].

    steps is a time-sorted sequence of (time, PhaseField); the curve takes
    the value of the latest recorded step.  The supremum over partitions
    of a metric-induced dissipation equals the sum over recorded jumps
    inside the interval, which is what this returns.
    """
    if start > stop:
        raise ValueError("empty interval: start > stop")
    times = [t for t, _ in steps]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("step times must be strictly increasing")
    total = 0.0
    for (_, z_prev), (t, z) in zip(steps, steps[1:]):
        if start < t <= stop:
            total += total_dissipation(mesh, z_prev, z, metric)
    return total
