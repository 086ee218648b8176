"""Energy functionals and their analytic nodal gradients.

Per-phase polyconvex bulk densities built on stress-free wells, weighted
interface densities on the phase-boundary faces, external loading with an
elastic boundary support, and the discrete divergence-theorem identities
used by the verification harness.
"""

from __future__ import annotations

import dataclasses
import math
from typing import NamedTuple

import numpy as np

from .mesh import GAMMA0, GAMMA1, phase_boundary
from .tensor3 import LEVI_CIVITA, cof, det

__all__ = [
    "INFINITE_ENERGY",
    "Deformation",
    "BulkDensity",
    "InterfaceDensity",
    "InterfaceVector",
    "MaterialModel",
    "LoadProgram",
    "EnergyParts",
    "InadmissibleStateError",
    "NonconformingDeformationError",
    "NonsmoothPointError",
    "field_gradients",
    "deformation_gradients",
    "bulk_energy",
    "bulk_density_field",
    "bulk_energy_gradient",
    "interface_vectors",
    "interface_energy",
    "interface_energy_gradient",
    "interface_measure_totals",
    "loading",
    "loading_gradient",
    "energy_time_derivative",
    "work_integral",
    "energy_breakdown",
    "total_energy",
    "total_energy_gradient",
    "gauss_identity_check",
]

# Distinguished out-of-band value for states outside the admissible set.
# Any finite energy compares below it.
INFINITE_ENERGY = math.inf


class InadmissibleStateError(ValueError):
    """A gradient was requested at a state with a non-positive determinant."""


class NonconformingDeformationError(RuntimeError):
    """Tangential traces from the two sides of a face disagree."""


class NonsmoothPointError(ValueError):
    """Unsmoothed interface gradient requested at a kink of the density."""


# ----------------------------------------------------------------------
# Kinematics


@dataclasses.dataclass
class Deformation:
    """Nodal deformed positions defining a continuous piecewise-affine map."""

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(np.asarray(self.positions, dtype=float))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be an (n, 3) array")

    def copy(self):
        return Deformation(self.positions.copy())

    @classmethod
    def identity(cls, mesh):
        return cls(mesh.nodes.copy())

    @classmethod
    def affine(cls, mesh, matrix, offset=(0.0, 0.0, 0.0)):
        matrix = np.asarray(matrix, dtype=float)
        return cls(mesh.nodes @ matrix.T + np.asarray(offset, dtype=float))


def field_gradients(mesh, nodal):
    """Per-element constant gradient of a nodal field, shape (m, 3, 3)."""
    nodal = np.asarray(nodal, dtype=float)
    edges = (nodal[mesh.tets[:, 1:]] - nodal[mesh.tets[:, :1]]).transpose(0, 2, 1)
    return edges @ mesh.dinv


def deformation_gradients(mesh, y):
    return field_gradients(mesh, y.positions)


def _scatter_element_forces(mesh, grad_edges):
    """Distribute d(energy)/d(edge matrix) of each element to its nodes."""
    out = np.zeros((mesh.num_nodes, 3))
    for c in range(3):
        np.add.at(out, mesh.tets[:, c + 1], grad_edges[:, :, c])
    np.add.at(out, mesh.tets[:, 0], -grad_edges.sum(axis=2))
    return out


# ----------------------------------------------------------------------
# Bulk densities


def _cof_contract(a, x):
    """Contraction x_ij eps_ikq eps_jlp a_qp, the cofactor-derivative pullback."""
    return np.einsum(
        "ikq,jlp,...qp,...ij->...kl", LEVI_CIVITA, LEVI_CIVITA, a, x, optimize=True
    )


def _sqnorm(a):
    return np.einsum("...ij,...ij->...", a, a)


class BulkDensity:
    """Per-phase stored energy densities.

    Phase i with well matrix W_i (symmetric positive definite) and
    B_i = W_i^-1 uses, for G = F B_i and det F > 0,

        a |G|^p + b |cof G|^q + gamma (det G - 1)^2 - delta log det G
        + kappa |cof F|^p / (det F)^(p-1) + offset

    where the offset calibrates the density to vanish at the well.  Each
    term is convex in (G, cof G, det G); right-composition with B_i keeps
    that structure because cof and det are multiplicative.  States with
    det F <= 0 get INFINITE_ENERGY.
    """

    def __init__(self, wells, a, b, gamma, delta, kappa=None, p=4.0, q=2.0):
        wells = np.asarray(wells, dtype=float)
        if wells.ndim != 3 or wells.shape[1:] != (3, 3):
            raise ValueError("wells must be a (num_phases, 3, 3) array")
        P = wells.shape[0]
        if P < 2:
            raise ValueError("need at least two phases")
        for i in range(P):
            w = wells[i]
            if not np.allclose(w, w.T, rtol=0.0, atol=1e-12):
                raise ValueError(f"well matrix {i} is not symmetric")
            if np.any(np.linalg.eigvalsh(0.5 * (w + w.T)) <= 0.0):
                raise ValueError(f"well matrix {i} is not positive definite")
        if p <= 3.0:
            raise ValueError("bulk exponent p must exceed 3")
        if q < 2.0:
            raise ValueError("bulk exponent q must be at least 2")

        def coeff(v, name):
            arr = np.broadcast_to(np.asarray(v, dtype=float), (P,)).copy()
            if np.any(arr < 0.0):
                raise ValueError(f"{name} coefficients must be nonnegative")
            return arr

        self.num_phases = P
        self.wells = wells
        self.a = coeff(a, "a")
        self.b = coeff(b, "b")
        self.gamma = coeff(gamma, "gamma")
        self.delta = coeff(delta, "delta")
        self.kappa = coeff(0.0 if kappa is None else kappa, "kappa")
        self.p = float(p)
        self.q = float(q)
        self.well_inv = cof(wells).transpose(0, 2, 1) / det(wells)[:, None, None]
        self.offsets = np.zeros(P)
        self.offsets = -np.array(
            [float(self.density(wells[i], i)) for i in range(P)]
        )

    @staticmethod
    def balanced_delta(a, b, p=4.0, q=2.0):
        """The log-term weight that makes the well a stationary point.

        With this delta (and kappa = 0) the gradient of the density
        vanishes at F = W_i, so a calibrated well state is an interior
        critical point.
        """
        return p * a * 3.0 ** ((p - 2.0) / 2.0) + 2.0 * q * b * 3.0 ** ((q - 2.0) / 2.0)

    def density(self, f, i):
        """Density of phase i at gradient(s) f; INFINITE_ENERGY if det <= 0."""
        f = np.asarray(f, dtype=float)
        g = f @ self.well_inv[i]
        detg = det(g)
        bad = detg <= 0.0
        safe = np.where(bad, 1.0, detg)
        p, q = self.p, self.q
        w = (
            self.a[i] * _sqnorm(g) ** (p / 2.0)
            + self.b[i] * _sqnorm(cof(g)) ** (q / 2.0)
            + self.gamma[i] * (detg - 1.0) ** 2
            - self.delta[i] * np.log(safe)
            + self.offsets[i]
        )
        if self.kappa[i] > 0.0:
            detf = np.where(bad, 1.0, det(f))
            w = w + self.kappa[i] * _sqnorm(cof(f)) ** (p / 2.0) * detf ** (1.0 - p)
        return np.where(bad, INFINITE_ENERGY, w)

    def density_table(self, f):
        """Densities of every phase at the given gradients, shape (..., P)."""
        f = np.asarray(f, dtype=float)
        return np.stack([self.density(f, i) for i in range(self.num_phases)], axis=-1)

    def stress(self, f, i):
        """First derivative of the phase-i density with respect to F."""
        f = np.asarray(f, dtype=float)
        binv = self.well_inv[i]
        g = f @ binv
        detg = det(g)
        if np.any(detg <= 0.0):
            raise InadmissibleStateError("non-positive determinant in stress evaluation")
        cofg = cof(g)
        p, q = self.p, self.q
        ng2 = _sqnorm(g)
        dg = self.a[i] * p * ng2[..., None, None] ** (p / 2.0 - 1.0) * g
        nc2 = _sqnorm(cofg)
        dg = dg + (
            self.b[i] * q * nc2[..., None, None] ** (q / 2.0 - 1.0)
            * _cof_contract(g, cofg)
        )
        dg = dg + (2.0 * self.gamma[i] * (detg - 1.0) / 1.0)[..., None, None] * cofg
        dg = dg - (self.delta[i] / detg)[..., None, None] * cofg
        out = dg @ binv.T
        if self.kappa[i] > 0.0:
            detf = det(f)
            coff = cof(f)
            nf2 = _sqnorm(coff)
            out = out + self.kappa[i] * (
                p * nf2[..., None, None] ** (p / 2.0 - 1.0)
                * detf[..., None, None] ** (1.0 - p) * _cof_contract(f, coff)
                + (1.0 - p) * nf2[..., None, None] ** (p / 2.0)
                * detf[..., None, None] ** (-p) * coff
            )
        return out

    def coercivity_constants(self, i):
        """(lead, offset) with density_i(F) >= lead |F|^p - offset for det F > 0.

        lead = a_i sigma_min(B_i)^p.  The log term is absorbed into the
        determinant quadratic, which needs gamma_i > 0 whenever delta_i > 0.
        """
        if self.delta[i] > 0.0 and self.gamma[i] == 0.0:
            raise ValueError("coercivity floor needs gamma > 0 when delta > 0")
        sigma_min = float(np.linalg.eigvalsh(self.well_inv[i]).min())
        lead = self.a[i] * sigma_min ** self.p
        if self.delta[i] > 0.0:
            # gamma (x-1)^2 - delta log x >= gamma (x-1)^2 - delta (x-1)
            # >= -delta^2 / (4 gamma)
            offset = self.delta[i] ** 2 / (4.0 * self.gamma[i]) - self.offsets[i]
        else:
            offset = -self.offsets[i]
        return float(lead), float(offset)


# ----------------------------------------------------------------------
# Interface densities


@dataclasses.dataclass
class InterfaceVector:
    """State of a deformed interface patch: normal, tangent map crossed
    with the normal, and the deformed-area vector."""

    n: np.ndarray
    H: np.ndarray
    c: np.ndarray

    def flat(self):
        """Length-15 view in the fixed order (n, H, c), H row-major."""
        return np.concatenate(
            [np.asarray(self.n, float).ravel(),
             np.asarray(self.H, float).ravel(),
             np.asarray(self.c, float).ravel()]
        )


class InterfaceDensity:
    """Weighted-norm family of convex 1-homogeneous interface densities.

    Phase i charges alpha_i |xi| + beta_i |c| + gamma_i |H| for the
    interface vector xi = (n, H, c).  With smoothing > 0 the gradient path
    replaces each norm by sqrt(|v|^2 + eps^2) - eps; reported energies
    always use the plain norms.
    """

    def __init__(self, alpha, beta=0.0, gamma=0.0, smoothing=1e-8, num_phases=None):
        arrs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (alpha, beta, gamma)]
        P = num_phases or max(len(v) for v in arrs)
        self.alpha = np.broadcast_to(arrs[0], (P,)).copy()
        self.beta = np.broadcast_to(arrs[1], (P,)).copy()
        self.gamma = np.broadcast_to(arrs[2], (P,)).copy()
        if np.any(self.alpha <= 0.0):
            raise ValueError("alpha weights must be positive")
        if np.any(self.beta < 0.0) or np.any(self.gamma < 0.0):
            raise ValueError("beta and gamma weights must be nonnegative")
        if smoothing < 0.0:
            raise ValueError("smoothing must be nonnegative")
        self.num_phases = P
        self.smoothing = float(smoothing)

    def psi(self, i, n, h, c, smoothed=False):
        """Density of phase i on interface vectors given as parts."""
        n = np.asarray(n, float)
        h = np.asarray(h, float)
        c = np.asarray(c, float)
        nn = np.einsum("...i,...i->...", n, n)
        hh = _sqnorm(h)
        cc = np.einsum("...i,...i->...", c, c)
        if smoothed and self.smoothing > 0.0:
            eps2 = self.smoothing ** 2

            def sn(s2):
                return np.sqrt(s2 + eps2) - self.smoothing

        else:

            def sn(s2):
                return np.sqrt(s2)

        return (
            self.alpha[i] * sn(nn + hh + cc)
            + self.beta[i] * sn(cc)
            + self.gamma[i] * sn(hh)
        )

    def psi_vector(self, i, xi, smoothed=False):
        """Density on a flat length-15 interface vector."""
        xi = np.asarray(xi, dtype=float)
        n, h, c = xi[..., :3], xi[..., 3:12], xi[..., 12:]
        return self.psi(i, n, h.reshape(h.shape[:-1] + (3, 3)), c, smoothed=smoothed)


@dataclasses.dataclass
class MaterialModel:
    """Bulk and interface densities of one simulated alloy."""

    bulk: BulkDensity
    interface: InterfaceDensity

    def __post_init__(self):
        if self.bulk.num_phases != self.interface.num_phases:
            raise ValueError("bulk and interface phase counts differ")

    @property
    def num_phases(self):
        return self.bulk.num_phases


# ----------------------------------------------------------------------
# Interface geometry on faces

_TRACE_TOL = 1e-10


def _face_tangent_basis(mesh, face_ids):
    """Dual edge vectors w1, w2 of each face: F_S = (edge matrix) @ [w1, w2]^T."""
    tri = mesh.iface_nodes[face_ids]
    x = mesh.nodes
    e1 = x[tri[:, 1]] - x[tri[:, 0]]
    e2 = x[tri[:, 2]] - x[tri[:, 0]]
    g11 = np.einsum("fi,fi->f", e1, e1)
    g12 = np.einsum("fi,fi->f", e1, e2)
    g22 = np.einsum("fi,fi->f", e2, e2)
    gdet = g11 * g22 - g12 * g12
    w1 = (g22[:, None] * e1 - g12[:, None] * e2) / gdet[:, None]
    w2 = (g11[:, None] * e2 - g12[:, None] * e1) / gdet[:, None]
    return tri, w1, w2


def _face_surface_gradients(mesh, y, face_ids, check=True):
    """Tangential deformation gradient on interior faces.

    Computed from the face nodes themselves, then cross-checked against
    the tangential projections of the two element gradients, which must
    agree for a conforming piecewise-affine deformation.
    """
    pos = y.positions
    tri, w1, w2 = _face_tangent_basis(mesh, face_ids)
    d1 = pos[tri[:, 1]] - pos[tri[:, 0]]
    d2 = pos[tri[:, 2]] - pos[tri[:, 0]]
    fs = d1[:, :, None] * w1[:, None, :] + d2[:, :, None] * w2[:, None, :]
    if check:
        f_all = deformation_gradients(mesh, y)
        n = mesh.iface_normal[face_ids]
        for side in (0, 1):
            fe = f_all[mesh.iface_tets[face_ids, side]]
            proj = fe - np.einsum("fij,fj->fi", fe, n)[:, :, None] * n[:, None, :]
            scale = 1.0 + np.sqrt(np.maximum(_sqnorm(fs), _sqnorm(proj)))
            mism = np.sqrt(_sqnorm(fs - proj))
            if np.any(mism > _TRACE_TOL * scale):
                f = int(face_ids[int(np.argmax(mism - _TRACE_TOL * scale))])
                raise NonconformingDeformationError(
                    f"tangential traces disagree on interior face {f}"
                )
    return fs, tri, w1, w2


def interface_vectors(mesh, y, face_ids, check=True):
    """(n, H, c) per interior face in the stored face orientation."""
    face_ids = np.asarray(face_ids, dtype=np.int64)
    fs, _, _, _ = _face_surface_gradients(mesh, y, face_ids, check=check)
    n = mesh.iface_normal[face_ids]
    h = np.einsum("lij,fkl,fi->fkj", LEVI_CIVITA, fs, n, optimize=True)
    c = np.einsum("fiq,fq->fi", cof(fs), n)
    return n, h, c


def interface_energy(mesh, y, z, density, smoothed=False, boundary=None):
    """Total interfacial energy over the phase-boundary faces.

    Every face carries the sum of the densities of the two adjacent
    phases, evaluated on the shared interface vector.  By positive
    1-homogeneity this equals the total-variation formulation on the
    per-phase interface measures.
    """
    pb = boundary if boundary is not None else phase_boundary(mesh, z)
    if pb.size == 0:
        return 0.0
    n, h, c = interface_vectors(mesh, y, pb.face_ids)
    area = mesh.iface_area[pb.face_ids]
    total = 0.0
    psi = np.stack(
        [density.psi(i, n, h, c, smoothed=smoothed) for i in range(density.num_phases)],
        axis=-1,
    )
    idx = np.arange(pb.size)
    total = float(
        np.dot(area, psi[idx, pb.label_plus] + psi[idx, pb.label_minus])
    )
    return total


def interface_energy_gradient(mesh, y, z, density, boundary=None):
    """Exact nodal gradient of the smoothed interface energy.

    With smoothing = 0 the gradient exists only away from the kinks of
    the weighted norms; hitting one raises NonsmoothPointError.  The
    result is supported exactly on the nodes of phase-boundary faces.
    """
    pb = boundary if boundary is not None else phase_boundary(mesh, z)
    grad = np.zeros((mesh.num_nodes, 3))
    if pb.size == 0:
        return grad
    fs, tri, w1, w2 = _face_surface_gradients(mesh, y, pb.face_ids)
    n = mesh.iface_normal[pb.face_ids]
    area = mesh.iface_area[pb.face_ids]
    h = np.einsum("lij,fkl,fi->fkj", LEVI_CIVITA, fs, n, optimize=True)
    c = np.einsum("fiq,fq->fi", cof(fs), n)

    hh = _sqnorm(h)
    cc = np.einsum("fi,fi->f", c, c)
    nn = np.einsum("fi,fi->f", n, n)
    eps = density.smoothing
    if eps > 0.0:
        r_full = np.sqrt(nn + hh + cc + eps * eps)
        r_h = np.sqrt(hh + eps * eps)
        r_c = np.sqrt(cc + eps * eps)
    else:
        gsum = density.gamma[pb.label_plus] + density.gamma[pb.label_minus]
        bsum = density.beta[pb.label_plus] + density.beta[pb.label_minus]
        if np.any((gsum > 0.0) & (hh == 0.0)) or np.any((bsum > 0.0) & (cc == 0.0)):
            raise NonsmoothPointError(
                "unsmoothed interface density is not differentiable here"
            )
        r_full = np.sqrt(nn + hh + cc)
        r_h = np.where(hh > 0.0, np.sqrt(hh), 1.0)
        r_c = np.where(cc > 0.0, np.sqrt(cc), 1.0)

    asum = density.alpha[pb.label_plus] + density.alpha[pb.label_minus]
    bsum = density.beta[pb.label_plus] + density.beta[pb.label_minus]
    gsum = density.gamma[pb.label_plus] + density.gamma[pb.label_minus]

    x_h = (asum / r_full + gsum / r_h)[:, None, None] * h
    x_c = (asum / r_full + bsum / r_c)[:, None] * c

    kmat = np.einsum("lij,fi->flj", LEVI_CIVITA, n)
    gf = np.einsum("fkj,flj->fkl", x_h, kmat)
    gf = gf + np.einsum(
        "ikq,jlp,fi,fj,fqp->fkl", LEVI_CIVITA, LEVI_CIVITA, x_c, n, fs, optimize=True
    )
    gf = gf * area[:, None, None]

    g1 = np.einsum("fkl,fl->fk", gf, w1)
    g2 = np.einsum("fkl,fl->fk", gf, w2)
    np.add.at(grad, tri[:, 1], g1)
    np.add.at(grad, tri[:, 2], g2)
    np.add.at(grad, tri[:, 0], -(g1 + g2))
    return grad


def interface_measure_totals(mesh, y, z, phase):
    """Componentwise totals of the phase interface measures (a, H, c).

    Normals are oriented outward from the given phase region.  For a
    region compactly inside the body the boundary is closed and all three
    totals vanish, the discrete counterpart of the statement that linear
    interface densities integrate to boundary data only.
    """
    pb = phase_boundary(mesh, z)
    own = (pb.label_plus == phase) | (pb.label_minus == phase)
    ids = pb.face_ids[own]
    if len(ids) == 0:
        return np.zeros(3), np.zeros((3, 3)), np.zeros(3)
    sign = np.where(pb.label_minus[own] == phase, 1.0, -1.0)
    n, h, c = interface_vectors(mesh, y, ids)
    w = sign * mesh.iface_area[ids]
    return (
        np.einsum("f,fi->i", w, n),
        np.einsum("f,fij->ij", w, h),
        np.einsum("f,fi->i", w, c),
    )


# ----------------------------------------------------------------------
# Bulk functionals


def bulk_energy(mesh, y, z, model):
    """One-point quadrature of the per-phase densities; exact for
    piecewise-affine deformations."""
    f = deformation_gradients(mesh, y)
    bulk = model.bulk if isinstance(model, MaterialModel) else model
    w = np.empty(mesh.num_tets)
    for i in range(bulk.num_phases):
        idx = z.labels == i
        if np.any(idx):
            w[idx] = bulk.density(f[idx], i)
    if np.any(np.isinf(w)):
        return INFINITE_ENERGY
    return float(np.dot(mesh.volumes, w))


def bulk_density_field(mesh, y, z, model):
    """Per-element density values (INFINITE_ENERGY where det F <= 0)."""
    f = deformation_gradients(mesh, y)
    bulk = model.bulk if isinstance(model, MaterialModel) else model
    w = np.empty(mesh.num_tets)
    for i in range(bulk.num_phases):
        idx = z.labels == i
        if np.any(idx):
            w[idx] = bulk.density(f[idx], i)
    return w


def bulk_energy_gradient(mesh, y, z, model):
    """Exact gradient of bulk_energy with respect to nodal positions."""
    f = deformation_gradients(mesh, y)
    dets = det(f)
    if np.any(dets <= 0.0):
        bad = int(np.argmax(dets <= 0.0))
        raise InadmissibleStateError(f"element {bad} has non-positive determinant")
    bulk = model.bulk if isinstance(model, MaterialModel) else model
    stress = np.empty((mesh.num_tets, 3, 3))
    for i in range(bulk.num_phases):
        idx = z.labels == i
        if np.any(idx):
            stress[idx] = bulk.stress(f[idx], i)
    grad_edges = mesh.volumes[:, None, None] * (
        stress @ mesh.dinv.transpose(0, 2, 1)
    )
    return _scatter_element_forces(mesh, grad_edges)


# ----------------------------------------------------------------------
# Loading


class LoadProgram:
    """Piecewise-linear-in-time external loading.

    Grid values: body force (constant over the body or per element),
    surface traction on the gamma1 region, and an affine target map for
    the elastic support on gamma0 with stiffness spring_k.
    """

    def __init__(self, times, body=None, traction=None, target_matrix=None,
                 target_offset=None, spring_k=0.0):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) < 1:
            raise ValueError("need at least one time grid point")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0.0):
            raise ValueError("time grid must start at 0 and increase strictly")
        g = len(times)
        self.times = times

        def grid(v, default, shape_tail):
            if v is None:
                arr = np.zeros((g,) + shape_tail)
                arr[:] = default
                return arr
            arr = np.asarray(v, dtype=float)
            if arr.shape[0] != g:
                raise ValueError("loading grid length mismatch")
            return arr

        if body is None:
            self.body = np.zeros((g, 3))
        else:
            self.body = np.asarray(body, dtype=float)
            if (self.body.ndim not in (2, 3) or self.body.shape[0] != g
                    or self.body.shape[-1] != 3):
                raise ValueError("body force must be (g, 3) or (g, m, 3)")
        self.traction = grid(traction, 0.0, (3,))
        eye = np.eye(3)
        self.target_matrix = grid(target_matrix, eye, (3, 3))
        self.target_offset = grid(target_offset, 0.0, (3,))
        if spring_k < 0.0:
            raise ValueError("spring stiffness must be nonnegative")
        self.spring_k = float(spring_k)

    @property
    def horizon(self):
        return float(self.times[-1])

    def _segment(self, t, side="+"):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"time {t} outside the load program range")
        if len(self.times) == 1:
            return 0, 0, 0.0
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if side == "-" and k > 0 and t <= self.times[k]:
            k -= 1
        k = min(max(k, 0), len(self.times) - 2)
        dt = self.times[k + 1] - self.times[k]
        theta = (t - self.times[k]) / dt
        return k, k + 1, float(np.clip(theta, 0.0, 1.0))

    def value(self, t):
        k0, k1, th = self._segment(t)
        lerp = lambda arr: (1.0 - th) * arr[k0] + th * arr[k1]
        return lerp(self.body), lerp(self.traction), lerp(self.target_matrix), \
            lerp(self.target_offset)

    def rate(self, t, side="+"):
        """One-sided time derivative of the grid data at t."""
        if len(self.times) == 1:
            zero = np.zeros(3)
            return np.zeros_like(self.body[0]), zero.copy(), np.zeros((3, 3)), zero.copy()
        k0, k1, _ = self._segment(t, side=side)
        dt = self.times[k1] - self.times[k0]
        diff = lambda arr: (arr[k1] - arr[k0]) / dt
        return diff(self.body), diff(self.traction), diff(self.target_matrix), \
            diff(self.target_offset)


def _body_work(mesh, pos, b):
    ymean = pos[mesh.tets].mean(axis=1)
    if b.ndim == 1:
        return float(np.dot(mesh.volumes, ymean @ b))
    return float(np.dot(mesh.volumes, np.einsum("ei,ei->e", ymean, b)))


def _traction_work(mesh, pos, s):
    idx = np.nonzero(mesh.bface_tag == GAMMA1)[0]
    if len(idx) == 0:
        return 0.0
    ymean = pos[mesh.bface_nodes[idx]].mean(axis=1)
    return float(np.dot(mesh.bface_area[idx], ymean @ s))

_MID_PAIRS = ((0, 1), (0, 2), (1, 2))


def _spring_energy(mesh, pos, amat, d, k):
    if k == 0.0:
        return 0.0
    idx = np.nonzero(mesh.bface_tag == GAMMA0)[0]
    if len(idx) == 0:
        return 0.0
    tri = mesh.bface_nodes[idx]
    area = mesh.bface_area[idx]
    total = 0.0
    # quadratic integrand: the edge-midpoint 3-point rule is exact
    for a, b in _MID_PAIRS:
        xm = 0.5 * (mesh.nodes[tri[:, a]] + mesh.nodes[tri[:, b]])
        ym = 0.5 * (pos[tri[:, a]] + pos[tri[:, b]])
        diff = ym - (xm @ amat.T + d)
        total += float(np.dot(area / 3.0, np.einsum("fi,fi->f", diff, diff)))
    return 0.5 * k * total


def loading(t, mesh, y, program):
    """(external work, spring energy) at time t."""
    b, s, amat, d = program.value(t)
    pos = y.positions
    work = _body_work(mesh, pos, b) + _traction_work(mesh, pos, s)
    return work, _spring_energy(mesh, pos, amat, d, program.spring_k)


def loading_gradient(t, mesh, y, program):
    """Nodal gradients of the external work and of the spring energy."""
    b, s, amat, d = program.value(t)
    pos = y.positions
    gw = np.zeros((mesh.num_nodes, 3))
    if b.ndim == 1:
        contrib = np.broadcast_to(b, (mesh.num_tets, 3)) * (mesh.volumes[:, None] / 4.0)
    else:
        contrib = b * (mesh.volumes[:, None] / 4.0)
    for cnr in range(4):
        np.add.at(gw, mesh.tets[:, cnr], contrib)
    idx = np.nonzero(mesh.bface_tag == GAMMA1)[0]
    if len(idx):
        tri = mesh.bface_nodes[idx]
        sc = mesh.bface_area[idx][:, None] / 3.0 * s
        for cnr in range(3):
            np.add.at(gw, tri[:, cnr], sc)

    gs = np.zeros((mesh.num_nodes, 3))
    k = program.spring_k
    if k > 0.0:
        idx = np.nonzero(mesh.bface_tag == GAMMA0)[0]
        if len(idx):
            tri = mesh.bface_nodes[idx]
            area = mesh.bface_area[idx]
            for a, bb in _MID_PAIRS:
                xm = 0.5 * (mesh.nodes[tri[:, a]] + mesh.nodes[tri[:, bb]])
                ym = 0.5 * (pos[tri[:, a]] + pos[tri[:, bb]])
                w = (k / 3.0) * area[:, None] * (ym - (xm @ amat.T + d))
                np.add.at(gs, tri[:, a], 0.5 * w)
                np.add.at(gs, tri[:, bb], 0.5 * w)
    return gw, gs


def energy_time_derivative(t, mesh, y, program, side="+"):
    """Partial time derivative of the total energy at frozen state.

    At a load grid point the value is one-sided; pick the side with the
    side argument ("+" or "-").
    """
    db, ds, damat, dd = program.rate(t, side=side)
    _, _, amat, d = program.value(t)
    pos = y.positions
    out = -_body_work(mesh, pos, db) - _traction_work(mesh, pos, ds)
    k = program.spring_k
    if k > 0.0:
        idx = np.nonzero(mesh.bface_tag == GAMMA0)[0]
        if len(idx):
            tri = mesh.bface_nodes[idx]
            area = mesh.bface_area[idx]
            acc = 0.0
            for a, b in _MID_PAIRS:
                xm = 0.5 * (mesh.nodes[tri[:, a]] + mesh.nodes[tri[:, b]])
                ym = 0.5 * (pos[tri[:, a]] + pos[tri[:, b]])
                diff = ym - (xm @ amat.T + d)
                rate = xm @ damat.T + dd
                acc += float(np.dot(area / 3.0, np.einsum("fi,fi->f", diff, rate)))
            out -= k * acc
    return out


def work_integral(t0, t1, mesh, y, program):
    """Exact integral of the frozen-state time derivative over [t0, t1].

    The integrand is piecewise linear in time, so a per-segment trapezoid
    rule with one-sided endpoint values is exact.
    """
    if t1 < t0:
        raise ValueError("empty interval")
    if t0 == t1:
        return 0.0
    cuts = [t0] + [float(tt) for tt in program.times if t0 < tt < t1] + [t1]
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        fa = energy_time_derivative(a, mesh, y, program, side="+")
        fb = energy_time_derivative(b, mesh, y, program, side="-")
        total += 0.5 * (b - a) * (fa + fb)
    return total


# ----------------------------------------------------------------------
# Assembly


class EnergyParts(NamedTuple):
    bulk: float
    interface: float
    external_work: float
    spring: float
    total: float


def energy_breakdown(t, mesh, y, z, model, program, smoothed=False, boundary=None):
    eb = bulk_energy(mesh, y, z, model)
    ei = interface_energy(mesh, y, z, model.interface, smoothed=smoothed,
                          boundary=boundary)
    work, spring = loading(t, mesh, y, program)
    return EnergyParts(eb, ei, work, spring, eb + ei - work + spring)


def total_energy(t, mesh, y, z, model, program, smoothed=False, boundary=None):
    """Bulk + interface - external work + spring support."""
    return energy_breakdown(t, mesh, y, z, model, program, smoothed=smoothed,
                            boundary=boundary).total


def total_energy_gradient(t, mesh, y, z, model, program, boundary=None):
    g = bulk_energy_gradient(mesh, y, z, model)
    g += interface_energy_gradient(mesh, y, z, model.interface, boundary=boundary)
    gw, gs = loading_gradient(t, mesh, y, program)
    return g - gw + gs


# ----------------------------------------------------------------------
# Discrete divergence-theorem identities


def gauss_identity_check(mesh, y, region, v):
    """Residuals of the two boundary-representation identities on a region.

    region selects elements (bool mask or index list); v is a nodal test
    field, required to vanish where the region boundary meets the outer
    boundary.  Returns (curl residual, cofactor residual):

        | sum_e vol grad(y) curl(v)  -  sum_f area (grad(y) x n) v_mean |
        | sum_e vol cof(grad y):grad(v) - sum_f area cof(grad y) n . v_mean |

    Both vanish to rounding for piecewise-affine y and v because the
    elementwise divergence theorem is exact and tangential traces match
    across interior faces.
    """
    region = np.asarray(region)
    mask = np.zeros(mesh.num_tets, dtype=bool)
    if region.dtype == bool:
        mask[:] = region
    else:
        mask[region] = True
    v = np.asarray(v, dtype=float)
    if v.shape != (mesh.num_nodes, 3):
        raise ValueError("test field must be nodal, shape (n, 3)")

    f = deformation_gradients(mesh, y)
    gv = field_gradients(mesh, v)
    curl = np.einsum("jlm,eml->ej", LEVI_CIVITA, gv)
    vol1 = np.einsum("e,ekj,ej->k", mesh.volumes[mask], f[mask], curl[mask])
    vol2 = float(np.dot(mesh.volumes[mask], np.einsum("eij,eij->e", cof(f[mask]), gv[mask])))

    face1 = np.zeros(3)
    face2 = 0.0

    # interior faces crossed by the region boundary
    lo, hi = mesh.iface_tets[:, 0], mesh.iface_tets[:, 1]
    crossed = np.nonzero(mask[lo] != mask[hi])[0]
    for fid in crossed:
        inside = lo[fid] if mask[lo[fid]] else hi[fid]
        sign = 1.0 if mask[lo[fid]] else -1.0
        n = sign * mesh.iface_normal[fid]
        area = mesh.iface_area[fid]
        vbar = v[mesh.iface_nodes[fid]].mean(axis=0)
        hmat = np.einsum("lij,kl,i->kj", LEVI_CIVITA, f[inside], n)
        face1 += area * (hmat @ vbar)
        face2 += area * float(np.dot(cof(f[inside]) @ n, vbar))

    # outer-boundary faces of region elements
    outer = np.nonzero(mask[mesh.bface_tet])[0]
    if len(outer):
        vmax = np.abs(v).max()
        vb = np.abs(v[mesh.bface_nodes[outer]]).max()
        if vb > 1e-14 * (1.0 + vmax):
            raise ValueError(
                "test field must vanish on the outer boundary of the region"
            )
        for fid in outer:
            inside = mesh.bface_tet[fid]
            n = mesh.bface_normal[fid]
            area = mesh.bface_area[fid]
            vbar = v[mesh.bface_nodes[fid]].mean(axis=0)
            hmat = np.einsum("lij,kl,i->kj", LEVI_CIVITA, f[inside], n)
            face1 += area * (hmat @ vbar)
            face2 += area * float(np.dot(cof(f[inside]) @ n, vbar))

    return float(np.linalg.norm(vol1 - face1)), abs(vol2 - face2)
