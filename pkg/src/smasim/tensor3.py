"""Small dense 3x3 tensor kernels used by the energy and geometry code.

Every kernel broadcasts over leading axes, so a single matrix of shape
(3, 3) and a stack of shape (n, 3, 3) share one code path.  The cofactor
family is written as Levi-Civita contractions so that the energies and
their analytic derivatives stay algebraically consistent.
"""

import numpy as np

__all__ = [
    "LEVI_CIVITA",
    "det",
    "cof",
    "cross_tensor",
    "cof_derivative",
    "surface_projection",
    "tangent_frame",
    "area_normal",
]


def _build_levi_civita():
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    return eps


LEVI_CIVITA = _build_levi_civita()
LEVI_CIVITA.setflags(write=False)

_UNIT_TOL = 1e-12


def det(a):
    """Determinant by first-row expansion; signs of exact inputs are exact."""
    a = np.asarray(a, dtype=float)
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def cof(a):
    """Cofactor matrix, 0.5 eps_ikl eps_jpq a_kp a_lq.

    Satisfies cof(A)^T A = det(A) Id and cof(AB) = cof(A) cof(B).
    """
    a = np.asarray(a, dtype=float)
    return 0.5 * np.einsum(
        "ikl,jpq,...kp,...lq->...ij", LEVI_CIVITA, LEVI_CIVITA, a, a, optimize=True
    )


def cross_tensor(a, n):
    """The tensor M with M b = A (n x b) for every b; M_kj = eps_lij a_kl n_i."""
    return np.einsum(
        "lij,...kl,...i->...kj",
        LEVI_CIVITA,
        np.asarray(a, dtype=float),
        np.asarray(n, dtype=float),
        optimize=True,
    )


def cof_derivative(a):
    """Fourth-order array D[i,j,k,l] = d cof(A)_ij / d a_kl = eps_ikq eps_jlp a_qp."""
    return np.einsum(
        "ikq,jlp,...qp->...ijkl",
        LEVI_CIVITA,
        LEVI_CIVITA,
        np.asarray(a, dtype=float),
        optimize=True,
    )


def _require_unit(n):
    n = np.asarray(n, dtype=float)
    err = np.abs(np.einsum("...i,...i->...", n, n) - 1.0)
    # | |n|^2 - 1 | <= 2e-12 allows | |n| - 1 | <= 1e-12 for n near unit.
    if np.any(err > 2.0 * _UNIT_TOL):
        raise ValueError("normal is not a unit vector within 1e-12")
    return n


def surface_projection(f, n):
    """Tangential part F (Id - n otimes n); the result annihilates n."""
    n = _require_unit(n)
    f = np.asarray(f, dtype=float)
    fn = np.einsum("...ij,...j->...i", f, n)
    return f - fn[..., :, None] * n[..., None, :]


def tangent_frame(n):
    """Right-handed orthonormal tangent pair (t1, t2) with t1 x t2 = n.

    t1 is the normalized tangential projection of the coordinate axis least
    aligned with n; ties break toward the lower axis index.
    """
    n = _require_unit(n)
    axis = np.argmin(np.abs(n), axis=-1)
    seed = np.zeros(n.shape)
    np.put_along_axis(seed, np.expand_dims(axis, axis=-1), 1.0, axis=-1)
    t1 = seed - np.einsum("...i,...i->...", seed, n)[..., None] * n
    t1 = t1 / np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


def area_normal(f_s, n):
    """Deformed oriented-area vector (F_S t1) x (F_S t2) of a unit tangent patch.

    Requires F_S n = 0.  Equals cof(F_S) n and is independent of the choice
    of right-handed tangent frame.
    """
    n = _require_unit(n)
    f_s = np.asarray(f_s, dtype=float)
    resid = np.linalg.norm(np.einsum("...ij,...j->...i", f_s, n), axis=-1)
    scale = 1.0 + np.linalg.norm(f_s, axis=(-2, -1))
    if np.any(resid > 1e-10 * scale):
        raise ValueError("map is not tangential: F_S n != 0")
    t1, t2 = tangent_frame(n)
    return np.cross(
        np.einsum("...ij,...j->...i", f_s, t1),
        np.einsum("...ij,...j->...i", f_s, t2),
    )
