import numpy as np
import pytest

from smasim import tensor3 as t3

from util import random_rotation


def laplace_det(a):
    """Independent determinant oracle by recursive first-row expansion."""
    a = np.asarray(a, dtype=float)
    if a.shape == (1, 1):
        return a[0, 0]
    total = 0.0
    for j in range(a.shape[1]):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += (-1.0) ** j * a[0, j] * laplace_det(minor)
    return total


def minor_cof(a):
    """Independent cofactor oracle from signed 2x2 minors."""
    a = np.asarray(a, dtype=float)
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            out[i, j] = (-1.0) ** (i + j) * laplace_det(minor)
    return out


def test_det_identity_and_diagonal():
    assert t3.det(np.eye(3)) == 1.0
    d = np.diag([1.0, 2.0, 3.0])
    assert laplace_det(d) == 6.0
    assert t3.det(d) == 6.0


def test_det_equal_rows_is_zero():
    a = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [4.0, -1.0, 0.5]])
    assert t3.det(a) == 0.0


def test_det_matches_laplace_oracle(rng):
    for _ in range(50):
        a = rng.standard_normal((3, 3))
        assert t3.det(a) == pytest.approx(laplace_det(a), rel=1e-13, abs=1e-13)


def test_cof_identity_diagonal_and_rotation(rng):
    assert np.array_equal(t3.cof(np.eye(3)), np.eye(3))
    d = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(minor_cof(d), np.diag([6.0, 3.0, 2.0]), atol=0.0)
    assert np.allclose(t3.cof(d), np.diag([6.0, 3.0, 2.0]), atol=1e-15)
    for _ in range(20):
        r = random_rotation(rng)
        assert np.allclose(t3.cof(r), r, atol=1e-13)


def test_cof_matches_minor_oracle(rng):
    for _ in range(100):
        a = rng.standard_normal((3, 3)) * rng.uniform(0.1, 10.0)
        assert np.allclose(t3.cof(a), minor_cof(a), rtol=1e-12, atol=1e-12)


def test_cof_transpose_identity_1000(rng):
    for _ in range(1000):
        a = rng.standard_normal((3, 3)) * rng.uniform(0.1, 5.0)
        lhs = t3.cof(a).T @ a
        rhs = t3.det(a) * np.eye(3)
        scale = 1.0 + float((a * a).sum())
        assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_det_and_cof_multiplicative(rng):
    for _ in range(200):
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))
        assert t3.det(a @ b) == pytest.approx(t3.det(a) * t3.det(b), rel=1e-11,
                                              abs=1e-12)
        lhs = t3.cof(a @ b)
        rhs = t3.cof(a) @ t3.cof(b)
        assert np.abs(lhs - rhs).max() <= 1e-11 * (1.0 + np.abs(rhs).max())


def test_cross_tensor_basic_cases():
    e1, e2, e3 = np.eye(3)
    m = t3.cross_tensor(np.eye(3), e3)
    assert np.allclose(m @ e1, e2, atol=1e-15)
    assert np.array_equal(t3.cross_tensor(np.eye(3), np.zeros(3)), np.zeros((3, 3)))


def test_cross_tensor_defining_identity(rng):
    for _ in range(100):
        a = rng.standard_normal((3, 3))
        n = rng.standard_normal(3)
        b = rng.standard_normal(3)
        m = t3.cross_tensor(a, n)
        assert np.allclose(m @ b, a @ np.cross(n, b), rtol=1e-12, atol=1e-13)


def test_cross_tensor_bilinear_and_odd(rng):
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    n = rng.standard_normal(3)
    k = rng.standard_normal(3)
    assert np.allclose(
        t3.cross_tensor(2.0 * a + b, n),
        2.0 * t3.cross_tensor(a, n) + t3.cross_tensor(b, n), atol=1e-13,
    )
    assert np.allclose(
        t3.cross_tensor(a, n + 0.5 * k),
        t3.cross_tensor(a, n) + 0.5 * t3.cross_tensor(a, k), atol=1e-13,
    )
    assert np.array_equal(t3.cross_tensor(a, -n), -t3.cross_tensor(a, n))


def fd_cof_derivative(a, h=1e-5):
    """Central finite-difference oracle for the cofactor derivative."""
    out = np.empty((3, 3, 3, 3))
    for k in range(3):
        for l in range(3):
            da = np.zeros((3, 3))
            da[k, l] = h
            out[:, :, k, l] = (t3.cof(a + da) - t3.cof(a - da)) / (2.0 * h)
    return out


def test_cof_derivative_zero_and_identity():
    assert np.array_equal(t3.cof_derivative(np.zeros((3, 3))), np.zeros((3,) * 4))
    d = t3.cof_derivative(np.eye(3))
    eye = np.eye(3)
    ref = np.einsum("ij,kl->ijkl", eye, eye) - np.einsum("il,jk->ijkl", eye, eye)
    assert np.allclose(d, fd_cof_derivative(np.eye(3)), rtol=1e-6, atol=1e-9)
    assert np.array_equal(d, ref)


def test_cof_derivative_matches_finite_differences(rng):
    for _ in range(50):
        a = rng.standard_normal((3, 3))
        d = t3.cof_derivative(a)
        fd = fd_cof_derivative(a)
        denom = 1.0 + np.abs(fd).max()
        assert np.abs(d - fd).max() / denom <= 1e-6


def test_cof_derivative_directional_contraction(rng):
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    d = t3.cof_derivative(a)
    applied = np.einsum("ijkl,kl->ij", d, b)
    for h in (1e-4, 1e-5):
        fd = (t3.cof(a + h * b) - t3.cof(a - h * b)) / (2.0 * h)
        assert np.abs(applied - fd).max() <= 1e-8 * (1.0 + np.abs(fd).max())


def test_surface_projection_cases(rng):
    e3 = np.array([0.0, 0.0, 1.0])
    assert np.allclose(
        t3.surface_projection(np.eye(3), e3),
        np.eye(3) - np.outer(e3, e3), atol=0.0,
    )
    for _ in range(50):
        f = rng.standard_normal((3, 3))
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        p = t3.surface_projection(f, n)
        assert np.linalg.norm(p @ n) <= 1e-14 * (1.0 + np.abs(f).max())
        t = np.cross(n, rng.standard_normal(3))
        assert np.allclose(p @ t, f @ t, rtol=1e-12, atol=1e-13)


def test_surface_projection_rejects_non_unit():
    with pytest.raises(ValueError):
        t3.surface_projection(np.eye(3), np.array([0.0, 0.0, 2.0]))


def test_area_normal_identity_and_scaling():
    e3 = np.array([0.0, 0.0, 1.0])
    p = np.eye(3) - np.outer(e3, e3)
    assert np.allclose(t3.area_normal(p, e3), e3, atol=1e-15)
    for s in (0.5, 2.0, 3.0):
        assert np.allclose(t3.area_normal(s * p, e3), s * s * e3, atol=1e-13)


def test_area_normal_equals_cofactor_action(rng):
    for _ in range(100):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        f = t3.surface_projection(rng.standard_normal((3, 3)), n)
        lhs = t3.area_normal(f, n)
        rhs = t3.cof(f) @ n
        assert np.abs(lhs - rhs).max() <= 1e-12 * (1.0 + np.abs(rhs).max())


def test_area_normal_frame_independent(rng):
    for _ in range(50):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        f = t3.surface_projection(rng.standard_normal((3, 3)), n)
        # random right-handed orthonormal frame in the tangent plane
        raw = np.cross(n, rng.standard_normal(3))
        t1 = raw / np.linalg.norm(raw)
        t2 = np.cross(n, t1)
        manual = np.cross(f @ t1, f @ t2)
        assert np.abs(manual - t3.area_normal(f, n)).max() <= 1e-12 * (
            1.0 + np.abs(manual).max()
        )


def test_area_normal_rejects_non_tangential():
    e3 = np.array([0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        t3.area_normal(np.eye(3), e3)
