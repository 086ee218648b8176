import math

import numpy as np
import pytest

from smasim.energy import (
    INFINITE_ENERGY,
    BulkDensity,
    Deformation,
    InterfaceDensity,
    InterfaceVector,
    LoadProgram,
    MaterialModel,
    bulk_energy,
    energy_breakdown,
    energy_time_derivative,
    interface_energy,
    loading,
    total_energy,
    work_integral,
)
from smasim.mesh import PhaseField, build_box_mesh

from util import (
    WELL_1,
    cube_mesh,
    half_split_field,
    random_rotation,
    two_phase_bulk,
    two_phase_interface,
    two_phase_model,
)


def scalar_density_oracle(f, a, b, gamma, delta, offset, p=4.0, q=2.0):
    """Direct per-term evaluation used to pin the bulk values."""
    f = np.asarray(f, dtype=float)
    cof = np.linalg.det(f) * np.linalg.inv(f).T
    d = np.linalg.det(f)
    return (
        a * np.linalg.norm(f) ** p
        + b * np.linalg.norm(cof) ** q
        + gamma * (d - 1.0) ** 2
        - delta * math.log(d)
        + offset
    )


# ----------------------------------------------------------------------
# Bulk


def test_calibrated_wells_have_zero_energy(cube48):
    model = two_phase_model()
    y = Deformation.identity(cube48)
    z0 = PhaseField.uniform(cube48, 0, 2)
    assert bulk_energy(cube48, y, z0, model) == pytest.approx(0.0, abs=1e-14)
    y1 = Deformation.affine(cube48, WELL_1)
    z1 = PhaseField.uniform(cube48, 1, 2)
    assert bulk_energy(cube48, y1, z1, model) == pytest.approx(0.0, abs=1e-12)


def test_bulk_energy_matches_scalar_oracle(cube48):
    bulk = two_phase_bulk()
    model = MaterialModel(bulk, two_phase_interface())
    y = Deformation.affine(cube48, 2.0 * np.eye(3))
    z = PhaseField.uniform(cube48, 0, 2)
    expected = scalar_density_oracle(
        2.0 * np.eye(3), 1.0, 1.0, 10.0, bulk.delta[0], bulk.offsets[0]
    )
    # unit total volume makes the energy equal the density
    assert bulk_energy(cube48, y, z, model) == pytest.approx(expected, rel=1e-12)


def test_bulk_energy_infinite_for_inverted_state(cube48):
    model = two_phase_model()
    pos = cube48.nodes.copy()
    pos[:, 0] *= -1.0
    z = PhaseField.uniform(cube48, 0, 2)
    assert bulk_energy(cube48, Deformation(pos), z, model) == INFINITE_ENERGY
    assert math.isinf(INFINITE_ENERGY)
    assert 1e300 < INFINITE_ENERGY


def test_frame_indifference_100_rotations(rng):
    bulk = two_phase_bulk(kappa=(0.1, 0.05))
    f = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    while np.linalg.det(f) <= 0.05:
        f = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    for i in range(2):
        base = float(bulk.density(f, i))
        for _ in range(50):
            r = random_rotation(rng)
            rotated = float(bulk.density(r @ f, i))
            assert abs(rotated - base) <= 1e-10 * (1.0 + abs(base))


def test_determinant_blowup_monotone():
    bulk = two_phase_bulk()
    values = [float(bulk.density(np.diag([1.0, 1.0, 1.0 / n]), 0))
              for n in (10.0, 100.0, 1000.0)]
    assert values[0] < values[1] < values[2]
    assert values[2] > 1e2


def test_bulk_coercivity_floor(rng):
    bulk = two_phase_bulk()
    for i in range(2):
        lead, offset = bulk.coercivity_constants(i)
        assert lead > 0.0
        for _ in range(200):
            f = rng.standard_normal((3, 3)) * rng.uniform(0.2, 4.0)
            if np.linalg.det(f) <= 0.0:
                continue
            w = float(bulk.density(f, i))
            floor = lead * np.linalg.norm(f) ** 4 - offset
            assert w >= floor - 1e-9 * (1.0 + abs(w))


def test_balanced_delta_makes_well_stationary():
    bulk = two_phase_bulk()
    for i, well in enumerate(bulk.wells):
        g = bulk.stress(well, i)
        assert np.abs(g).max() <= 1e-12


def test_bulk_density_validation():
    wells = np.stack([np.eye(3), WELL_1])
    with pytest.raises(ValueError, match="positive definite"):
        BulkDensity(np.stack([np.eye(3), -np.eye(3)]), 1, 1, 1, 1)
    with pytest.raises(ValueError, match="exceed 3"):
        BulkDensity(wells, 1, 1, 1, 1, p=2.0)
    with pytest.raises(ValueError, match="nonnegative"):
        BulkDensity(wells, a=-1.0, b=1, gamma=1, delta=1)
    skewed = np.eye(3)
    skewed = skewed.copy()
    skewed[0, 1] = 0.2
    with pytest.raises(ValueError, match="symmetric"):
        BulkDensity(np.stack([np.eye(3), skewed]), 1, 1, 1, 1)


# ----------------------------------------------------------------------
# Interface densities


def test_interface_energy_uniform_phase_is_zero(cube48):
    model = two_phase_model()
    y = Deformation.identity(cube48)
    z = PhaseField.uniform(cube48, 1, 2)
    assert interface_energy(cube48, y, z, model.interface) == 0.0


def test_interface_energy_half_split_hand_value(cube48):
    # identity deformation, unit normal e1: |xi|^2 = 1 + 2 + 1, both phases
    # charge |xi| = 2, cut area 1 => energy 4
    density = InterfaceDensity(alpha=[1.0, 1.0], smoothing=0.0)
    y = Deformation.identity(cube48)
    z = half_split_field(cube48)
    assert interface_energy(cube48, y, z, density) == pytest.approx(4.0, rel=1e-13)


def test_interface_vector_flat_order():
    iv = InterfaceVector(
        n=np.array([1.0, 0, 0]),
        H=np.arange(9.0).reshape(3, 3),
        c=np.array([2.0, 3.0, 4.0]),
    )
    flat = iv.flat()
    assert flat.shape == (15,)
    assert np.array_equal(flat[:3], [1.0, 0, 0])
    assert np.array_equal(flat[3:12], np.arange(9.0))
    assert np.array_equal(flat[12:], [2.0, 3.0, 4.0])


def test_interface_scaling_matches_pointwise_density(cube48):
    # replacing y by lam*y scales H by lam and c by lam^2; the energy must
    # equal the pointwise density of the scaled vector
    density = InterfaceDensity(alpha=[1.0, 1.0], smoothing=0.0)
    z = half_split_field(cube48)
    for lam in (0.5, 2.0):
        y = Deformation(lam * cube48.nodes)
        val = interface_energy(cube48, y, z, density)
        h2 = 2.0 * lam ** 2
        c2 = lam ** 4
        expected = 2.0 * math.sqrt(1.0 + h2 + c2)  # two phases, area 1
        assert val == pytest.approx(expected, rel=1e-12)


def test_psi_positive_homogeneity_and_floor(rng):
    density = InterfaceDensity(alpha=[0.7, 0.3], beta=[0.2, 0.1],
                               gamma=[0.1, 0.4], smoothing=0.0)
    for _ in range(50):
        xi = rng.standard_normal(15)
        for i in range(2):
            base = float(density.psi_vector(i, xi))
            for t in (0.5, 2.0, 10.0):
                scaled = float(density.psi_vector(i, t * xi))
                assert scaled == pytest.approx(t * base, rel=1e-12)
            assert base >= density.alpha[i] * np.linalg.norm(xi)


def test_psi_evenness_exact(rng):
    density = InterfaceDensity(alpha=[0.7, 0.3], beta=[0.2, 0.1],
                               gamma=[0.1, 0.4], smoothing=0.0)
    for _ in range(20):
        xi = rng.standard_normal(15)
        for i in range(2):
            assert float(density.psi_vector(i, -xi)) == float(density.psi_vector(i, xi))


def test_interface_frame_indifference(rng):
    # rotations act on the H and c parts only
    density = InterfaceDensity(alpha=[0.7, 0.3], beta=[0.2, 0.1],
                               gamma=[0.1, 0.4], smoothing=0.0)
    n = rng.standard_normal(3)
    n /= np.linalg.norm(n)
    h = rng.standard_normal((3, 3))
    c = rng.standard_normal(3)
    for i in range(2):
        base = float(density.psi(i, n, h, c))
        for _ in range(50):
            r = random_rotation(rng)
            rot = float(density.psi(i, n, r @ h, r @ c))
            assert abs(rot - base) <= 1e-10 * (1.0 + abs(base))


def test_interface_density_validation():
    with pytest.raises(ValueError, match="alpha"):
        InterfaceDensity(alpha=[0.0, 1.0])
    with pytest.raises(ValueError, match="nonnegative"):
        InterfaceDensity(alpha=[1.0, 1.0], beta=-0.1)


# ----------------------------------------------------------------------
# Loading


def test_loading_zero_program(cube48):
    prog = LoadProgram([0.0, 1.0])
    y = Deformation.identity(cube48)
    w, s = loading(0.5, cube48, y, prog)
    assert w == 0.0 and s == 0.0


def test_spring_vanishes_on_matching_target(cube48):
    amat = np.diag([1.1, 0.9, 1.0])
    prog = LoadProgram([0.0, 1.0], target_matrix=[amat, amat],
                       target_offset=[[0.1, 0.0, 0.0]] * 2, spring_k=3.0)
    y = Deformation.affine(cube48, amat, [0.1, 0.0, 0.0])
    _, s = loading(0.3, cube48, y, prog)
    assert s == pytest.approx(0.0, abs=1e-26)


def test_body_work_exact_integral(cube48):
    # b = e3 against identity: integral of x3 over the unit cube is 1/2
    prog = LoadProgram([0.0, 1.0], body=[[0.0, 0.0, 1.0]] * 2)
    y = Deformation.identity(cube48)
    w, _ = loading(0.0, cube48, y, prog)
    assert w == pytest.approx(0.5, rel=1e-14)


def test_traction_work_exact_integral(cube48):
    # s = e1 on the x+ face of the unit cube: integral of y1 = 1 * area
    prog = LoadProgram([0.0, 1.0], traction=[[1.0, 0.0, 0.0]] * 2)
    y = Deformation.identity(cube48)
    w, _ = loading(0.0, cube48, y, prog)
    assert w == pytest.approx(1.0, rel=1e-14)


def test_loading_rejects_out_of_range_time(cube48):
    prog = LoadProgram([0.0, 1.0])
    with pytest.raises(ValueError):
        loading(1.5, cube48, Deformation.identity(cube48), prog)


def test_time_derivative_constant_loads_zero(cube48):
    prog = LoadProgram([0.0, 1.0], body=[[0.0, 0.0, 1.0]] * 2, spring_k=2.0)
    y = Deformation.identity(cube48)
    assert energy_time_derivative(0.5, cube48, y, prog) == pytest.approx(0.0, abs=1e-15)


def test_time_derivative_body_ramp(cube48):
    # b(t) = t e3 against identity: d/dt(-W) = -1/2
    prog = LoadProgram([0.0, 1.0], body=[[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    y = Deformation.identity(cube48)
    assert energy_time_derivative(0.4, cube48, y, prog) == pytest.approx(-0.5, rel=1e-14)


def test_time_derivative_matches_finite_difference(cube48, rng):
    prog = LoadProgram(
        [0.0, 1.0],
        traction=[[0.0, 0.0, 0.0], [1.0, 0.5, -0.2]],
        spring_k=0.0,
    )
    pos = cube48.nodes + 0.05 * rng.standard_normal(cube48.nodes.shape)
    y = Deformation(pos)

    def energy_at(t):
        w, s = loading(t, cube48, y, prog)
        return -w + s

    t0, h = 0.37, 1e-7
    fd = (energy_at(t0 + h) - energy_at(t0 - h)) / (2 * h)
    assert energy_time_derivative(t0, cube48, y, prog) == pytest.approx(fd, rel=1e-8)


def test_work_integral_exact_for_piecewise_linear(cube48, rng):
    prog = LoadProgram(
        [0.0, 0.5, 1.0],
        body=[[0, 0, 0], [0, 0, 2.0], [0, 0, -1.0]],
        target_matrix=[np.eye(3), np.diag([1.1, 1.0, 1.0]), np.diag([1.3, 1.0, 1.0])],
        spring_k=4.0,
    )
    y = Deformation(cube48.nodes + 0.03 * rng.standard_normal(cube48.nodes.shape))

    # fundamental-theorem oracle through the independent loading() path:
    # the integral of the frozen-state time derivative telescopes exactly
    def tilde_e(t):
        w, s = loading(t, cube48, y, prog)
        return -w + s

    for a, b in ((0.2, 0.9), (0.0, 1.0), (0.2, 0.45), (0.5, 0.5)):
        exact = work_integral(a, b, cube48, y, prog)
        diff = tilde_e(b) - tilde_e(a)
        assert exact == pytest.approx(diff, abs=1e-13 * (1.0 + abs(diff)))


def test_one_sided_rates_at_grid_point(cube48):
    prog = LoadProgram([0.0, 0.5, 1.0],
                       body=[[0, 0, 0], [0, 0, 1.0], [0, 0, 1.0]])
    y = Deformation.identity(cube48)
    left = energy_time_derivative(0.5, cube48, y, prog, side="-")
    right = energy_time_derivative(0.5, cube48, y, prog, side="+")
    assert left == pytest.approx(-1.0, rel=1e-13)
    assert right == pytest.approx(0.0, abs=1e-15)


# ----------------------------------------------------------------------
# Assembly


def test_total_energy_decomposition(cube48, rng):
    model = two_phase_model()
    prog = LoadProgram([0.0, 1.0], body=[[0, 0, 0.3]] * 2, spring_k=2.0,
                       target_matrix=[np.eye(3)] * 2)
    y = Deformation(cube48.nodes + 0.02 * rng.standard_normal(cube48.nodes.shape))
    z = half_split_field(cube48)
    parts = energy_breakdown(0.5, cube48, y, z, model, prog)
    assert parts.total == pytest.approx(
        parts.bulk + parts.interface - parts.external_work + parts.spring,
        abs=1e-14 * (1 + abs(parts.total)),
    )
    assert parts.total == total_energy(0.5, cube48, y, z, model, prog)


def test_total_energy_zero_at_rest(cube48):
    model = two_phase_model()
    prog = LoadProgram([0.0, 1.0])
    y = Deformation.identity(cube48)
    z = PhaseField.uniform(cube48, 0, 2)
    assert total_energy(0.0, cube48, y, z, model, prog) == pytest.approx(0.0, abs=1e-13)


def test_spring_term_monotone_in_stiffness(cube48):
    model = two_phase_model()
    z = PhaseField.uniform(cube48, 0, 2)
    # deformation that actually deviates from the target on the support
    y = Deformation.affine(cube48, np.eye(3), [0.1, 0.0, 0.0])
    totals = []
    for k in (1.0, 5.0, 25.0):
        prog = LoadProgram([0.0, 1.0], spring_k=k)
        totals.append(total_energy(0.0, cube48, y, z, model, prog))
    assert totals[0] < totals[1] < totals[2]
