"""Low-level engine: conservation laws, equivariance, field response,
spin/charge sensitivity, and the documented failure modes."""

import numpy as np
import pytest

from qmmnet import scf, so3
from qmmnet.constants import ANGSTROM_TO_BOHR, HARTREE_TO_EV
from qmmnet.errors import (
    InsufficientOrbitals,
    InvariantViolation,
    ScfNotConverged,
    UnsupportedEnvironment,
)

import helpers


CASES = [
    # (atomic numbers, angstrom coords, charge, multiplicity)
    (helpers.WATER_Z, helpers.WATER_ANG, 0, 1),
    (helpers.WATER_Z, helpers.WATER_ANG, 1, 2),
    (helpers.WATER_Z, helpers.WATER_ANG, -1, 2),
    (helpers.AMMONIA_Z, helpers.AMMONIA_ANG, 0, 1),
    (helpers.AMMONIA_Z, helpers.AMMONIA_ANG, 1, 2),
    ((8, 1), np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.97]]), 0, 2),
    ((8, 1), np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.97]]), -1, 1),
    ((6, 1, 1), np.array([[0.0, 0.0, 0.0], [0.98, 0.0, 0.37], [-0.98, 0.0, 0.37]]), 0, 3),
]


def _system(numbers, ang, charge, mult, **kw):
    return scf.MolecularSystem(
        numbers, np.asarray(ang) * ANGSTROM_TO_BOHR, charge=charge,
        multiplicity=mult, **kw,
    )


@pytest.fixture(scope="module")
def converged_cases():
    out = []
    for numbers, ang, charge, mult in CASES:
        system = _system(numbers, ang, charge, mult)
        qmms, result = scf.run_scf(system)
        out.append((system, qmms, result))
    return out


def test_electron_count(converged_cases):
    for system, qmms, _res in converged_cases:
        n = np.trace(qmms.p_total @ qmms.overlap)
        assert abs(n - system.n_electrons) < 1e-8


def test_spin_count(converged_cases):
    for system, qmms, _res in converged_cases:
        s2 = np.trace((qmms.p_alpha - qmms.p_beta) @ qmms.overlap)
        assert abs(s2 - system.two_s) < 1e-8


def test_closed_shell_reduction(converged_cases):
    for system, qmms, _res in converged_cases:
        if system.multiplicity == 1:
            assert np.abs(qmms.f_alpha - qmms.f_beta).max() == 0.0
            assert np.abs(qmms.p_alpha - qmms.p_beta).max() == 0.0


def test_open_shell_fock_differs(converged_cases):
    for system, qmms, _res in converged_cases:
        if system.multiplicity > 1:
            assert np.abs(qmms.f_alpha - qmms.f_beta).max() > 1e-6


def test_energy_decreases_after_damping(converged_cases):
    for _system, _qmms, result in converged_cases:
        hist = result.energy_history
        tail = hist[3:]
        assert np.all(np.diff(tail) < 1e-9)


def test_mulliken_charges_sum(converged_cases):
    for system, _qmms, result in converged_cases:
        assert result.mulliken_charges.sum() == pytest.approx(system.charge, abs=1e-8)


def test_water_polarity(converged_cases):
    system, _qmms, result = converged_cases[0]
    assert result.mulliken_charges[0] < -0.05  # oxygen negative
    assert all(q > 0 for q in result.mulliken_charges[1:])


def test_rotation_equivariance(rng):
    system = helpers.water_system()
    for _ in range(3):
        report = scf.rotate_system_check(system, so3.random_rotation(rng))
        assert report["max_deviation"] < 1e-8


def test_translation_invariance():
    system = helpers.water_system()
    qmms, result = scf.run_scf(system)
    shifted, result_t = scf.run_scf(system.translated([1.7, -0.3, 2.4]))
    assert result_t.energy == pytest.approx(result.energy, abs=1e-9)
    # spectra of S and F are translation invariant
    for name in ("overlap", "f_alpha"):
        w1 = np.linalg.eigvalsh(qmms.matrices()[name])
        w2 = np.linalg.eigvalsh(shifted.matrices()[name])
        assert np.abs(w1 - w2).max() < 1e-8


def test_field_shifts_energy():
    field = np.array([0.0, 0.0, 0.005])
    _q0, r0 = scf.run_scf(helpers.water_system())
    _q1, r1 = scf.run_scf(helpers.water_system(field=field))
    assert abs(r1.energy - r0.energy) > 1e-6


def test_field_linear_response():
    """dE/df at f=0 equals -(electronic + nuclear dipole) from the density."""
    from qmmnet import basis as basis_mod

    system = helpers.water_system()
    qmms, _res = scf.run_scf(system, density_tol=1e-12)
    layout = qmms.layout
    origin = system.charge_center()
    dip = basis_mod.dipole_integrals(layout, origin=origin)
    p = qmms.p_total
    mu_el = -np.array([np.sum(p * dip[k]) for k in range(3)])
    z = np.array(system.atomic_numbers, dtype=np.float64)
    mu_nuc = z @ (system.coordinates - origin)
    mu = mu_el + mu_nuc
    h = 1e-4
    for k in range(3):
        f = np.zeros(3)
        f[k] = h
        _qp, rp = scf.run_scf(helpers.water_system(field=f), density_tol=1e-12)
        _qm, rm = scf.run_scf(helpers.water_system(field=-f), density_tol=1e-12)
        fd = (rp.energy - rm.energy) / (2 * h)
        assert abs(fd + mu[k]) < 1e-5


def test_charge_spin_distinguish_features():
    """H2+ vs H2: the total density transposes differ by more than 0.1."""
    coords = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.74]]) * ANGSTROM_TO_BOHR
    q0, _ = scf.run_scf(scf.MolecularSystem((1, 1), coords))
    q1, _ = scf.run_scf(scf.MolecularSystem((1, 1), coords, charge=1, multiplicity=2))
    assert np.linalg.norm(q1.p_total.T - q0.p_total.T) > 0.1


def test_deterministic_rerun():
    system = helpers.water_system()
    q1, r1 = scf.run_scf(system)
    q2, r2 = scf.run_scf(system)
    assert r1.energy == r2.energy
    for name, m in q1.matrices().items():
        assert np.array_equal(m, q2.matrices()[name])


def test_dielectric_rejected():
    system = _system(*CASES[0][:2], 0, 1, dielectric=78.4)
    with pytest.raises(UnsupportedEnvironment):
        scf.run_scf(system)


def test_parity_violation_rejected():
    with pytest.raises(InvariantViolation):
        _system((1, 1), np.array([[0, 0, 0], [0, 0, 0.74]]), 0, 2)


def test_excess_multiplicity_rejected():
    with pytest.raises(InvariantViolation):
        _system((1,), np.zeros((1, 3)), 0, 4)


def test_field_cap_rejected():
    with pytest.raises(InvariantViolation):
        helpers.water_system(field=np.array([0.0, 0.0, 0.2]))


def test_insufficient_orbitals():
    system = _system((1, 1), np.array([[0, 0, 0], [0, 0, 0.74]]), -3, 2)
    with pytest.raises(InsufficientOrbitals):
        scf.run_scf(system)


def test_nonconvergence_reported():
    """CO's exactly degenerate partially filled frontier set is the engine's
    documented failure mode: it must raise, not return garbage."""
    coords = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.128]]) * ANGSTROM_TO_BOHR
    with pytest.raises(ScfNotConverged):
        scf.run_scf(scf.MolecularSystem((6, 8), coords))


def test_spin_gaps_examples():
    assert scf.spin_gaps(-10.0, -10.0, -10.0, -10.0) == (0.0, 0.0, 0.0)
    assert scf.spin_gaps(-10.0, -11.0, -10.5, -10.8) == pytest.approx(
        (1.0, 0.3, 0.5), abs=1e-12
    )


def test_perturbed_params_shift_energy():
    system = helpers.water_system()
    _q0, r0 = scf.run_scf(system)
    _q1, r1 = scf.run_scf(system, params=scf.EngineParams.perturbed())
    assert abs(r1.energy - r0.energy) * HARTREE_TO_EV > 0.1
