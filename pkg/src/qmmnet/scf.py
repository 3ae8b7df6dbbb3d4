"""Spin-polarized, charge-self-consistent extended-Hueckel SCF engine.

Produces the six quantum mechanical matrices (F-alpha, F-beta, P-alpha,
P-beta, S, H_core), the low-level total energy, and frontier orbital levels
for molecules with arbitrary charge, multiplicity, and uniform external
field.  The model is a second-order monopole (Klopman-Ohno) charge
self-consistency plus an on-site Hund spin shift on top of a
Wolfsberg-Helmholz one-electron Hamiltonian.  Energies in hartree,
lengths in bohr.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import basis as basis_mod
from . import constants as const
from .constants import as_f64
from .errors import (
    InsufficientOrbitals,
    InvariantViolation,
    ScfNotConverged,
    UnsupportedEnvironment,
)
from .so3 import wigner_d_real

ENGINE_VERSION = "hueckel-scc-1"

DENSITY_TOL = 1e-8
MAX_ITERATIONS = 200
MIXING_FACTOR = 0.3
DIIS_START = 6  # iteration index at which DIIS takes over
DIIS_HISTORY = 6
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class MolecularSystem:
    """Inputs of one SCF run: species, geometry, charge, spin, environment."""

    atomic_numbers: tuple
    coordinates: np.ndarray  # (N, 3), bohr
    charge: int = 0
    multiplicity: int = 1
    field: np.ndarray | None = None  # uniform external field, atomic units
    dielectric: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "atomic_numbers", tuple(int(z) for z in self.atomic_numbers))
        coords = as_f64(self.coordinates).reshape(len(self.atomic_numbers), 3)
        object.__setattr__(self, "coordinates", coords)
        if self.field is not None:
            f = as_f64(self.field).reshape(3)
            object.__setattr__(self, "field", f)
            if np.linalg.norm(f) > const.MAX_FIELD_AU:
                raise InvariantViolation(
                    f"|field| = {np.linalg.norm(f):.4g} au exceeds {const.MAX_FIELD_AU} au"
                )
        if self.multiplicity < 1:
            raise InvariantViolation(f"multiplicity {self.multiplicity} < 1")
        n_elec = self.n_electrons
        if n_elec < 1:
            raise InvariantViolation(f"N_elec = {n_elec} < 1")
        if (n_elec - (self.multiplicity - 1)) % 2 != 0:
            raise InvariantViolation(
                f"N_elec = {n_elec} and multiplicity = {self.multiplicity} "
                "have mismatched parity"
            )
        if self.multiplicity - 1 > n_elec:
            raise InvariantViolation("multiplicity exceeds electron count")

    @property
    def n_electrons(self):
        return sum(self.atomic_numbers) - self.charge

    @property
    def two_s(self):
        return self.multiplicity - 1

    @property
    def n_alpha(self):
        return (self.n_electrons + self.two_s) // 2

    @property
    def n_beta(self):
        return (self.n_electrons - self.two_s) // 2

    def charge_center(self):
        z = np.array(self.atomic_numbers, dtype=np.float64)
        return z @ self.coordinates / z.sum()

    def rotated(self, rotation):
        return replace(self, coordinates=self.coordinates @ as_f64(rotation).T,
                       field=None if self.field is None else as_f64(rotation) @ self.field)

    def translated(self, shift):
        return replace(self, coordinates=self.coordinates + as_f64(shift))


@dataclass(frozen=True)
class EngineParams:
    """Tunable semi-empirical parameters; `perturbed` acts as a synthetic
    higher-level method for toy delta-learning runs."""

    wolfsberg_k: float = const.WOLFSBERG_HELMHOLZ_K
    ionization: dict = field(default_factory=lambda: dict(const.IONIZATION_HARTREE))
    hardness: dict = field(default_factory=lambda: dict(const.HARDNESS_HARTREE))
    hund: dict = field(default_factory=lambda: dict(const.HUND_HARTREE))

    @classmethod
    def default(cls):
        return cls()

    @classmethod
    def perturbed(cls):
        return cls(
            wolfsberg_k=1.85,
            ionization={k: 1.03 * v for k, v in const.IONIZATION_HARTREE.items()},
            hardness={k: 0.95 * v for k, v in const.HARDNESS_HARTREE.items()},
            hund={k: 1.10 * v for k, v in const.HUND_HARTREE.items()},
        )


@dataclass
class QMMSet:
    """The six matrices consumed by the network, plus their AO layout."""

    f_alpha: np.ndarray
    f_beta: np.ndarray
    p_alpha: np.ndarray
    p_beta: np.ndarray
    overlap: np.ndarray
    h_core: np.ndarray
    layout: basis_mod.AOLayout

    def matrices(self):
        return {
            "f_alpha": self.f_alpha,
            "f_beta": self.f_beta,
            "p_alpha": self.p_alpha,
            "p_beta": self.p_beta,
            "overlap": self.overlap,
            "h_core": self.h_core,
        }

    @property
    def p_total(self):
        return self.p_alpha + self.p_beta


@dataclass
class LowLevelResult:
    energy: float  # hartree
    orbital_energies_alpha: np.ndarray
    orbital_energies_beta: np.ndarray
    n_alpha: int
    n_beta: int
    mulliken_charges: np.ndarray
    homo_lumo: tuple  # (Ea_HOMO, Ea_LUMO, Eb_HOMO, Eb_LUMO), None when undefined
    converged: bool
    iterations: int
    energy_history: np.ndarray


def core_hamiltonian(system, layout, s, dipoles, params=None):
    """Wolfsberg-Helmholz one-electron Hamiltonian with optional field coupling."""
    params = params or EngineParams.default()
    n = layout.n_ao
    h_diag = np.empty(n)
    for idx, (atom, nsh, l, _m) in enumerate(layout.ao_info):
        z = layout.atomic_numbers[atom]
        h_diag[idx] = params.ionization[(z, nsh, l)]
    h = 0.5 * params.wolfsberg_k * (h_diag[:, None] + h_diag[None, :]) * s
    np.fill_diagonal(h, h_diag)
    if system.field is not None:
        h = h + np.einsum("k,kij->ij", system.field, dipoles)
    return h


def _gamma_matrix(system, params):
    """Klopman-Ohno damped Coulomb kernel between atomic monopoles."""
    eta = np.array([params.hardness[z] for z in system.atomic_numbers])
    r = system.coordinates
    d2 = np.sum((r[:, None, :] - r[None, :, :]) ** 2, axis=-1)
    soft = (1.0 / eta[:, None] + 1.0 / eta[None, :]) ** 2 / 4.0
    return 1.0 / np.sqrt(d2 + soft)


def _mulliken_populations(p, s, layout):
    """Per-atom Mulliken populations from one spin density."""
    ps_diag = np.einsum("ij,ji->i", p, s)
    pops = np.zeros(len(layout.atomic_numbers))
    for atom in range(len(layout.atomic_numbers)):
        pops[atom] = ps_diag[layout.atom_slice(atom)].sum()
    return pops


def _atom_shift_matrix(v_atom, s, layout):
    """1/2 S_munu (V_A(mu) + V_A(nu)) for a per-atom potential vector."""
    v_ao = np.empty(layout.n_ao)
    for atom in range(len(layout.atomic_numbers)):
        v_ao[layout.atom_slice(atom)] = v_atom[atom]
    return 0.5 * s * (v_ao[:, None] + v_ao[None, :])


def _solve_fock(f, x, n_occ, n_ao):
    """Diagonalize in the orthogonalized basis; aufbau occupation."""
    fp = x.T @ f @ x
    eps, cp = np.linalg.eigh(0.5 * (fp + fp.T))
    c = x @ cp
    if n_occ > n_ao:
        raise InsufficientOrbitals(
            f"{n_occ} electrons of one spin but only {n_ao} orbitals"
        )
    c_occ = c[:, :n_occ]
    p = c_occ @ c_occ.T
    return eps, c, p


def _diis_extrapolate(fock_hist, err_hist):
    m = len(fock_hist)
    b = -np.ones((m + 1, m + 1))
    b[m, m] = 0.0
    for i in range(m):
        for j in range(m):
            b[i, j] = np.dot(err_hist[i], err_hist[j])
    rhs = np.zeros(m + 1)
    rhs[m] = -1.0
    try:
        coef = np.linalg.solve(b, rhs)[:m]
    except np.linalg.LinAlgError:
        return fock_hist[-1]
    fa = sum(c * f[0] for c, f in zip(coef, fock_hist))
    fb = sum(c * f[1] for c, f in zip(coef, fock_hist))
    return fa, fb


def run_scf(system, params=None, layout=None, max_iterations=MAX_ITERATIONS,
            density_tol=DENSITY_TOL):
    """Self-consistent solution of the spin-resolved eigenproblem.

    Returns (QMMSet, LowLevelResult).  Raises ScfNotConverged with
    diagnostics when the density does not settle within max_iterations.
    """
    if system.dielectric is not None and system.dielectric != 1.0:
        raise UnsupportedEnvironment(
            f"dielectric = {system.dielectric}; implicit solvation is not modeled"
        )
    params = params or EngineParams.default()
    if layout is None:
        layout = basis_mod.build_basis(system.atomic_numbers, system.coordinates)
    n_ao = layout.n_ao
    n_a, n_b = system.n_alpha, system.n_beta
    if max(n_a, n_b) > n_ao:
        raise InsufficientOrbitals(
            f"spin occupation {max(n_a, n_b)} exceeds {n_ao} orbitals"
        )

    s = basis_mod.overlap_matrix(layout)
    origin = system.charge_center()
    dipoles = basis_mod.dipole_integrals(layout, origin=origin)
    h_core = core_hamiltonian(system, layout, s, dipoles, params)
    gamma = _gamma_matrix(system, params)
    z_atoms = np.array(system.atomic_numbers, dtype=np.float64)
    hund = np.array([params.hund[z] for z in system.atomic_numbers])

    # symmetric orthogonalizer
    w, u = np.linalg.eigh(s)
    x = u @ np.diag(w ** -0.5) @ u.T

    closed_shell = system.multiplicity == 1

    # core guess
    eps_a, _c, p_a = _solve_fock(h_core, x, n_a, n_ao)
    p_b = p_a.copy() if closed_shell else _solve_fock(h_core, x, n_b, n_ao)[2]

    nuclear_field_energy = 0.0
    if system.field is not None:
        nuclear_field_energy = -float(
            z_atoms @ ((system.coordinates - origin) @ system.field)
        )

    def build_fock(pa, pb):
        pop_a = _mulliken_populations(pa, s, layout)
        pop_b = pop_a if closed_shell else _mulliken_populations(pb, s, layout)
        q = z_atoms - pop_a - pop_b
        m = pop_a - pop_b
        v_coul = gamma @ q
        f_scc = _atom_shift_matrix(-v_coul, s, layout)
        fa = h_core + f_scc
        fb = fa
        if not closed_shell:
            u_spin = hund * m
            f_spin = _atom_shift_matrix(u_spin, s, layout)
            fa = fa + f_spin
            fb = fb - f_spin
        e2 = 0.5 * float(q @ gamma @ q)
        e_spin = 0.0 if closed_shell else 0.5 * float((hund * m) @ m)
        e_elec = float(np.sum((pa + pb) * h_core))
        energy = e_elec + e2 + e_spin + nuclear_field_energy
        return fa, fb, energy, q

    energies = []
    fock_hist, err_hist = [], []
    converged = False
    iteration = 0
    f_a = f_b = None
    q_atoms = None
    for iteration in range(1, max_iterations + 1):
        f_a, f_b, energy, q_atoms = build_fock(p_a, p_b)
        energies.append(energy)

        err_a = x.T @ (f_a @ p_a @ s - s @ p_a @ f_a) @ x
        err_b = err_a if closed_shell else x.T @ (f_b @ p_b @ s - s @ p_b @ f_b) @ x
        fock_hist.append((f_a, f_b))
        err_hist.append(np.concatenate([err_a.ravel(), err_b.ravel()]))
        if len(fock_hist) > DIIS_HISTORY:
            fock_hist.pop(0)
            err_hist.pop(0)

        if iteration > DIIS_START and len(fock_hist) >= 2:
            f_a_use, f_b_use = _diis_extrapolate(fock_hist, err_hist)
        else:
            f_a_use, f_b_use = f_a, f_b

        eps_a, c_a, p_a_new = _solve_fock(f_a_use, x, n_a, n_ao)
        if closed_shell:
            eps_b, c_b, p_b_new = eps_a, c_a, p_a_new
        else:
            eps_b, c_b, p_b_new = _solve_fock(f_b_use, x, n_b, n_ao)

        if iteration <= DIIS_START:
            p_a_new = (1.0 - MIXING_FACTOR) * p_a + MIXING_FACTOR * p_a_new
            p_b_new = p_a_new if closed_shell else (
                (1.0 - MIXING_FACTOR) * p_b + MIXING_FACTOR * p_b_new
            )

        delta = np.sqrt(
            (np.mean((p_a_new - p_a) ** 2) + np.mean((p_b_new - p_b) ** 2)) / 2.0
        )
        p_a, p_b = p_a_new, p_b_new
        if delta < density_tol:
            converged = True
            break

    # final consistent Fock and energy at the converged density
    f_a, f_b, energy, q_atoms = build_fock(p_a, p_b)
    energies.append(energy)
    eps_a, _ca, _ = _solve_fock(f_a, x, n_a, n_ao)
    eps_b = eps_a if closed_shell else _solve_fock(f_b, x, n_b, n_ao)[0]

    if not converged:
        raise ScfNotConverged(
            f"no convergence in {max_iterations} iterations",
            diagnostics={
                "iterations": iteration,
                "energy_history": np.array(energies),
                "last_density_change": float(delta),
            },
        )

    qmm = QMMSet(
        f_alpha=f_a,
        f_beta=f_a.copy() if closed_shell else f_b,
        p_alpha=p_a,
        p_beta=p_a.copy() if closed_shell else p_b,
        overlap=s,
        h_core=h_core,
        layout=layout,
    )
    result = LowLevelResult(
        energy=energy,
        orbital_energies_alpha=eps_a,
        orbital_energies_beta=eps_b,
        n_alpha=n_a,
        n_beta=n_b,
        mulliken_charges=q_atoms,
        homo_lumo=(
            float(eps_a[n_a - 1]) if n_a > 0 else None,
            float(eps_a[n_a]) if n_a < n_ao else None,
            float(eps_b[n_b - 1]) if n_b > 0 else None,
            float(eps_b[n_b]) if n_b < n_ao else None,
        ),
        converged=True,
        iterations=iteration,
        energy_history=np.array(energies),
    )
    return qmm, result


def ao_rotation_matrix(layout, rotation):
    """Block-diagonal real Wigner rotation acting on the AO index."""
    d = np.zeros((layout.n_ao, layout.n_ao))
    i = 0
    while i < layout.n_ao:
        _atom, _n, l, m = layout.ao_info[i]
        assert m == -l
        d[i : i + 2 * l + 1, i : i + 2 * l + 1] = wigner_d_real(l, rotation)
        i += 2 * l + 1
    return d


def rotate_system_check(system, rotation, params=None, density_tol=1e-11):
    """Run SCF on a geometry and its rotated copy; report the worst deviation
    of every QMM block from the Wigner transform law.

    Both runs converge to density_tol (default tighter than production) so
    that independent-convergence noise stays well below the 1e-8 equivariance
    tolerance.
    """
    qmm, _res = run_scf(system, params=params, density_tol=density_tol)
    qmm_r, _res_r = run_scf(
        system.rotated(rotation), params=params, density_tol=density_tol
    )
    d = ao_rotation_matrix(qmm.layout, rotation)
    report = {}
    for name, mat in qmm.matrices().items():
        predicted = d @ mat @ d.T
        report[name] = float(np.max(np.abs(qmm_r.matrices()[name] - predicted)))
    report["max_deviation"] = max(report.values())
    return report


def spin_gaps(e_s1_singlet, e_s0_singlet, e_s1_triplet, e_s0_triplet):
    """Vertical gaps at singlet- and triplet-optimized geometries, and the
    adiabatic gap.  Inputs are total energies; superscript S is the computed
    spin state, subscript the optimized geometry."""
    gap_singlet = e_s1_singlet - e_s0_singlet
    gap_triplet = e_s1_triplet - e_s0_triplet
    gap_adiabatic = e_s1_triplet - e_s0_singlet
    return gap_singlet, gap_triplet, gap_adiabatic
