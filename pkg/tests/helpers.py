"""Shared test utilities: exact QMM transforms and tiny geometry fixtures."""

import numpy as np

from qmmnet import network as nw
from qmmnet import so3
from qmmnet.constants import ANGSTROM_TO_BOHR
from qmmnet.scf import MolecularSystem, QMMSet, ao_rotation_matrix

WATER_ANG = np.array(
    [[0.0, 0.0, 0.117], [0.0, 0.757, -0.467], [0.0, -0.757, -0.467]]
)
WATER_Z = (8, 1, 1)

AMMONIA_ANG = np.array(
    [[0.0, 0.0, 0.11], [0.94, 0.0, -0.26], [-0.47, 0.81, -0.26], [-0.47, -0.81, -0.26]]
)
AMMONIA_Z = (7, 1, 1, 1)

# hydroxymethyl radical CH2OH: 5 atoms, 17 electrons (doublet)
HYDROXYMETHYL_ANG = np.array(
    [
        [0.0, 0.0, 0.0],      # C
        [1.43, 0.0, 0.0],     # O
        [-0.52, 0.94, 0.35],  # H
        [-0.52, -0.94, 0.35], # H
        [1.78, 0.0, -0.89],   # H (on O)
    ]
)
HYDROXYMETHYL_Z = (6, 8, 1, 1, 1)


def water_system(charge=0, multiplicity=1, field=None):
    return MolecularSystem(
        WATER_Z, WATER_ANG * ANGSTROM_TO_BOHR, charge=charge,
        multiplicity=multiplicity, field=field,
    )


def rotate_qmms_exact(qmms, system, rotation):
    """Apply the Wigner transform law directly to a converged QMMSet.

    This is the zero-noise counterpart of re-running SCF on a rotated
    geometry: D O D^T block-wise, plus rotated coordinates.
    """
    from qmmnet.basis import build_basis

    d = ao_rotation_matrix(qmms.layout, rotation)
    rotated_system = system.rotated(rotation)
    layout = build_basis(rotated_system.atomic_numbers, rotated_system.coordinates)
    mats = {name: d @ m @ d.T for name, m in qmms.matrices().items()}
    return QMMSet(layout=layout, **mats), rotated_system


def permute_qmms_exact(qmms, system, perm):
    """Relabel atoms by `perm` (new order of old indices) and permute the
    QMMs' AO blocks to match."""
    from qmmnet.basis import build_basis

    perm = list(perm)
    numbers = tuple(system.atomic_numbers[p] for p in perm)
    coords = system.coordinates[perm]
    new_system = MolecularSystem(
        numbers, coords, charge=system.charge, multiplicity=system.multiplicity,
        field=system.field,
    )
    layout = build_basis(numbers, coords)
    old_layout = qmms.layout
    ao_perm = np.empty(layout.n_ao, dtype=int)
    for new_idx, (new_atom, n, l, m) in enumerate(layout.ao_info):
        old_atom = perm[new_atom]
        ao_perm[new_idx] = old_layout.index_map[(old_atom, n, l, m)]
    mats = {
        name: m[np.ix_(ao_perm, ao_perm)] for name, m in qmms.matrices().items()
    }
    return QMMSet(layout=layout, **mats), new_system


def randomized_params(config, seed=0, scale=0.05):
    """Model parameters moved off the zero-init point so every block
    carries signal and gradient."""
    params = nw.ModelParams.init(config, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for t in params.tensors.values():
        t.data = t.data + rng.normal(scale=scale, size=t.data.shape)
    return params


def small_model_config():
    return nw.ModelConfig(
        hidden_dim=32, n_message_layers=2, n_decode_layers=2,
        decode_schedule=(0, 2), mlp_hidden=24, attention_hidden=16,
    )
