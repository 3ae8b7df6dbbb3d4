"""Toy molecule corpus generation for end-to-end runs.

Small H/C/N/O template geometries are jittered and screened: a candidate
is kept only when the low-level engine converges for it (and, when a
synthetic high level is requested, the perturbed engine as well).  This
rejection sampling mirrors the engine's documented limitation that
near-degenerate systems do not converge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ANGSTROM_TO_BOHR, HARTREE_TO_EV
from .errors import ScfNotConverged
from .scf import EngineParams, MolecularSystem, run_scf
from .training import species_tag

# (name, atomic numbers, coordinates in Angstrom, charge, multiplicity)
TEMPLATES = [
    ("water", (8, 1, 1), [[0.0, 0.0, 0.117], [0.0, 0.757, -0.467], [0.0, -0.757, -0.467]], 0, 1),
    ("ammonia", (7, 1, 1, 1), [[0.0, 0.0, 0.11], [0.94, 0.0, -0.26], [-0.47, 0.81, -0.26], [-0.47, -0.81, -0.26]], 0, 1),
    ("methane", (6, 1, 1, 1, 1), [[0.0, 0.0, 0.0], [0.63, 0.63, 0.63], [-0.63, -0.63, 0.63], [-0.63, 0.63, -0.63], [0.63, -0.63, -0.63]], 0, 1),
    ("hydroxyl", (8, 1), [[0.0, 0.0, 0.0], [0.0, 0.0, 0.97]], 0, 2),
    ("amino", (7, 1, 1), [[0.0, 0.0, 0.08], [0.8, 0.0, -0.51], [-0.8, 0.0, -0.51]], 0, 2),
    ("methyl", (6, 1, 1, 1), [[0.0, 0.0, 0.0], [1.08, 0.0, 0.0], [-0.54, 0.94, 0.0], [-0.54, -0.94, 0.0]], 0, 2),
    ("water_cation", (8, 1, 1), [[0.0, 0.0, 0.117], [0.0, 0.757, -0.467], [0.0, -0.757, -0.467]], 1, 2),
    ("ammonium_like", (7, 1, 1, 1), [[0.0, 0.0, 0.11], [0.94, 0.0, -0.26], [-0.47, 0.81, -0.26], [-0.47, -0.81, -0.26]], 1, 2),
    ("hydroxide", (8, 1), [[0.0, 0.0, 0.0], [0.0, 0.0, 0.97]], -1, 1),
    ("amide_anion", (7, 1, 1), [[0.0, 0.0, 0.08], [0.8, 0.0, -0.51], [-0.8, 0.0, -0.51]], -1, 1),
    ("methylene_triplet", (6, 1, 1), [[0.0, 0.0, 0.0], [0.98, 0.0, 0.37], [-0.98, 0.0, 0.37]], 0, 3),
    ("oxygen_like_triplet", (8, 1, 1), [[0.0, 0.0, 0.2], [0.0, 0.9, -0.5], [0.0, -0.9, -0.5]], 0, 3),
]


@dataclass
class CorpusEntry:
    name: str
    system: MolecularSystem
    qmms: object
    low_energy_ev: float
    high_energy_ev: float | None
    species: str
    low_result: object


def generate_corpus(n_molecules, seed=0, jitter=0.03, with_high_level=True,
                    max_attempts_factor=20):
    """Rejection-sampled jittered template corpus.

    Returns a list of CorpusEntry.  Each entry carries the converged
    low-level QMMs and energy (eV) and, when requested, the synthetic
    high-level energy from the perturbed engine parameters.
    """
    rng = np.random.default_rng(seed)
    high_params = EngineParams.perturbed() if with_high_level else None
    entries = []
    attempts = 0
    idx = 0
    while len(entries) < n_molecules:
        attempts += 1
        if attempts > max_attempts_factor * n_molecules:
            raise ScfNotConverged(
                f"corpus generation stalled: {len(entries)}/{n_molecules} after "
                f"{attempts} attempts"
            )
        name, numbers, coords, charge, mult = TEMPLATES[idx % len(TEMPLATES)]
        idx += 1
        coords = np.array(coords, dtype=np.float64)
        coords = (coords + rng.normal(scale=jitter, size=coords.shape)) * ANGSTROM_TO_BOHR
        try:
            system = MolecularSystem(
                atomic_numbers=numbers, coordinates=coords, charge=charge,
                multiplicity=mult,
            )
            qmms, low = run_scf(system)
            high_ev = None
            if with_high_level:
                _, high = run_scf(system, params=high_params)
                high_ev = high.energy * HARTREE_TO_EV
        except ScfNotConverged:
            continue
        entries.append(
            CorpusEntry(
                name=f"{name}_{len(entries):03d}",
                system=system,
                qmms=qmms,
                low_energy_ev=low.energy * HARTREE_TO_EV,
                high_energy_ev=high_ev,
                species=species_tag(charge, mult),
                low_result=low,
            )
        )
    return entries
