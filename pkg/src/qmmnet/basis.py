"""Contracted Gaussian atomic-orbital basis and molecular integrals.

The basis holds real-solid-harmonic Gaussians (m ordered -l..+l, no
Condon-Shortley phase, matching so3.real_sph_harm).  Every contracted
function is normalized to unit self-overlap.  Angular momenta up to l=2 are
supported; the shipped table uses s and p only.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import kernels
from .constants import SYMBOL_TO_Z, as_f64
from .errors import LinearDependence, UnknownElement

LINDEP_THRESHOLD = 1e-7

# Real solid harmonic polynomials A_lm as monomial dicts {(i,j,k): coef}.
# Restricted to the unit sphere these equal so3.real_sph_harm(l, m, .).
_C0 = 1.0 / math.sqrt(4.0 * math.pi)
_C1 = math.sqrt(3.0 / (4.0 * math.pi))
_C2A = math.sqrt(15.0 / (4.0 * math.pi))
_C2B = math.sqrt(5.0 / (16.0 * math.pi))
_C2C = math.sqrt(15.0 / (16.0 * math.pi))

SOLID_HARMONICS = {
    (0, 0): {(0, 0, 0): _C0},
    (1, -1): {(0, 1, 0): _C1},
    (1, 0): {(0, 0, 1): _C1},
    (1, 1): {(1, 0, 0): _C1},
    (2, -2): {(1, 1, 0): _C2A},
    (2, -1): {(0, 1, 1): _C2A},
    (2, 0): {(0, 0, 2): 2.0 * _C2B, (2, 0, 0): -_C2B, (0, 2, 0): -_C2B},
    (2, 1): {(1, 0, 1): _C2A},
    (2, 2): {(2, 0, 0): _C2C, (0, 2, 0): -_C2C},
}

MAX_L = 2


def _radial_norm(alpha, l):
    """1/sqrt(<A_lm e^-ar2 | A_lm e^-ar2>) for a unit-sphere-normalized A_lm."""
    # radial integral: int_0^inf r^{2l+2} exp(-2 a r^2) dr = Gamma(l+3/2)/(2 (2a)^(l+3/2))
    integral = math.gamma(l + 1.5) / (2.0 * (2.0 * alpha) ** (l + 1.5))
    return 1.0 / math.sqrt(integral)


@dataclass
class GaussianShell:
    """One contracted shell on one atom; primitives are (exponent, coefficient)."""

    atom_index: int
    l: int
    primitives: list

    def __post_init__(self):
        exps = [a for a, _c in self.primitives]
        if any(a <= 0 for a in exps):
            raise ValueError("primitive exponents must be strictly positive")
        if any(e2 >= e1 for e1, e2 in zip(exps, exps[1:])):
            raise ValueError("primitive exponents must be strictly decreasing")
        if self.l > MAX_L:
            raise ValueError(f"angular momentum {self.l} beyond supported l={MAX_L}")


def _shell_terms(shell, center, m):
    """Primitive term table (coef, alpha, px, py, pz, cx, cy, cz) for one AO."""
    poly = SOLID_HARMONICS[(shell.l, m)]
    rows = []
    for alpha, coef in shell.primitives:
        for powers, pc in poly.items():
            rows.append(
                [coef * pc, alpha, powers[0], powers[1], powers[2], *center]
            )
    return np.asarray(rows, dtype=np.float64)


def _normalize_shell(l, primitives):
    """Scale primitive coefficients so the contracted self-overlap is 1."""
    prims = [(a, c * _radial_norm(a, l)) for a, c in primitives]
    shell = GaussianShell(atom_index=0, l=l, primitives=prims)
    terms = _shell_terms(shell, (0.0, 0.0, 0.0), m=0)
    self_ov = kernels.pair_overlap(terms, terms)
    scale = 1.0 / math.sqrt(self_ov)
    return [(a, c * scale) for a, c in prims]


def load_basis_table(path=None):
    """Parse the shipped (or a user) basis parameter file.

    Returns (table, checksum): table maps Z -> list of (l, primitives),
    checksum is the sha256 hex digest of the file bytes.
    """
    if path is None:
        ref = resources.files("qmmnet.data") / "basis_minimal_v1.txt"
        raw = ref.read_bytes()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    checksum = hashlib.sha256(raw).hexdigest()
    table = {}
    current = None
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "shell":
            sym, l = parts[1], int(parts[2])
            z = SYMBOL_TO_Z.get(sym)
            if z is None:
                raise UnknownElement(f"basis file line {lineno}: element {sym!r}")
            current = []
            table.setdefault(z, []).append((l, current))
        else:
            if current is None:
                raise ValueError(f"basis file line {lineno}: primitive before shell")
            current.append((float(parts[0]), float(parts[1])))
    return table, checksum


_DEFAULT_TABLE = None
_DEFAULT_CHECKSUM = None


def default_basis_table():
    global _DEFAULT_TABLE, _DEFAULT_CHECKSUM
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE, _DEFAULT_CHECKSUM = load_basis_table()
    return _DEFAULT_TABLE, _DEFAULT_CHECKSUM


class AOLayout:
    """Atomic-orbital layout: shells, flat index map, per-atom block ranges.

    AOs of one atom are contiguous; within a shell m runs -l..+l.
    """

    def __init__(self, atomic_numbers, coordinates, shells, basis_checksum):
        self.atomic_numbers = list(atomic_numbers)
        self.coordinates = as_f64(coordinates).reshape(len(self.atomic_numbers), 3)
        self.shells = shells
        self.basis_checksum = basis_checksum
        self.ao_info = []  # flat index -> (atom, n, l, m)
        self.index_map = {}
        self.atom_ranges = []
        shell_count = {}
        start = 0
        for atom in range(len(self.atomic_numbers)):
            for shell in shells:
                if shell.atom_index != atom:
                    continue
                n = shell_count.get((atom, shell.l), 0)
                shell_count[(atom, shell.l)] = n + 1
                for m in range(-shell.l, shell.l + 1):
                    key = (atom, n, shell.l, m)
                    self.index_map[key] = len(self.ao_info)
                    self.ao_info.append(key)
            self.atom_ranges.append((start, len(self.ao_info)))
            start = len(self.ao_info)
        self.n_ao = len(self.ao_info)
        # per-AO term tables for the integral kernels
        self._terms = []
        shells_by_atom = {}
        for shell in shells:
            shells_by_atom.setdefault(shell.atom_index, []).append(shell)
        for (atom, n, l, m) in self.ao_info:
            shell = [s for s in shells_by_atom[atom] if s.l == l][n]
            self._terms.append(_shell_terms(shell, self.coordinates[atom], m))

    def atom_slice(self, atom):
        lo, hi = self.atom_ranges[atom]
        return slice(lo, hi)

    def atom_n_ao(self, atom):
        lo, hi = self.atom_ranges[atom]
        return hi - lo

    def shells_of_atom(self, atom):
        return [s for s in self.shells if s.atom_index == atom]

    def terms(self, ao):
        return self._terms[ao]


def build_basis(atomic_numbers, coordinates, basis_table=None, checksum=None):
    """Construct the AO layout for a molecule from a per-element shell table."""
    if basis_table is None:
        basis_table, checksum = default_basis_table()
    shells = []
    for atom, z in enumerate(atomic_numbers):
        if z not in basis_table:
            raise UnknownElement(f"no basis parameters for Z={z}")
        for l, prims in sorted(basis_table[z], key=lambda t: t[0]):
            shells.append(
                GaussianShell(
                    atom_index=atom, l=l, primitives=_normalize_shell(l, prims)
                )
            )
    return AOLayout(atomic_numbers, coordinates, shells, checksum or "")


def overlap_matrix(layout):
    """Symmetric AO overlap matrix; unit diagonal; positive definite."""
    n = layout.n_ao
    s = np.empty((n, n))
    for i in range(n):
        ti = layout.terms(i)
        for j in range(i, n):
            s[i, j] = kernels.pair_overlap(ti, layout.terms(j))
            s[j, i] = s[i, j]
    w = np.linalg.eigvalsh(s)
    if w[0] < LINDEP_THRESHOLD:
        raise LinearDependence(
            f"smallest overlap eigenvalue {w[0]:.3e} below {LINDEP_THRESHOLD:g}"
        )
    return s


def dipole_integrals(layout, origin=(0.0, 0.0, 0.0)):
    """Matrices <mu|(r_k - origin_k)|nu> for k in x, y, z."""
    origin = as_f64(origin)
    n = layout.n_ao
    d = np.empty((3, n, n))
    for i in range(n):
        ti = layout.terms(i)
        for j in range(i, n):
            v = kernels.pair_dipole(ti, layout.terms(j), origin)
            d[:, i, j] = v
            d[:, j, i] = v
    return d


@dataclass
class AuxiliaryBasis:
    """Per-element auxiliary functions: list of (n, l, exponent), unit norm."""

    functions: dict  # Z -> list of (n, l, exponent)

    @classmethod
    def default(cls, basis_table=None):
        """Even-tempered exponents {0.5, 2.0} for each l up to 2*l_max(element)."""
        if basis_table is None:
            basis_table, _ = default_basis_table()
        funcs = {}
        for z, shells in basis_table.items():
            l_max = max(l for l, _ in shells)
            entries = []
            for l in range(2 * l_max + 1):
                for n, exponent in enumerate((0.5, 2.0)):
                    entries.append((n, l, exponent))
            funcs[z] = entries
        return cls(functions=funcs)

    def n_channels(self, z, l):
        return sum(1 for (_n, ll, _a) in self.functions[z] if ll == l)

    def max_l(self):
        return max(l for fns in self.functions.values() for (_n, l, _a) in fns)

    def terms(self, z, n, l, m, center):
        for (nn, ll, alpha) in self.functions[z]:
            if nn == n and ll == l:
                prim = [(alpha, _radial_norm(alpha, l))]
                shell = GaussianShell(atom_index=0, l=l, primitives=prim)
                return _shell_terms(shell, center, m)
        raise KeyError((z, n, l))


def three_index_overlap(layout, aux=None):
    """On-site three-index overlaps Q~ per atom.

    Returns a list over atoms of dicts l -> ndarray (n_aux, 2l+1, nao_A, nao_A)
    with entries int phi_mu phi_nu phitilde_{n,l,m}, mu and nu on atom A.
    Symmetric in mu <-> nu; obeys the |l_mu - l_nu| <= l <= l_mu + l_nu and
    real-harmonic m selection rules by construction.
    """
    if aux is None:
        aux = AuxiliaryBasis.default()
    out = []
    for atom, z in enumerate(layout.atomic_numbers):
        lo, hi = layout.atom_ranges[atom]
        nao = hi - lo
        center = layout.coordinates[atom]
        per_l = {}
        ls = sorted({l for (_n, l, _a) in aux.functions[z]})
        for l in ls:
            nch = aux.n_channels(z, l)
            q = np.zeros((nch, 2 * l + 1, nao, nao))
            for n in range(nch):
                for k, m in enumerate(range(-l, l + 1)):
                    taux = aux.terms(z, n, l, m, center)
                    for i in range(nao):
                        ti = layout.terms(lo + i)
                        for j in range(i, nao):
                            v = kernels.onsite_triple(
                                ti, layout.terms(lo + j), taux
                            )
                            q[n, k, i, j] = v
                            q[n, k, j, i] = v
            per_l[l] = q
        out.append(per_l)
    return out
