"""Real spherical harmonics, Wigner-D matrices, real Clebsch-Gordan tables,
and irreps feature containers.

Conventions (shared with the integrals module, fixed once):
  * real spherical harmonics without Condon-Shortley phase,
  * m runs -l..+l contiguously, so the l=1 triple is ordered (y, z, x),
  * parity label p is +1 or -1 and is untouched by proper rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidRotation, SelectionRuleViolation


# ---------------------------------------------------------------------------
# real spherical harmonics
# ---------------------------------------------------------------------------

def _assoc_legendre(l, m, x):
    """P_l^m(x) without the Condon-Shortley (-1)^m factor, m >= 0."""
    # P_m^m = (2m-1)!! (1-x^2)^{m/2}
    pmm = 1.0
    if m > 0:
        somx2 = math.sqrt(max(0.0, 1.0 - x * x))
        fact = 1.0
        for _ in range(m):
            pmm *= fact * somx2
            fact += 2.0
    if l == m:
        return pmm
    pmmp1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pmmp1
    pll = 0.0
    for ll in range(m + 2, l + 1):
        pll = ((2 * ll - 1) * x * pmmp1 - (ll + m - 1) * pmm) / (ll - m)
        pmm = pmmp1
        pmmp1 = pll
    return pll


def real_sph_harm(l, m, v):
    """Real spherical harmonic Y_{lm} at unit vector v = (x, y, z).

    Orthonormal under the sphere measure; Y_00 = 1/sqrt(4 pi).
    """
    if abs(m) > l:
        raise ValueError(f"|m| = {abs(m)} exceeds l = {l}")
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    am = abs(m)
    norm = math.sqrt(
        (2 * l + 1) / (4.0 * math.pi) * math.factorial(l - am) / math.factorial(l + am)
    )
    plm = _assoc_legendre(l, am, z)
    if m == 0:
        return norm * plm
    # cos(m phi) sin^m(theta) and sin(m phi) sin^m(theta) are polynomials in
    # x, y; build cos/sin(m phi) by the angle-addition recurrence.
    rxy = math.hypot(x, y)
    if rxy < 1e-300:
        return 0.0  # P_l^m vanishes at the poles for m > 0
    c, s = x / rxy, y / rxy
    cm, sm = c, s
    for _ in range(am - 1):
        cm, sm = cm * c - sm * s, sm * c + cm * s
    if m > 0:
        return math.sqrt(2.0) * norm * plm * cm
    return math.sqrt(2.0) * norm * plm * sm


def sph_harm_vector(l, v):
    """All 2l+1 components Y_{l,-l..l} at unit vector v."""
    return np.array([real_sph_harm(l, m, v) for m in range(-l, l + 1)])


# ---------------------------------------------------------------------------
# Wigner-D for real harmonics (Ivanic-Ruedenberg recursion from the l=1 block)
# ---------------------------------------------------------------------------

_L1_PERM = np.array([1, 2, 0])  # (x, y, z) axes -> real l=1 order (y, z, x)


def _check_rotation(rotation):
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidRotation(f"rotation must be 3x3, got {r.shape}")
    if abs(np.linalg.det(r) - 1.0) > 1e-8:
        raise InvalidRotation(f"det = {np.linalg.det(r):.3e} is not +1")
    if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-8:
        raise InvalidRotation("matrix is not orthogonal")
    return r


def _ir_coeffs(l, m, mp):
    if abs(mp) < l:
        denom = (l + mp) * (l - mp)
    else:
        denom = (2 * l) * (2 * l - 1)
    d_m0 = 1.0 if m == 0 else 0.0
    u = math.sqrt((l + m) * (l - m) / denom)
    v = (
        0.5
        * math.sqrt((1.0 + d_m0) * (l + abs(m) - 1) * (l + abs(m)) / denom)
        * (1.0 - 2.0 * d_m0)
    )
    w = -0.5 * math.sqrt((l - abs(m) - 1) * (l - abs(m)) / denom) * (1.0 - d_m0)
    return u, v, w


def _ir_p(r1, dlm1, l, i, a, b):
    # r1 indexed by m in {-1,0,1}; dlm1 is D^{l-1} indexed by m in -(l-1)..(l-1)
    off = l - 1
    ri = lambda j: r1[i + 1, j + 1]
    d = lambda a_, b_: dlm1[a_ + off, b_ + off]
    if b == l:
        return ri(1) * d(a, l - 1) - ri(-1) * d(a, -l + 1)
    if b == -l:
        return ri(1) * d(a, -l + 1) + ri(-1) * d(a, l - 1)
    return ri(0) * d(a, b)


def _wigner_from_previous(l, r1, dlm1):
    dim = 2 * l + 1
    out = np.zeros((dim, dim))
    for m in range(-l, l + 1):
        for mp in range(-l, l + 1):
            u, v, w = _ir_coeffs(l, m, mp)
            val = 0.0
            if u != 0.0:
                val += u * _ir_p(r1, dlm1, l, 0, m, mp)
            if v != 0.0:
                if m == 0:
                    vv = _ir_p(r1, dlm1, l, 1, 1, mp) + _ir_p(r1, dlm1, l, -1, -1, mp)
                elif m > 0:
                    vv = _ir_p(r1, dlm1, l, 1, m - 1, mp) * math.sqrt(
                        1.0 + (1.0 if m == 1 else 0.0)
                    ) - _ir_p(r1, dlm1, l, -1, -m + 1, mp) * (
                        0.0 if m == 1 else 1.0
                    )
                else:
                    vv = _ir_p(r1, dlm1, l, 1, m + 1, mp) * (
                        0.0 if m == -1 else 1.0
                    ) + _ir_p(r1, dlm1, l, -1, -m - 1, mp) * math.sqrt(
                        1.0 + (1.0 if m == -1 else 0.0)
                    )
                val += v * vv
            if w != 0.0:
                if m > 0:
                    ww = _ir_p(r1, dlm1, l, 1, m + 1, mp) + _ir_p(
                        r1, dlm1, l, -1, -m - 1, mp
                    )
                else:
                    ww = _ir_p(r1, dlm1, l, 1, m - 1, mp) - _ir_p(
                        r1, dlm1, l, -1, -m + 1, mp
                    )
                val += w * ww
            out[m + l, mp + l] = val
    return out


def wigner_d_real(l, rotation):
    """Orthogonal (2l+1)x(2l+1) block satisfying Y_l(R v) = D^l(R) Y_l(v)."""
    r = _check_rotation(rotation)
    if l == 0:
        return np.ones((1, 1))
    r1 = r[np.ix_(_L1_PERM, _L1_PERM)]
    d = r1
    for ll in range(2, l + 1):
        d = _wigner_from_previous(ll, r1, d)
    return d


@dataclass
class RotationRep:
    """A rotation with its cached real Wigner-D blocks up to l_max."""

    rotation: np.ndarray
    l_max: int
    wigner: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rotation = _check_rotation(self.rotation)
        for l in range(self.l_max + 1):
            self.wigner[l] = wigner_d_real(l, self.rotation)

    def block(self, l):
        if l not in self.wigner:
            self.wigner[l] = wigner_d_real(l, self.rotation)
        return self.wigner[l]


def random_rotation(rng):
    """Uniform random proper rotation from a QR decomposition."""
    a = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(a)
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# Clebsch-Gordan tables in the real basis
# ---------------------------------------------------------------------------

def _cg_complex(l1, m1, l2, m2, l, m):
    """Condon-Shortley complex Clebsch-Gordan coefficient (Racah closed form)."""
    if m1 + m2 != m:
        return 0.0
    if not (abs(l1 - l2) <= l <= l1 + l2):
        return 0.0
    if abs(m1) > l1 or abs(m2) > l2 or abs(m) > l:
        return 0.0
    f = math.factorial
    pref = math.sqrt(
        (2 * l + 1)
        * f(l + l1 - l2)
        * f(l - l1 + l2)
        * f(l1 + l2 - l)
        / f(l1 + l2 + l + 1)
    )
    pref *= math.sqrt(
        f(l + m) * f(l - m) * f(l1 - m1) * f(l1 + m1) * f(l2 - m2) * f(l2 + m2)
    )
    s = 0.0
    kmin = max(0, l2 - l - m1, l1 + m2 - l)
    kmax = min(l1 + l2 - l, l1 - m1, l2 + m2)
    for k in range(kmin, kmax + 1):
        s += (-1.0) ** k / (
            f(k)
            * f(l1 + l2 - l - k)
            * f(l1 - m1 - k)
            * f(l2 + m2 - k)
            * f(l - l2 + m1 + k)
            * f(l - l1 - m2 + k)
        )
    return pref * s


@lru_cache(maxsize=None)
def _real_to_complex_unitary(l):
    """U with R_{lm} = sum_M U[m, M] Y_{lM} (complex Y with Condon-Shortley)."""
    dim = 2 * l + 1
    u = np.zeros((dim, dim), dtype=np.complex128)
    rt2 = 1.0 / math.sqrt(2.0)
    u[l, l] = 1.0
    for m in range(1, l + 1):
        u[l + m, l - m] = rt2
        u[l + m, l + m] = (-1.0) ** m * rt2
        u[l - m, l - m] = 1j * rt2
        u[l - m, l + m] = -1j * (-1.0) ** m * rt2
    return u


@lru_cache(maxsize=None)
def cg_real(l1, l2, l):
    """Real-basis coupling tensor, shape (2l1+1, 2l2+1, 2l+1).

    Rows are unit-orthonormal: sum_{m1,m2} C[m1,m2,m] C[m1,m2,m'] = delta_mm'.
    Coupling two features with this tensor commutes with real Wigner rotation.
    """
    if not (abs(l1 - l2) <= l <= l1 + l2):
        raise SelectionRuleViolation(
            f"({l1}, {l2}) cannot couple to {l}: triangle inequality"
        )
    cc = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l + 1))
    for i, m1 in enumerate(range(-l1, l1 + 1)):
        for j, m2 in enumerate(range(-l2, l2 + 1)):
            m = m1 + m2
            if abs(m) <= l:
                cc[i, j, m + l] = _cg_complex(l1, m1, l2, m2, l, m)
    u1 = _real_to_complex_unitary(l1)
    u2 = _real_to_complex_unitary(l2)
    ul = _real_to_complex_unitary(l)
    k = np.einsum(
        "ac,bd,cde,fe->abf", u1.conj(), u2.conj(), cc.astype(np.complex128), ul
    )
    # The transformed tensor is purely real or purely imaginary depending on
    # the parity of l1+l2+l; a global phase does not affect equivariance.
    if np.max(np.abs(k.real)) >= np.max(np.abs(k.imag)):
        out = k.real.copy()
    else:
        out = k.imag.copy()
    residual = min(np.max(np.abs(k.real)), np.max(np.abs(k.imag)))
    if residual > 1e-12:
        raise RuntimeError(
            f"real CG for ({l1},{l2},{l}) has mixed phase, residual {residual:.2e}"
        )
    out[np.abs(out) < 1e-14] = 0.0
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CGTable:
    """Sparse list of nonzero real CG coefficients up to l_max."""

    l_max: int
    entries: tuple  # of (l1, m1, l2, m2, l, m, value)

    @classmethod
    def build(cls, l_max):
        entries = []
        for l1 in range(l_max + 1):
            for l2 in range(l_max + 1):
                for l in range(abs(l1 - l2), min(l1 + l2, l_max) + 1):
                    c = cg_real(l1, l2, l)
                    for i, m1 in enumerate(range(-l1, l1 + 1)):
                        for j, m2 in enumerate(range(-l2, l2 + 1)):
                            for k, m in enumerate(range(-l, l + 1)):
                                if c[i, j, k] != 0.0:
                                    entries.append((l1, m1, l2, m2, l, m, c[i, j, k]))
        return cls(l_max=l_max, entries=tuple(entries))

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write("# l1 m1 l2 m2 l m coefficient\n")
            for e in self.entries:
                fh.write(f"{e[0]} {e[1]} {e[2]} {e[3]} {e[4]} {e[5]} {e[6]:+.15e}\n")


# ---------------------------------------------------------------------------
# irreps features
# ---------------------------------------------------------------------------

# Default channel counts per (l, p).
DEFAULT_IRREPS = {
    (0, +1): 128,
    (1, +1): 48,
    (2, +1): 24,
    (3, +1): 12,
    (4, +1): 6,
    (0, -1): 24,
    (1, -1): 8,
    (2, -1): 4,
    (3, -1): 2,
    (4, -1): 0,
}


@dataclass(frozen=True)
class IrrepsSpec:
    """Channel counts per (l, parity) pair."""

    channels: tuple  # of ((l, p), n)

    @classmethod
    def default(cls):
        return cls(channels=tuple(sorted(DEFAULT_IRREPS.items())))

    @classmethod
    def scaled(cls, hidden_dim):
        """Scale the default table so total p=+1 l=0..4 channels track hidden_dim."""
        factor = hidden_dim / 256.0
        chans = []
        for (l, p), n in sorted(DEFAULT_IRREPS.items()):
            if n == 0:
                chans.append(((l, p), 0))
            else:
                chans.append(((l, p), max(1, int(round(n * factor)))))
        return cls(channels=tuple(chans))

    def as_dict(self):
        return dict(self.channels)

    @property
    def l_max(self):
        return max(l for (l, _p), n in self.channels if n > 0)

    @property
    def total_channels(self):
        return sum(n for _, n in self.channels)

    def segments(self):
        """Nonempty (l, p, n) triples in fixed order."""
        return [(l, p, n) for (l, p), n in self.channels if n > 0]


class IrrepsFeature:
    """Per-atom equivariant feature: dict (l, p) -> (n_atoms, n, 2l+1)."""

    def __init__(self, spec, data):
        self.spec = spec
        self.data = data
        for (l, p, n) in spec.segments():
            arr = data[(l, p)]
            if arr.shape[1:] != (n, 2 * l + 1):
                raise ValueError(
                    f"segment ({l},{p}) has shape {arr.shape}, expected (*, {n}, {2*l+1})"
                )

    @classmethod
    def zeros(cls, spec, n_atoms):
        data = {
            (l, p): np.zeros((n_atoms, n, 2 * l + 1)) for (l, p, n) in spec.segments()
        }
        return cls(spec, data)

    @property
    def n_atoms(self):
        for (l, p, _n) in self.spec.segments():
            return self.data[(l, p)].shape[0]
        return 0

    def copy(self):
        return IrrepsFeature(self.spec, {k: v.copy() for k, v in self.data.items()})

    def invariant_content(self, eps=0.0):
        """Per-(atom, channel, l, p) norms, concatenated: (n_atoms, total_channels)."""
        parts = [
            np.sqrt(np.sum(self.data[(l, p)] ** 2, axis=2) + eps * eps) - eps
            for (l, p, _n) in self.spec.segments()
        ]
        return np.concatenate(parts, axis=1)


def rotate_feature(h, rotation_rep):
    """Apply D^l blockwise; parity labels are untouched (proper rotations)."""
    out = {}
    for (l, p, _n) in h.spec.segments():
        d = rotation_rep.block(l)
        out[(l, p)] = np.einsum("acm,km->ack", h.data[(l, p)], d)
    return IrrepsFeature(h.spec, out)


def evnorm(h, mu, sigma, beta, eps):
    """Equivariant normalization: invariant part and normalized direction.

    mu, sigma, beta are dicts (l, p) -> (n,) arrays; eps > 0 guards the
    direction denominator.  Returns (hbar dict of (n_atoms, n), hhat feature).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    hbar = {}
    hat = {}
    for (l, p, _n) in h.spec.segments():
        arr = h.data[(l, p)]
        norm = np.sqrt(np.sum(arr * arr, axis=2) + eps * eps) - eps
        hbar[(l, p)] = (norm - mu[(l, p)]) / sigma[(l, p)]
        hat[(l, p)] = arr / (norm + 1.0 / beta[(l, p)] + eps)[:, :, None]
    return hbar, IrrepsFeature(h.spec, hat)
