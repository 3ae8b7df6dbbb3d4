"""Group-theory machinery: real spherical harmonics, Wigner-D blocks, and
real Clebsch-Gordan tables, each checked against independent oracles."""

import math

import numpy as np
import pytest
try:
    from scipy.special import sph_harm_y

    def sph_harm(m, l, phi, theta):
        return sph_harm_y(l, m, theta, phi)

except ImportError:  # older scipy
    from scipy.special import sph_harm
from sympy import S
from sympy.physics.quantum.cg import CG

from qmmnet import so3
from qmmnet.errors import InvalidRotation, SelectionRuleViolation

L_MAX_TESTED = 4


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# Real spherical harmonics


def test_y00_constant(rng):
    for _ in range(5):
        assert so3.real_sph_harm(0, 0, random_unit(rng)) == pytest.approx(
            1.0 / math.sqrt(4 * math.pi), abs=1e-15
        )


def test_l1_proportional_to_coordinates(rng):
    # real l=1 order (y, z, x), no Condon-Shortley phase
    c = math.sqrt(3.0 / (4 * math.pi))
    for _ in range(10):
        v = random_unit(rng)
        y = so3.sph_harm_vector(1, v)
        assert np.allclose(y, c * np.array([v[1], v[2], v[0]]), atol=1e-14)


def _quadrature_grid(n_theta=40, n_phi=80):
    """Gauss-Legendre in cos(theta) x trapezoid in phi: exact for integrands
    band-limited below l ~ 2*n_theta."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * (2 * math.pi / n_phi)
    points = []
    weights = []
    for ct, wt in zip(x, w):
        st = math.sqrt(1.0 - ct * ct)
        for p in phi:
            points.append((st * math.cos(p), st * math.sin(p), ct))
            weights.append(wt * 2 * math.pi / n_phi)
    return np.array(points), np.array(weights)


def test_orthonormality_by_quadrature():
    points, weights = _quadrature_grid()
    for l in range(L_MAX_TESTED + 1):
        ys = np.array([so3.sph_harm_vector(l, p) for p in points])  # (npts, 2l+1)
        gram = ys.T @ (weights[:, None] * ys)
        assert np.abs(gram - np.eye(2 * l + 1)).max() < 1e-10, f"l={l}"


def test_cross_l_orthogonality_by_quadrature():
    points, weights = _quadrature_grid()
    y2 = np.array([so3.sph_harm_vector(2, p) for p in points])
    y4 = np.array([so3.sph_harm_vector(4, p) for p in points])
    assert np.abs(y2.T @ (weights[:, None] * y4)).max() < 1e-10


def test_bad_m_raises():
    with pytest.raises(ValueError):
        so3.real_sph_harm(1, 2, (0.0, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Wigner-D


def test_wigner_identity():
    for l in range(L_MAX_TESTED + 1):
        assert np.array_equal(so3.wigner_d_real(l, np.eye(3)), np.eye(2 * l + 1))


def test_wigner_defining_property(rng):
    """Y_l(R v) = D^l(R) Y_l(v) at random vectors and rotations."""
    for _ in range(20):
        r = so3.random_rotation(rng)
        v = random_unit(rng)
        for l in range(L_MAX_TESTED + 1):
            lhs = so3.sph_harm_vector(l, r @ v)
            rhs = so3.wigner_d_real(l, r) @ so3.sph_harm_vector(l, v)
            assert np.abs(lhs - rhs).max() < 1e-10, f"l={l}"


def test_wigner_homomorphism(rng):
    for _ in range(10):
        r1 = so3.random_rotation(rng)
        r2 = so3.random_rotation(rng)
        for l in range(L_MAX_TESTED + 1):
            lhs = so3.wigner_d_real(l, r1 @ r2)
            rhs = so3.wigner_d_real(l, r1) @ so3.wigner_d_real(l, r2)
            assert np.abs(lhs - rhs).max() < 1e-10, f"l={l}"


def test_wigner_orthogonal(rng):
    for _ in range(10):
        r = so3.random_rotation(rng)
        for l in range(L_MAX_TESTED + 1):
            d = so3.wigner_d_real(l, r)
            assert np.abs(d @ d.T - np.eye(2 * l + 1)).max() < 1e-10
            assert np.linalg.det(d) == pytest.approx(1.0, abs=1e-9)


def test_invalid_rotation_rejected():
    with pytest.raises(InvalidRotation):
        so3.wigner_d_real(1, 2.0 * np.eye(3))
    with pytest.raises(InvalidRotation):
        so3.wigner_d_real(1, -np.eye(3))  # improper (det -1)


# ---------------------------------------------------------------------------
# Real Clebsch-Gordan tables vs two oracles


def _real_complex_unitary(l):
    """U_l with Y^real_l(v) = U_l Y^complex_l(v), fitted numerically so no
    phase-convention assumption enters the oracle."""
    rng = np.random.default_rng(7 + l)
    n = 2 * l + 1
    a = np.zeros((4 * n, n), dtype=complex)
    b = np.zeros((4 * n, n))
    for row in range(4 * n):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        theta = math.acos(v[2])
        phi = math.atan2(v[1], v[0])
        # scipy sph_harm(m, l, phi, theta): complex harmonics with
        # Condon-Shortley phase
        a[row] = [sph_harm(m, l, phi, theta) for m in range(-l, l + 1)]
        b[row] = so3.sph_harm_vector(l, v)
    u, _res, _rank, _sv = np.linalg.lstsq(a, b, rcond=None)
    return u.T  # (real m, complex mu)


def _complex_cg_oracle(l1, l2, l3):
    """Oracle 1: the real-basis intertwiner from sympy's complex
    Clebsch-Gordan coefficients.

    T = U1 U2 conj(U3) C_complex is purely real for even l1+l2+l3 and purely
    imaginary for odd (pseudo-tensor) paths; the nonzero part is returned.
    """
    u1 = _real_complex_unitary(l1)
    u2 = _real_complex_unitary(l2)
    u3 = _real_complex_unitary(l3)
    c_complex = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    for i, m1 in enumerate(range(-l1, l1 + 1)):
        for j, m2 in enumerate(range(-l2, l2 + 1)):
            m3 = m1 + m2
            if abs(m3) > l3:
                continue
            c_complex[i, j, m3 + l3] = float(
                CG(S(l1), S(m1), S(l2), S(m2), S(l3), S(m3)).doit()
            )
    t = np.einsum(
        "ma,nb,kc,abc->mnk", u1, u2, np.conj(u3), c_complex.astype(complex)
    )
    if (l1 + l2 + l3) % 2 == 0:
        assert np.abs(t.imag).max() < 1e-12
        return t.real
    assert np.abs(t.real).max() < 1e-12
    return t.imag


def _quadrature_triple(l1, l2, l3, points, weights):
    """Oracle 2: direct numerical integration of Y^r_1 Y^r_2 Y^r_3."""
    y1 = np.array([so3.sph_harm_vector(l1, p) for p in points])
    y2 = np.array([so3.sph_harm_vector(l2, p) for p in points])
    y3 = np.array([so3.sph_harm_vector(l3, p) for p in points])
    return np.einsum("p,pm,pn,pk->mnk", weights, y1, y2, y3)


def _aligned(tensor, reference):
    """Unit-normalize and sign-align tensor against reference (the tables
    are unique intertwiners only up to scale and sign)."""
    t = tensor / np.linalg.norm(tensor)
    r = reference / np.linalg.norm(reference)
    if np.sum(t * r) < 0:
        t = -t
    return t, r


TRIANGLE_PATHS = [
    (l1, l2, l3)
    for l1 in range(3)
    for l2 in range(3)
    for l3 in range(abs(l1 - l2), l1 + l2 + 1)
] + [(2, 2, 4), (1, 3, 4), (2, 3, 4)]


@pytest.mark.parametrize("l1,l2,l3", TRIANGLE_PATHS)
def test_cg_matches_complex_cg_oracle(l1, l2, l3):
    table = so3.cg_real(l1, l2, l3)
    oracle = _complex_cg_oracle(l1, l2, l3)
    t, r = _aligned(table, oracle)
    assert np.abs(t - r).max() < 1e-12


def test_cg_matches_quadrature_oracle():
    """Even-parity paths match the triple-product integral; odd (pseudo
    tensor) paths have identically vanishing triple products."""
    points, weights = _quadrature_grid()
    for (l1, l2, l3) in TRIANGLE_PATHS:
        table = so3.cg_real(l1, l2, l3)
        oracle = _quadrature_triple(l1, l2, l3, points, weights)
        if (l1 + l2 + l3) % 2 == 0:
            t, r = _aligned(table, oracle)
            assert np.abs(t - r).max() < 1e-6, (l1, l2, l3)
        else:
            assert np.abs(oracle).max() < 1e-10, (l1, l2, l3)


def test_cg_selection_rule():
    with pytest.raises(SelectionRuleViolation):
        so3.cg_real(0, 0, 1)


def test_cg_equivariance(rng):
    """D3 C = C contracted with D1, D2: the table intertwines rotations."""
    for (l1, l2, l3) in [(1, 1, 2), (2, 1, 1), (2, 2, 3)]:
        c = so3.cg_real(l1, l2, l3)
        r = so3.random_rotation(rng)
        d1 = so3.wigner_d_real(l1, r)
        d2 = so3.wigner_d_real(l2, r)
        d3 = so3.wigner_d_real(l3, r)
        lhs = np.einsum("mnk,ku->mnu", c, d3.T)
        rhs = np.einsum("am,bn,abu->mnu", d1, d2, c)
        assert np.abs(lhs - rhs).max() < 1e-12


# ---------------------------------------------------------------------------
# Irreps containers


def test_irreps_scaled_totals():
    spec = so3.IrrepsSpec.scaled(256)
    assert spec.total_channels == 256
    half = so3.IrrepsSpec.scaled(64)
    assert half.total_channels > 0
    assert all(n >= 1 for (_l, _p, n) in half.segments())


def test_rotate_feature_is_orthogonal(rng):
    r = so3.random_rotation(rng)
    rep = so3.RotationRep(r, l_max=4)
    spec = so3.IrrepsSpec.scaled(64)
    h = so3.IrrepsFeature.zeros(spec, n_atoms=4)
    for key in h.data:
        h.data[key] = rng.normal(size=h.data[key].shape)
    rotated = so3.rotate_feature(h, rep)
    for key in h.data:
        assert np.linalg.norm(rotated.data[key]) == pytest.approx(
            np.linalg.norm(h.data[key]), rel=1e-12
        )
    # invariant content is exactly preserved channel-wise
    assert np.abs(
        rotated.invariant_content() - h.invariant_content()
    ).max() < 1e-10
