"""Hot integral kernels: numba-compiled by default, pure numpy otherwise.

Set QMMNET_NUMBA=0 to force the numpy fallback (used by the benchmark and as
an escape hatch on platforms where numba is unavailable).

Atomic orbitals are expanded into primitive Cartesian terms
``coef * (x-cx)^px (y-cy)^py (z-cz)^pz exp(-alpha r_c^2)`` and all two-center
integrals reduce to products of 1D Gaussian moment sums over term pairs.
"""

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("QMMNET_NUMBA", "1") != "0"

_DFACT = np.array([1.0, 1.0, 1.0, 3.0, 3.0, 15.0, 15.0, 105.0, 105.0], dtype=np.float64)
# _DFACT[n] = (n-1)!! for the even-moment formula, n up to 8

_BINOM = np.array(
    [[math.comb(i, j) if j <= i else 0 for j in range(9)] for i in range(9)],
    dtype=np.float64,
)


def _s1d_py(i, j, a, b, ax, bx):
    p = a + b
    mu = a * b / p
    px = (a * ax + b * bx) / p
    pref = math.exp(-mu * (ax - bx) ** 2)
    pa = px - ax
    pb = px - bx
    total = 0.0
    for s1 in range(i + 1):
        c1 = _BINOM[i, s1] * pa ** (i - s1)
        for s2 in range(j + 1):
            n = s1 + s2
            if n % 2 == 1:
                continue
            c2 = _BINOM[j, s2] * pb ** (j - s2)
            total += c1 * c2 * _DFACT[n] / (2.0 * p) ** (n // 2)
    return pref * total * math.sqrt(math.pi / p)


def _pair_overlap_py(terms_a, terms_b):
    """Overlap of two AOs given their primitive term tables.

    terms: ndarray (n_terms, 8): coef, alpha, px, py, pz, cx, cy, cz.
    """
    s = 0.0
    for t1 in terms_a:
        for t2 in terms_b:
            v = t1[0] * t2[0]
            for ax in range(3):
                v *= _s1d_py(
                    int(t1[2 + ax]),
                    int(t2[2 + ax]),
                    t1[1],
                    t2[1],
                    t1[5 + ax],
                    t2[5 + ax],
                )
            s += v
    return s


def _pair_dipole_py(terms_a, terms_b, origin):
    """Three components of <a|(r - origin)|b>."""
    out = np.zeros(3)
    for t1 in terms_a:
        for t2 in terms_b:
            s_ax = np.empty(3)
            m_ax = np.empty(3)
            for ax in range(3):
                i, j = int(t1[2 + ax]), int(t2[2 + ax])
                a, b = t1[1], t2[1]
                ca, cb = t1[5 + ax], t2[5 + ax]
                s_ax[ax] = _s1d_py(i, j, a, b, ca, cb)
                m_ax[ax] = _s1d_py(i, j + 1, a, b, ca, cb) + (
                    cb - origin[ax]
                ) * s_ax[ax]
            c = t1[0] * t2[0]
            out[0] += c * m_ax[0] * s_ax[1] * s_ax[2]
            out[1] += c * s_ax[0] * m_ax[1] * s_ax[2]
            out[2] += c * s_ax[0] * s_ax[1] * m_ax[2]
    return out


def _onsite_triple_py(terms_a, terms_b, terms_c):
    """Integral of a product of three same-center AO/auxiliary expansions."""
    s = 0.0
    for t1 in terms_a:
        for t2 in terms_b:
            for t3 in terms_c:
                c = t1[0] * t2[0] * t3[0]
                p = t1[1] + t2[1] + t3[1]
                v = c
                for ax in range(3):
                    n = int(t1[2 + ax] + t2[2 + ax] + t3[2 + ax])
                    if n % 2 == 1:
                        v = 0.0
                        break
                    v *= _DFACT[n] / (2.0 * p) ** (n // 2) * math.sqrt(math.pi / p)
                s += v
    return s


if USE_NUMBA:
    try:
        from numba import njit

        _s1d = njit(cache=True)(_s1d_py)

        @njit(cache=True)
        def _pair_overlap(terms_a, terms_b):
            s = 0.0
            for t1 in terms_a:
                for t2 in terms_b:
                    v = t1[0] * t2[0]
                    for ax in range(3):
                        v *= _s1d(
                            int(t1[2 + ax]),
                            int(t2[2 + ax]),
                            t1[1],
                            t2[1],
                            t1[5 + ax],
                            t2[5 + ax],
                        )
                    s += v
            return s

        @njit(cache=True)
        def _pair_dipole(terms_a, terms_b, origin):
            out = np.zeros(3)
            s_ax = np.empty(3)
            m_ax = np.empty(3)
            for t1 in terms_a:
                for t2 in terms_b:
                    for ax in range(3):
                        i, j = int(t1[2 + ax]), int(t2[2 + ax])
                        a, b = t1[1], t2[1]
                        ca, cb = t1[5 + ax], t2[5 + ax]
                        s_ax[ax] = _s1d(i, j, a, b, ca, cb)
                        m_ax[ax] = _s1d(i, j + 1, a, b, ca, cb) + (
                            cb - origin[ax]
                        ) * s_ax[ax]
                    c = t1[0] * t2[0]
                    out[0] += c * m_ax[0] * s_ax[1] * s_ax[2]
                    out[1] += c * s_ax[0] * m_ax[1] * s_ax[2]
                    out[2] += c * s_ax[0] * s_ax[1] * m_ax[2]
            return out

        _dfact = _DFACT

        @njit(cache=True)
        def _onsite_triple(terms_a, terms_b, terms_c):
            s = 0.0
            for t1 in terms_a:
                for t2 in terms_b:
                    for t3 in terms_c:
                        c = t1[0] * t2[0] * t3[0]
                        p = t1[1] + t2[1] + t3[1]
                        v = c
                        for ax in range(3):
                            n = int(t1[2 + ax] + t2[2 + ax] + t3[2 + ax])
                            if n % 2 == 1:
                                v = 0.0
                                break
                            v *= (
                                _dfact[n]
                                / (2.0 * p) ** (n // 2)
                                * math.sqrt(math.pi / p)
                            )
                        s += v
            return s

    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:
    _s1d = _s1d_py
    _pair_overlap = _pair_overlap_py
    _pair_dipole = _pair_dipole_py
    _onsite_triple = _onsite_triple_py


def pair_overlap(terms_a, terms_b):
    return _pair_overlap(terms_a, terms_b)


def pair_dipole(terms_a, terms_b, origin):
    return _pair_dipole(terms_a, terms_b, np.asarray(origin, dtype=np.float64))


def onsite_triple(terms_a, terms_b, terms_c):
    return _onsite_triple(terms_a, terms_b, terms_c)
