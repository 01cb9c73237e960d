"""Vectorized reference kernels for the per-triangle energy sweeps.

The discrete energy of a map zeta (complex values per vertex class) is

    E = sum_T rho(c_T) * A_T * (|u_z|^2 + |u_zbar|^2),

where c_T is the centroid of the three target values, A_T the flat triangle
area in its computation frame, and u_z = sum_a zeta_a g_a with g_a the
z-derivative of the hat function of corner a (so u_zbar = sum_a zeta_a
conj(g_a)).  rho is the disk density 4/(1-|c|^2)^2.

All kernels take the same mesh arrays: tri (T,3) int32 vertex-class ids,
g (T,3) complex hat-function derivatives, area (T,) float.  The Cython
backend implements identical signatures.
"""

import numpy as np


def _fields(zeta, tri, g):
    v = zeta[tri]
    c = v.mean(axis=1)
    w = 1.0 - np.abs(c) ** 2
    rho = 4.0 / w**2
    uz = np.einsum("ta,ta->t", v, g)
    uzb = np.einsum("ta,ta->t", v, np.conj(g))
    return c, w, rho, uz, uzb


def energy(zeta, tri, g, area):
    """Total discrete energy (float)."""
    _, _, rho, uz, uzb = _fields(zeta, tri, g)
    s = np.abs(uz) ** 2 + np.abs(uzb) ** 2
    return float(np.sum(rho * area * s))


def energy_gradient(zeta, tri, g, area, nclasses):
    """Energy and its Wirtinger gradient G_a = dE/d(conj zeta_a).

    The differential of E at zeta is dE = 2 Re[conj(G) . dzeta].
    """
    c, w, rho, uz, uzb = _fields(zeta, tri, g)
    s = np.abs(uz) ** 2 + np.abs(uzb) ** 2
    e_total = float(np.sum(rho * area * s))
    rho_cbar = 2.0 * rho * c / w
    base = (area * rho_cbar * s / 3.0)[:, None]
    contrib = area[:, None] * (
        (rho * uz)[:, None] * np.conj(g) + (rho * uzb)[:, None] * g
    ) + base
    idx = tri.ravel()
    grad = np.bincount(idx, weights=contrib.real.ravel(), minlength=nclasses)
    grad = grad + 1j * np.bincount(
        idx, weights=contrib.imag.ravel(), minlength=nclasses
    )
    return e_total, grad


def hessian_pattern(tri, nclasses):
    """COO (rows, cols) for the real 2N x 2N Hessian; order matches
    hessian_values: per triangle, per corner pair (a,b), entries
    (x_a,x_b), (y_a,y_b), (x_a,y_b), (y_a,x_b)."""
    t = tri.shape[0]
    rows = np.empty((t, 3, 3, 4), dtype=np.int64)
    cols = np.empty_like(rows)
    n = nclasses
    for a in range(3):
        for b in range(3):
            ia = tri[:, a]
            ib = tri[:, b]
            rows[:, a, b, 0] = ia
            cols[:, a, b, 0] = ib
            rows[:, a, b, 1] = ia + n
            cols[:, a, b, 1] = ib + n
            rows[:, a, b, 2] = ia
            cols[:, a, b, 2] = ib + n
            rows[:, a, b, 3] = ia + n
            cols[:, a, b, 3] = ib
    return rows.ravel(), cols.ravel()


def hessian_values(zeta, tri, g, area):
    """Entries of the real Hessian, aligned with hessian_pattern.

    Complex second derivatives per triangle: H_ab = d2E/(dzeta_b dconj(zeta_a))
    (Hermitian), B_ab = d2E/(dconj(zeta_b) dconj(zeta_a)) (symmetric); the real
    blocks are xx = 2 Re(H+B), yy = 2 Re(H-B), xy = 2 Im(B-H), yx = 2 Im(B+H).
    """
    c, w, rho, uz, uzb = _fields(zeta, tri, g)
    s = np.abs(uz) ** 2 + np.abs(uzb) ** 2
    rho_c = 2.0 * rho * np.conj(c) / w
    rho_cbar = 2.0 * rho * c / w
    rho_ccbar = 2.0 * rho * (w + 3.0 * np.abs(c) ** 2) / w**2
    rho_cbarcbar = 6.0 * rho * c**2 / w**2
    t = tri.shape[0]
    vals = np.empty((t, 3, 3, 4), dtype=np.float64)
    fa = [uz * np.conj(g[:, a]) + uzb * g[:, a] for a in range(3)]
    for a in range(3):
        for b in range(3):
            hab = area * (
                rho * (np.conj(g[:, a]) * g[:, b] + g[:, a] * np.conj(g[:, b]))
                + rho_c / 3.0 * fa[a]
                + rho_cbar / 3.0 * np.conj(fa[b])
                + s / 9.0 * rho_ccbar
            )
            bab = area * (rho_cbar / 3.0 * (fa[a] + fa[b]) + s / 9.0 * rho_cbarcbar)
            vals[:, a, b, 0] = 2.0 * (hab.real + bab.real)
            vals[:, a, b, 1] = 2.0 * (hab.real - bab.real)
            vals[:, a, b, 2] = 2.0 * (bab.imag - hab.imag)
            vals[:, a, b, 3] = 2.0 * (bab.imag + hab.imag)
    return vals.ravel()


def triangle_densities(zeta, tri, g):
    """Per-triangle holomorphic/anti-holomorphic energy densities
    (H_T, L_T) = rho(c_T) (|u_z|^2, |u_zbar|^2)."""
    _, _, rho, uz, uzb = _fields(zeta, tri, g)
    return rho * np.abs(uz) ** 2, rho * np.abs(uzb) ** 2
