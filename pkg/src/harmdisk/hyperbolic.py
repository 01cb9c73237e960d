"""Poincare-disk geometry: metric density, distances, geodesics, ideal
polygons, and the dihedral symmetry group D_k acting on target data.

Conventions (fixed for the whole package): the unit disk carries the metric
rho(zeta) |dzeta|^2 with rho = 4/(1-|zeta|^2)^2, so the curvature is -1 and
dist(0, r) = 2 artanh(r).  All operations are pure.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidParameterError

#: Sectional curvature of the target disk under the fixed density.
CURVATURE = -1.0

#: Iterates are kept at |zeta| <= 1 - CLAMP_MARGIN; see solver clamping.
CLAMP_MARGIN = 1e-12


@dataclass(frozen=True)
class HPoint:
    """A point of the open unit disk, |zeta| < 1."""

    zeta: complex

    def __post_init__(self):
        if not abs(self.zeta) < 1.0:
            raise DomainError(f"interior point required, got |zeta| = {abs(self.zeta)}")

    def __complex__(self):
        return complex(self.zeta)


@dataclass(frozen=True)
class IdealPoint:
    """A point of the ideal boundary circle, |zeta| = 1.

    Deliberately not accepted by interior-only operations (dist,
    conformal_factor): passing one raises DomainError.
    """

    zeta: complex

    def __post_init__(self):
        if not math.isclose(abs(self.zeta), 1.0, rel_tol=0, abs_tol=1e-12):
            raise DomainError(f"ideal point must have |zeta| = 1, got {abs(self.zeta)}")

    def __complex__(self):
        return complex(self.zeta)


def _interior(p):
    """Coerce p (HPoint / complex / real / ndarray) to interior coordinates."""
    if isinstance(p, IdealPoint):
        raise DomainError("ideal point passed to an interior-only operation")
    if isinstance(p, HPoint):
        return p.zeta
    z = np.asarray(p, dtype=complex)
    if np.any(np.abs(z) >= 1.0):
        raise DomainError("point outside the open unit disk")
    return z if z.ndim else complex(z)


def conformal_factor(p):
    """Metric density rho(zeta) = 4/(1-|zeta|^2)^2.  Accepts arrays."""
    z = _interior(p)
    w = 1.0 - np.abs(z) ** 2
    out = 4.0 / w**2
    return float(out) if np.ndim(out) == 0 else out


def log_density_z(p):
    """(log rho)_zeta = 2 conj(zeta) / (1-|zeta|^2), the connection term of
    the tension field in these coordinates."""
    z = _interior(p)
    return 2.0 * np.conj(z) / (1.0 - np.abs(z) ** 2)


def dist(a, b):
    """Hyperbolic distance arccosh(1 + 2|a-b|^2 / ((1-|a|^2)(1-|b|^2))).

    Evaluated as 2 asinh(|a-b| / sqrt((1-|a|^2)(1-|b|^2))), the same
    quantity written through sinh(d/2), which stays positive for nearby
    points where the arccosh form would round to zero.
    """
    za, zb = _interior(a), _interior(b)
    den = (1.0 - np.abs(za) ** 2) * (1.0 - np.abs(zb) ** 2)
    out = 2.0 * np.arcsinh(np.abs(za - zb) / np.sqrt(den))
    return float(out) if np.ndim(out) == 0 else out


def mobius_to_origin(a, z):
    """The disk isometry T(z) = (z - a)/(1 - conj(a) z) taking a to 0.

    a and z broadcast against each other.
    """
    a = np.asarray(a, dtype=complex)
    return (z - a) / (1.0 - np.conj(a) * z)


def mobius_from_origin(a, z):
    """Inverse of mobius_to_origin(a, .): z -> (z + a)/(1 + conj(a) z)."""
    a = np.asarray(a, dtype=complex)
    return (z + a) / (1.0 + np.conj(a) * z)


def geodesic_point(a, b, t):
    """Point at hyperbolic-arclength fraction t along the geodesic a -> b.

    t = 0 gives a, t = 1 gives b; t may be an array (broadcast against a, b).
    """
    za, zb = _interior(a), _interior(b)
    w = mobius_to_origin(za, zb)
    r = np.abs(w)
    d = 2.0 * np.arctanh(r)
    # direction of w; arbitrary (and irrelevant) when b == a
    with np.errstate(invalid="ignore"):
        u = np.where(r > 0, w / np.where(r > 0, r, 1.0), 0.0)
    p = np.tanh(0.5 * t * d) * u
    out = mobius_from_origin(za, p)
    return complex(out) if np.ndim(out) == 0 else out


def geodesic_step(p, v, t=1.0):
    """Exponential-map step: start at p with chart velocity v, follow the
    geodesic for time t.  The hyperbolic step length is sqrt(rho(p)) |v| t."""
    z = _interior(p)
    v = np.asarray(v, dtype=complex)
    v0 = v / (1.0 - np.abs(z) ** 2)  # velocity transported to the origin
    d = 2.0 * np.abs(v0) * t  # hyperbolic length: sqrt(rho(0)) = 2
    r = np.abs(v0)
    with np.errstate(invalid="ignore"):
        u = np.where(r > 0, v0 / np.where(r > 0, r, 1.0), 0.0)
    q = np.tanh(0.5 * d) * u
    out = mobius_from_origin(z, q)
    return complex(out) if np.ndim(out) == 0 else out


def clamp_to_disk(z, margin=CLAMP_MARGIN):
    """Radially clamp values to |z| <= 1 - margin.  Returns (clamped, n_hit)."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    lim = 1.0 - margin
    hit = r > lim
    out = np.where(hit, z * np.where(hit, lim / np.where(r > 0, r, 1.0), 1.0), z)
    return out, int(np.count_nonzero(hit))


# --- ideal polygons -------------------------------------------------------


def _check_k(k):
    if not isinstance(k, (int, np.integer)) or k % 2 != 0 or k < 4:
        raise InvalidParameterError(f"k must be an even integer >= 4, got {k!r}")
    return int(k)


@dataclass(frozen=True)
class IdealPolygon:
    """Regular ideal k-gon with vertices xi_j = e^{i pi/k} e^{2 pi i j/k}.

    The vertex set is invariant under conjugation and rotation by 2 pi/k;
    each side crosses a coordinate ray theta = 2 pi j / k.
    """

    k: int
    vertices: tuple

    def ideal_points(self):
        return tuple(IdealPoint(v) for v in self.vertices)


def polygon(k):
    """The regular ideal k-gon P_k (k even, >= 4)."""
    k = _check_k(k)
    verts = tuple(cmath.exp(1j * math.pi * (2 * j + 1) / k) for j in range(k))
    return IdealPolygon(k=k, vertices=verts)


def x_axis_chord(k):
    """Euclidean coordinate where the side of P_k crosses the positive x-axis:
    sec(pi/k) - tan(pi/k)."""
    k = _check_k(k)
    a = math.pi / k
    return 1.0 / math.cos(a) - math.tan(a)


def origin_bound(k):
    """C(k) = log((1 + sec - tan)/(1 - sec + tan)) with the angle pi/k: the
    hyperbolic distance from the origin to the x-axis crossing of a side."""
    k = _check_k(k)
    c = x_axis_chord(k)
    return math.log((1.0 + c) / (1.0 - c))


def side_circle(k, j=0):
    """Euclidean (center, radius) of the geodesic side crossing the ray
    theta = 2 pi j / k, joining xi_{j-1} to xi_j.  The circle is orthogonal
    to the unit circle: |center|^2 = 1 + radius^2."""
    k = _check_k(k)
    a = math.pi / k
    center = cmath.exp(2j * math.pi * j / k) / math.cos(a)
    return center, math.tan(a)


# --- dihedral symmetries --------------------------------------------------


@dataclass(frozen=True)
class DihedralElement:
    """Element of D_k acting on the disk: z -> e^{2 pi i j/k} z, optionally
    pre-composed with conjugation (reflect=True fixes the x-axis first)."""

    k: int
    j: int
    reflect: bool = False

    def __post_init__(self):
        _check_k(self.k)
        object.__setattr__(self, "j", self.j % self.k)

    def apply(self, z):
        w = np.conj(z) if self.reflect else np.asarray(z, dtype=complex)
        out = cmath.exp(2j * math.pi * self.j / self.k) * w
        return complex(out) if np.ndim(out) == 0 else out

    def compose(self, other):
        """self o other (apply other first)."""
        if self.k != other.k:
            raise InvalidParameterError("dihedral elements from different groups")
        if self.reflect:
            # e^{ia} conj(e^{ib} w) = e^{i(a-b)} conj(w)
            return DihedralElement(self.k, self.j - other.j, not other.reflect)
        return DihedralElement(self.k, self.j + other.j, other.reflect)

    def inverse(self):
        if self.reflect:
            return DihedralElement(self.k, self.j, True)
        return DihedralElement(self.k, -self.j, False)


def rotation(k, j=1):
    return DihedralElement(k, j, False)


def reflection(k, j=0):
    """Reflection fixing the ray theta = pi j / k (conjugation for j = 0)."""
    return DihedralElement(k, j, True)


def apply_symmetry(p, g: DihedralElement):
    """Apply a D_k element to a point (HPoint/IdealPoint/complex/array)."""
    if isinstance(p, HPoint):
        return HPoint(g.apply(p.zeta))
    if isinstance(p, IdealPoint):
        return IdealPoint(g.apply(p.zeta))
    return g.apply(p)
