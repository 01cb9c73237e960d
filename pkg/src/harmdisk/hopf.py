"""Hopf differentials and their complex-analytic diagnostics.

For a map u into the Poincare disk the Hopf differential is the (2,0)
part of the pullback metric,

    phi = rho(u) u_z conj(u_zbar) dz^2,

holomorphic exactly when u is harmonic.  This module extracts phi on
glued meshes and runs the analytic checks built on it: discrete
holomorphy residuals, Laurent spectra on mesh rings with the D_k
selection rule, the annulus-doubling reflection identity, zero divisors
by argument-principle winding, matching of zero arrangements against
the five symmetric patterns on the square punctured torus, orientation
signs at zeros, and horizontal/vertical foliation tracing.
"""

import numpy as np

from . import differential, solver
from .domain import MARK_INTERIOR
from .errors import (
    DivisorError,
    InvalidParameterError,
    InvalidRegionError,
    VerificationError,
)

__all__ = [
    "Arrangement",
    "DbarNorms",
    "Divisor",
    "HopfField",
    "LaurentSpectrum",
    "Trajectory",
    "Zero",
    "classify_divisor_d4",
    "enumerate_arrangements",
    "find_divisor",
    "holomorphic_residual",
    "hopf",
    "laurent",
    "orientation_at_zeros",
    "reflection_identity_check",
    "selection_rule_check",
    "trace_foliation",
]


class HopfField:
    """Per-class Hopf values in chart coordinates, with a quality mask.

    Chart transitions in our atlases are rigid (z -> +-z + c), so the
    quadratic differential has a single well-defined value per vertex
    class; log-frame charts are converted to their chart coordinate.
    """

    def __init__(self, mesh, values, ok=None):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=np.complex128)
        if self.values.shape != (mesh.n_classes,):
            raise InvalidParameterError("field shape does not match the mesh")
        if ok is None:
            ok = np.isfinite(self.values.real) & np.isfinite(self.values.imag)
        self.ok = np.asarray(ok, dtype=bool)


def hopf(mesh, u):
    """Extract phi = rho(u) u_z conj(u_zbar) per vertex class."""
    vals = solver._values(u)
    phi = differential.hopf_pointwise(mesh, vals)
    ok = differential.stencils(mesh).ok & ~mesh.cone
    return HopfField(mesh, phi, ok)


class DbarNorms:
    """Sup and mass-weighted L2 norm of |dbar phi| over measured classes."""

    def __init__(self, sup, l2, n_measured):
        self.sup = float(sup)
        self.l2 = float(l2)
        self.n_measured = int(n_measured)

    def __repr__(self):
        return (f"DbarNorms(sup={self.sup:.3e}, l2={self.l2:.3e}, "
                f"n={self.n_measured})")


def holomorphic_residual(field):
    """Discrete dbar norms of a Hopf field; zero to O(h^2) when harmonic.

    Measured on interior classes with a trusted quadratic stencil, at
    least two hops from any cone vertex.
    """
    mesh = field.mesh
    res = differential.dbar_residual(mesh, field.values)
    d = differential.derivatives(mesh, field.values)
    sel = (
        (mesh.marker == MARK_INTERIOR)
        & d.ok2
        & field.ok
        & ~differential.near_cone_mask(mesh)
    )
    if not sel.any():
        raise InvalidParameterError("no interior classes to measure")
    mass = solver._chart_mass(mesh)[sel]
    r = res[sel]
    return DbarNorms(r.max(), np.sqrt(np.sum(mass * r**2)), sel.sum())


class LaurentSpectrum:
    """Laurent coefficients c_n of phi on one contour circle.

    c_n = (1/2 pi) int phi(R e^{it}) R^{-n} e^{-i n t} dt, computed by
    the periodic trapezoid rule on the ring's uniform angular stations
    (spectrally accurate; exact on polynomial modes below the station
    Nyquist index).
    """

    def __init__(self, chart, radius, requested_radius, n_min, coeffs, stations):
        self.chart = chart
        self.radius = float(radius)
        self.requested_radius = float(requested_radius)
        self.n_min = int(n_min)
        self.coeffs = np.asarray(coeffs, dtype=np.complex128)
        self.stations = int(stations)

    @property
    def n_max(self):
        return self.n_min + len(self.coeffs) - 1

    @property
    def ns(self):
        return np.arange(self.n_min, self.n_min + len(self.coeffs))

    def __getitem__(self, n):
        if not self.n_min <= n <= self.n_max:
            raise IndexError(f"index {n} outside [{self.n_min}, {self.n_max}]")
        return complex(self.coeffs[n - self.n_min])

    def __repr__(self):
        return (f"LaurentSpectrum(chart={self.chart!r}, R={self.radius:g}, "
                f"n=[{self.n_min}, {self.n_max}])")


def laurent(field, radius, n_range=(-14, 10), chart=None):
    """Laurent spectrum of a Hopf field on the mesh ring nearest `radius`.

    Contours snap to mesh rings (the snapped radius is recorded); the
    index window must stay below the aliasing limit of the ring's
    station count.
    """
    mesh = field.mesh
    radii = mesh.ring_radii(chart)
    if len(radii) == 0:
        raise InvalidRegionError("mesh has no rings")
    lo, hi = radii.min(), radii.max()
    if not lo * (1 - 1e-9) <= radius <= hi * (1 + 1e-9):
        raise InvalidRegionError(
            f"contour radius {radius:g} outside the meshed band [{lo:g}, {hi:g}]"
        )
    snapped = radii[np.argmin(np.abs(radii - radius))]
    ring = mesh.ring_at(snapped, chart)
    n_min, n_max = int(n_range[0]), int(n_range[1])
    if n_max - n_min + 1 > len(ring.classes):
        raise InvalidParameterError(
            "index window wider than the ring station count (aliasing)"
        )
    vals = field.values[ring.classes]
    ns = np.arange(n_min, n_max + 1)
    modes = np.exp(-1j * np.outer(ns, ring.theta))
    coeffs = (modes @ vals) / len(vals) / snapped**ns.astype(float)
    return LaurentSpectrum(ring.chart, snapped, radius, n_min, coeffs,
                           len(ring.classes))


def selection_rule_check(spec, k):
    """Forbidden-index mass ratio of a spectrum under D_k symmetry.

    The rotation law forces c_n = 0 unless k divides n + 2; returns
    sum_{forbidden} |c_n| / sum_{allowed} |c_n|.
    """
    if k < 1:
        raise InvalidParameterError("need k >= 1")
    allowed = (spec.ns + 2) % k == 0
    mag = np.abs(spec.coeffs)
    den = mag[allowed].sum()
    if den == 0.0:
        return float("inf") if mag[~allowed].sum() > 0 else 0.0
    return float(mag[~allowed].sum() / den)


def reflection_identity_check(field, radii=None):
    """Worst relative violation of phi(z) = phi(1/z) / z^4 on ring pairs.

    The annulus doubling has the holomorphic involution z -> 1/z up to
    the map symmetry; a Hopf field of a symmetric harmonic map satisfies
    the identity exactly (equivalently c_{-(n+2)} = c_{n-2}).  Evaluated
    on mirror ring pairs (R, 1/R); stations at angle t pair with
    stations at -t.
    """
    mesh = field.mesh
    all_r = mesh.ring_radii()
    if radii is None:
        radii = [r for r in all_r if r > 1 + 1e-12]
    if not radii:
        raise InvalidRegionError("no ring pairs to check (need radii > 1)")
    worst = 0.0
    for r in radii:
        outer = mesh.ring_at(r)
        inner = mesh.ring_at(1.0 / r)
        vo = field.values[outer.classes]
        vi = field.values[inner.classes]
        m = len(vo)
        if len(vi) != m:
            raise InvalidRegionError("ring pair station counts differ")
        z = r * np.exp(1j * outer.theta)
        mirrored = vi[(-np.arange(m)) % m] / z**4
        scale = max(np.abs(vo).max(), np.abs(mirrored).max(), 1e-300)
        worst = max(worst, np.abs(vo - mirrored).max() / scale)
    return worst


# -- zero divisors ------------------------------------------------------------


class Zero:
    """One located zero: chart id, chart position, winding multiplicity."""

    def __init__(self, chart, position, multiplicity, class_index):
        self.chart = chart
        self.position = complex(position)
        self.multiplicity = int(multiplicity)
        self.class_index = int(class_index)

    def __repr__(self):
        return (f"Zero({self.chart!r}, {self.position:.4g}, "
                f"mult={self.multiplicity})")


class Divisor:
    """Zeros of a Hopf field plus the growth-fitted pole order."""

    def __init__(self, zeros, pole_order_at_puncture, growth_exponent,
                 growth_stderr, meta):
        self.zeros = list(zeros)
        self.pole_order_at_puncture = pole_order_at_puncture
        self.growth_exponent = growth_exponent
        self.growth_stderr = growth_stderr
        self.meta = dict(meta)

    def total_multiplicity(self):
        return sum(z.multiplicity for z in self.zeros)

    def riemann_roch_defect(self, genus):
        """Located multiplicity minus pole order minus (4g - 4)."""
        if self.pole_order_at_puncture is None:
            raise InvalidParameterError("no pole estimate on this divisor")
        return (self.total_multiplicity() - self.pole_order_at_puncture
                - (4 * genus - 4))

    def __repr__(self):
        return (f"Divisor({self.zeros!r}, "
                f"pole={self.pole_order_at_puncture})")


def _same_chart_neighbors(mesh):
    """Per-class arrays of (neighbor class, chart distance) in the rep chart."""
    cached = getattr(mesh, "_chart_nbrs", None)
    if cached is not None:
        return cached
    adj = mesh.adjacency().tocoo()
    same = mesh.class_chart[adj.row] == mesh.class_chart[adj.col]
    row, col = adj.row[same], adj.col[same]
    dist = np.abs(mesh.class_z[col] - mesh.class_z[row])
    order = np.argsort(row, kind="stable")
    row, col, dist = row[order], col[order], dist[order]
    starts = np.searchsorted(row, np.arange(mesh.n_classes + 1))
    mesh._chart_nbrs = (starts, col, dist)
    return mesh._chart_nbrs


def _local_h(mesh, cls):
    starts, _, dist = _same_chart_neighbors(mesh)
    d = dist[starts[cls]:starts[cls + 1]]
    if len(d) == 0:
        raise DivisorError("isolated class in its chart")
    return float(np.median(d))


def _annulus_classes(mesh, cls, lo, hi):
    """Same-chart classes with lo < |z - z_cls| <= hi, sorted by angle."""
    sel = np.nonzero(mesh.class_chart == mesh.class_chart[cls])[0]
    dz = mesh.class_z[sel] - mesh.class_z[cls]
    r = np.abs(dz)
    keep = (r > lo) & (r <= hi)
    sel, dz = sel[keep], dz[keep]
    order = np.argsort(np.angle(dz))
    return sel[order]


def _winding(phi, loop_vals):
    steps = np.angle(loop_vals / np.roll(loop_vals, 1))
    if np.abs(steps).max() > 2.0:
        return None  # phase jump too coarse to trust
    return steps.sum() / (2.0 * np.pi)


def find_divisor(field, k=4, g=1):
    """Locate the zero divisor of a Hopf field by winding counts.

    Zero candidates are interior local minima of |phi| below an adaptive
    threshold (a fraction of the median |phi| on the surrounding
    annulus); each candidate's multiplicity is the argument-principle
    winding of phi on a small same-chart circle, retried at two other
    radii if the circle grazes a zero.  On punctured-torus meshes the
    pole order at the puncture is the growth exponent of max |phi| over
    the outer rings plus 4 (the z^2 dz^2 end gives exponent k - 2 and
    pole order k + 2).
    """
    mesh = field.mesh
    phi = field.values
    mag = np.abs(phi)
    near_cone = differential.near_cone_mask(mesh)
    adj = mesh.adjacency().tocoo()
    nb_min = np.full(mesh.n_classes, np.inf)
    np.minimum.at(nb_min, adj.row, mag[adj.col])
    cand = np.nonzero(
        (mesh.marker == MARK_INTERIOR)
        & field.ok
        & ~near_cone
        & (mag <= nb_min)
    )[0]

    # adaptive threshold: zeros are far below the surrounding field level
    confirmed = []
    for c in cand:
        h = _local_h(mesh, c)
        ann = _annulus_classes(mesh, c, 4 * h, 8 * h)
        if len(ann) < 8:
            ann = _annulus_classes(mesh, c, 4 * h, 12 * h)
        if len(ann) < 8:
            continue
        if mag[c] < 0.1 * np.median(mag[ann]):
            confirmed.append((c, h))

    # cluster plateau duplicates, keep the deepest representative
    confirmed.sort(key=lambda ch: mag[ch[0]])
    kept = []
    for c, h in confirmed:
        zc = mesh.class_z[c]
        dup = any(
            mesh.class_chart[c] == mesh.class_chart[c2]
            and abs(zc - mesh.class_z[c2]) <= 2.5 * max(h, h2)
            for c2, h2 in kept
        )
        if not dup:
            kept.append((c, h))

    zeros = []
    dropped = 0
    for c, h in kept:
        mult = None
        for lo, hi in ((3.0, 5.0), (4.5, 7.0), (2.0, 3.5)):
            ann = _annulus_classes(mesh, c, lo * h, hi * h)
            if len(ann) < 8:
                continue
            vals = phi[ann]
            if np.abs(vals).min() < 0.25 * np.median(np.abs(vals)):
                continue  # contour grazes another zero; retry
            w = _winding(phi, vals)
            if w is None or abs(w - round(w)) > 0.15:
                continue
            mult = int(round(w))
            break
        if mult is None:
            raise DivisorError(
                f"no clean winding contour around class {c} after 3 attempts"
            )
        if mult >= 1:
            zeros.append(Zero(mesh.charts[mesh.class_chart[c]].id,
                              mesh.class_z[c], mult, c))
        else:
            dropped += 1

    pole = exponent = stderr = None
    if mesh.meta.get("builder") == "punctured-torus":
        exponent, stderr = _growth_exponent(mesh, mag)
        pole = int(round(exponent)) + 4
    return Divisor(zeros, pole, exponent, stderr,
                   {"k": k, "g": g, "dropped_candidates": dropped})


def _growth_exponent(mesh, mag, radii=None):
    """Least-squares slope of log max|phi| against log R on outer rings."""
    all_r = np.sort(mesh.ring_radii())
    if radii is None:
        outer = all_r[all_r >= np.sqrt(all_r[-1] * all_r[0])]
        radii = outer if len(outer) >= 3 else all_r[-3:]
    tops = np.array([mag[mesh.ring_at(r).classes].max() for r in radii])
    x = np.log(np.asarray(radii, dtype=float))
    y = np.log(tops)
    coef, cov = np.polyfit(x, y, 1, cov=True)
    return float(coef[0]), float(np.sqrt(max(cov[0, 0], 0.0)))


# -- zero arrangements on the square punctured torus --------------------------


class Arrangement:
    """One symmetric zero pattern (n_P, n_Q, n_R, n_S, n_T).

    `counts` is the published tuple; `site_multiplicities` is the
    semantic pattern (orbit counts at P/Q/T, multiplicity at each R
    point, multiplicity at S) whose weighted sum 4nP+4nQ+2nR+nS+4nT
    equals the six available zeros.  The published b-family tuples carry
    the order-2 zeros in the R slot; the semantic tuples put them at S,
    where the quarter-turn fixed point actually sits.
    """

    def __init__(self, label, counts, site_multiplicities, sites=None,
                 notes=()):
        self.label = label
        self.counts = tuple(counts)
        self.site_multiplicities = tuple(site_multiplicities)
        self.sites = sites
        self.notes = list(notes)

    def __repr__(self):
        return f"Arrangement({self.label!r}, {self.counts})"


_PRINTED = {
    "a": (0, 0, 2, 2, 0),
    "b1": (0, 0, 2, 0, 1),
    "b2": (1, 0, 2, 0, 0),
    "b3": (0, 1, 2, 0, 0),
    "c": (0, 0, 0, 6, 0),
}


def _label_semantic(t):
    n_p, n_q, n_r, n_s, n_t = t
    if n_s == 6:
        return "c"
    if n_r == 2:
        return "a"
    if n_t == 1:
        return "b1"
    if n_p == 1:
        return "b2"
    if n_q == 1:
        return "b3"
    return None


def enumerate_arrangements():
    """The five zero arrangements allowed by the D_4 symmetry constraints.

    Solves 4 n_P + 4 n_Q + 2 n_R + n_S + 4 n_T = 6 over nonnegative
    integers with the fixed-point constraints: the multiplicity n_S at
    the quarter-turn fixed point is 2 mod 4 when nonzero, and the
    multiplicity n_R at each half-turn fixed point is even.
    """
    found = []
    for n_p in range(2):
        for n_q in range(2):
            for n_r in (0, 2):
                for n_s in (0, 2, 6):
                    for n_t in range(2):
                        if 4 * n_p + 4 * n_q + 2 * n_r + n_s + 4 * n_t == 6:
                            found.append((n_p, n_q, n_r, n_s, n_t))
    out = []
    for t in found:
        label = _label_semantic(t)
        if label is None:
            raise VerificationError(f"unlabeled arrangement {t}")
        out.append(Arrangement(label, _PRINTED[label], t))
    order = {"a": 0, "b1": 1, "b2": 2, "b3": 3, "c": 4}
    out.sort(key=lambda a: order[a.label])
    return out


def _tag_distance(mesh, cls, tag):
    """Chart distance from a class to a tagged class set (same chart only)."""
    members = mesh.tags[tag]
    same = members[mesh.class_chart[members] == mesh.class_chart[cls]]
    if len(same) == 0:
        return np.inf
    return np.abs(mesh.class_z[same] - mesh.class_z[cls]).min()


def _site_of(mesh, cls, tol):
    if cls in mesh.tags["origin_Hm"]:
        return "S"
    if cls in mesh.tags["origin_L"] or cls in mesh.tags["origin_Hp"]:
        return "R"
    if min(_tag_distance(mesh, cls, "circle_C1"),
           _tag_distance(mesh, cls, "circle_D1")) <= tol:
        return "P"
    if min(_tag_distance(mesh, cls, "circle_A"),
           _tag_distance(mesh, cls, "circle_B")) <= tol:
        return "T"
    return "Q"


def classify_divisor_d4(div, mesh):
    """Match a located divisor against the five symmetric arrangements.

    Each zero is assigned a site label by which symmetry sets contain
    it within 2h: S and R are the rotation fixed points (the H- origin
    and the L/H+ origins), P lies on the square-chart mirror circles,
    T on the disk-chart ones; off-circle zeros must form a full Klein
    four-group orbit to count as Q.  The aggregated pattern is labeled
    a/b1/b2/b3/c, or `other` with diagnostics when no pattern matches
    (which would contradict the symmetry argument and must be surfaced).
    """
    if mesh.meta.get("builder") != "punctured-torus":
        raise InvalidParameterError("classification needs the torus mesh")
    notes = []
    sites = []
    for z in div.zeros:
        tol = 2.0 * _local_h(mesh, z.class_index)
        sites.append(_site_of(mesh, z.class_index, tol))

    # Q sites must close up under the Klein group (conj, point, both)
    zset = {z.class_index for z in div.zeros}
    perms = [mesh.symmetry("conj"), mesh.symmetry("point"),
             mesh.symmetry("conj_point")]
    for z, site in zip(div.zeros, sites):
        if site == "Q":
            orbit = {int(p[z.class_index]) for p in perms}
            if not orbit <= zset:
                notes.append(
                    f"zero at class {z.class_index} is off every symmetry "
                    "set and its orbit is incomplete"
                )

    mult = {s: 0 for s in "PQRST"}
    orbit_sizes = {"P": 4, "Q": 4, "T": 4}
    for z, site in zip(div.zeros, sites):
        mult[site] += z.multiplicity
    semantic = None
    if not notes:
        ok = all(mult[s] % orbit_sizes[s] == 0 for s in "PQT")
        r_each = mult["R"] // 2 if mult["R"] % 2 == 0 else None
        if ok and r_each is not None:
            semantic = (mult["P"] // 4, mult["Q"] // 4, r_each, mult["S"],
                        mult["T"] // 4)
    label = _label_semantic(semantic) if semantic is not None else None
    if label is None:
        notes.append(f"no arrangement matches site multiplicities {mult}")
        observed = (mult["P"], mult["Q"], mult["R"], mult["S"], mult["T"])
        return Arrangement("other", observed, observed, sites, notes)
    return Arrangement(label, _PRINTED[label], semantic, sites, notes)


def orientation_at_zeros(div, u, noise_fraction=0.02):
    """Sign of the mean Jacobian density near each zero (0 if ambiguous).

    Averages J = H - L with chart-area weights over the same-chart
    annulus (h, 4h] around each zero; |mean| below noise_fraction of the
    peak energy density is reported as 0 (undetermined).
    """
    mesh = u.mesh
    dens = solver.energy_decomposition(mesh, u)
    mass = solver._chart_mass(mesh)
    interior = mesh.marker == MARK_INTERIOR
    noise = noise_fraction * dens.e[interior].max()
    signs = []
    for z in div.zeros:
        h = _local_h(mesh, z.class_index)
        ann = _annulus_classes(mesh, z.class_index, h, 4 * h)
        if len(ann) == 0:
            signs.append(0)
            continue
        avg = np.sum(mass[ann] * dens.J[ann]) / np.sum(mass[ann])
        signs.append(0 if abs(avg) <= noise else int(np.sign(avg)))
    return signs


# -- foliation tracing ---------------------------------------------------------


class Trajectory:
    """One traced leaf: chart-coordinate polyline segments plus end reason."""

    def __init__(self, segments, phi_length, reason):
        self.segments = segments  # list of (chart_id, complex ndarray)
        self.phi_length = float(phi_length)
        self.reason = reason

    def __repr__(self):
        return (f"Trajectory(len={self.phi_length:.3g}, "
                f"segments={len(self.segments)}, reason={self.reason!r})")


def _transition_maps(mesh):
    """Empirical rigid transitions z -> a z + b between chart pairs.

    Recovered from classes with raw members in two charts; disconnected
    overlaps (the two banks of a slit) may produce several maps per
    chart pair, resolved by proximity at use sites.
    """
    cached = getattr(mesh, "_transitions", None)
    if cached is not None:
        return cached
    starts, order = mesh.class_members()
    buckets = {}
    for c in range(mesh.n_classes):
        raws = order[starts[c]:starts[c + 1]]
        if len(raws) < 2:
            continue
        for r1 in raws:
            for r2 in raws:
                c1, c2 = int(mesh.raw_chart[r1]), int(mesh.raw_chart[r2])
                if c1 != c2:
                    buckets.setdefault((c1, c2), []).append(
                        (mesh.raw_z[r1], mesh.raw_z[r2])
                    )
    out = {}
    for key, pts in buckets.items():
        remaining = sorted(pts, key=lambda p: (p[0].real, p[0].imag))
        maps = []
        while len(remaining) >= 2:
            z10, z20 = remaining[0]
            dists = [abs(p[0] - z10) for p in remaining[1:]]
            z11, z21 = remaining[1 + int(np.argmin(dists))]
            if z11 == z10:
                remaining.pop(0)
                continue
            a = (z21 - z20) / (z11 - z10)
            b = z20 - a * z10
            matched = [abs(p[1] - (a * p[0] + b)) < 1e-9 * (1 + abs(p[1]))
                       for p in remaining]
            if sum(matched) < 2:
                remaining.pop(0)
                continue
            maps.append((a, b))
            remaining = [p for p, hit in zip(remaining, matched) if not hit]
        out[key] = maps
    mesh._transitions = out
    return out


class _LeafSampler:
    """Evaluate a Hopf field at arbitrary chart points near an anchor class.

    Positions and values come from the anchor's one-ring, expressed in
    the requested chart: direct raw members where the chart covers them,
    otherwise through the empirical transition maps (branch chosen by
    proximity).  Requires every chart to compute in its own coordinate
    (true for single-chart meshes and the torus atlas).
    """

    def __init__(self, field):
        mesh = field.mesh
        for ch in mesh.charts:
            if ch.meta.get("frame", "z") != "z" and len(mesh.charts) > 1:
                raise InvalidParameterError(
                    "foliation tracing needs chart-native frames"
                )
        self.mesh = mesh
        self.values = field.values
        self.tmaps = _transition_maps(mesh)
        self.adj = mesh.adjacency()
        starts, order = mesh.class_members()
        self._mstarts, self._morder = starts, order

    def _raws(self, cls):
        return self._morder[self._mstarts[cls]:self._mstarts[cls + 1]]

    def member_in_chart(self, cls, chart, near):
        """(position, dz_rep/dz_chart) of a class in a chart, or None."""
        mesh = self.mesh
        best = None
        for r in self._raws(cls):
            if int(mesh.raw_chart[r]) == chart:
                g = mesh.raw_align[r]
                cand = (mesh.raw_z[r], g)
                if best is None or abs(cand[0] - near) < abs(best[0] - near):
                    best = cand
        if best is not None:
            return best
        rep_chart = int(mesh.class_chart[cls])
        for a, b in self.tmaps.get((chart, rep_chart), ()):
            pos = (mesh.class_z[cls] - b) / a
            if best is None or abs(pos - near) < abs(best[0] - near):
                best = (pos, a)
        return best

    def ring(self, anchor):
        nb = self.adj[anchor].indices
        return np.concatenate(([anchor], nb))

    def fit(self, anchor, chart, z):
        """Linear LSQ value and gradient scale of phi at a chart point.

        Returns (phi, h, grad, nearest class) with h the local spacing and
        grad = |phi_z| + |phi_zbar| from the same fit, or None when the
        anchor's ring does not cover z.
        """
        pos, val = [], []
        classes = []
        for c in self.ring(anchor):
            m = self.member_in_chart(int(c), chart, z)
            if m is None:
                continue
            p, g = m
            pos.append(p)
            val.append(self.values[c] * g * g)
            classes.append(int(c))
        if len(pos) < 4:
            return None
        pos = np.asarray(pos)
        val = np.asarray(val)
        d = pos - z
        r = np.abs(d)
        order = np.argsort(r)
        h = np.median(np.abs(pos[1:] - pos[0])) if len(pos) > 1 else np.inf
        if r.min() > 1.5 * h:
            return None
        cols = np.stack([np.ones_like(d), d, np.conj(d)], axis=1)
        coef, *_ = np.linalg.lstsq(cols, val, rcond=None)
        grad = abs(coef[1]) + abs(coef[2])
        return complex(coef[0]), float(h), float(grad), classes[int(order[0])]


def trace_foliation(field, seeds, direction="horizontal", arclength=10.0,
                    chart=None, max_steps=20000):
    """Trace horizontal or vertical leaves of the Hopf foliation.

    Integrates dz/dt = e^{i a} / sqrt(phi) with a = 0 (horizontal,
    phi dz^2 > 0) or pi/2 (vertical, phi dz^2 < 0) at unit phi-speed by
    RK4, step size tied to the local mesh spacing, square-root branch
    continued along the leaf.  Leaves cross chart gluings and stop at
    zeros, the mesh boundary, or the arclength budget.

    Seeds are complex chart points; `chart` names their chart (defaults
    to the first).  Returns one Trajectory per seed.
    """
    if direction not in ("horizontal", "vertical"):
        raise InvalidParameterError("direction must be horizontal or vertical")
    mesh = field.mesh
    ids = [c.id for c in mesh.charts]
    c0 = 0 if chart is None else (ids.index(chart) if isinstance(chart, str)
                                  else int(chart))
    sampler = _LeafSampler(field)
    phase = 1.0 if direction == "horizontal" else 1.0j
    scale = np.abs(field.values[field.ok]).max()
    out = []
    for seed in np.atleast_1d(np.asarray(seeds, dtype=complex)):
        out.append(_trace_one(sampler, seed, c0, phase, arclength, scale,
                              max_steps, ids))
    return out


def _nearest_class_in_chart(mesh, chart, z):
    sel = np.nonzero(mesh.class_chart == chart)[0]
    if len(sel) == 0:
        return None
    return int(sel[np.argmin(np.abs(mesh.class_z[sel] - z))])


def _trace_one(sampler, z, chart, phase, budget, scale, max_steps, ids):
    mesh = sampler.mesh
    anchor = _nearest_class_in_chart(mesh, chart, z)
    segments = []
    pts = [z]
    length = 0.0
    wprev = None
    reason = "max-steps"
    for _ in range(max_steps):
        probe = sampler.fit(anchor, chart, z)
        if probe is None:
            switched = _switch_chart(sampler, anchor, chart, z)
            if switched is None:
                reason = "boundary"
                break
            chart2, z2, a = switched
            segments.append((ids[chart], np.asarray(pts)))
            pts = [z2]
            if wprev is not None:
                wprev = wprev / a
            chart, z = chart2, z2
            probe = sampler.fit(anchor, chart, z)
            if probe is None:
                reason = "boundary"
                break
        phi, h, grad, anchor = probe
        # steps are ~0.35 h in chart distance; stop once the linear model
        # places a zero within half a step or the value is at roundoff,
        # otherwise the march can hop straight across the singularity
        if abs(phi) < 1e-12 * scale or abs(phi) <= 0.175 * h * grad:
            reason = "zero"
            break
        w = np.sqrt(phi)
        if wprev is not None and abs(-w - wprev) < abs(w - wprev):
            w = -w
        wprev = w
        dt = 0.35 * h * abs(w)
        if length + dt > budget:
            dt = budget - length
        if dt <= 1e-14 * max(budget, 1.0):
            reason = "arclength" if budget - length <= 1e-12 * budget else "zero"
            break

        def rhs(p):
            pr = sampler.fit(anchor, chart, p)
            if pr is None:
                return None
            ph = pr[0]
            if abs(ph) < 1e-14 * scale:
                return None
            wp = np.sqrt(ph)
            if abs(-wp - w) < abs(wp - w):
                wp = -wp
            return phase / wp

        k1 = rhs(z)
        k2 = rhs(z + 0.5 * dt * k1) if k1 is not None else None
        k3 = rhs(z + 0.5 * dt * k2) if k2 is not None else None
        k4 = rhs(z + dt * k3) if k3 is not None else None
        if k4 is None:
            z = z + dt * (k1 if k1 is not None else phase / w)
        else:
            z = z + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        length += dt
        pts.append(z)
        if length >= budget * (1 - 1e-12):
            reason = "arclength"
            break
    segments.append((ids[chart], np.asarray(pts)))
    return Trajectory(segments, length, reason)


def _switch_chart(sampler, anchor, chart, z):
    """Move a point to another chart covering the anchor's neighborhood."""
    mesh = sampler.mesh
    best = None
    for c in sampler.ring(anchor):
        for r in sampler._raws(int(c)):
            c2 = int(mesh.raw_chart[r])
            if c2 == chart:
                continue
            for a, b in sampler.tmaps.get((chart, c2), ()):
                z2 = a * z + b
                d = abs(z2 - mesh.raw_z[r])
                if best is None or d < best[0]:
                    best = (d, c2, z2, a)
    if best is None:
        return None
    _, c2, z2, a = best
    return c2, z2, a
