"""Triangulated multi-chart flat domains with edge identifications.

Domains are unions of flat charts (polar disks/annuli, Cartesian squares)
whose boundary pieces are glued by affine maps z -> a z + b with |a| = 1.
Gluing is a pure vertex identification: identified vertices form classes,
and each class remembers, per raw occurrence, the derivative of the
transition to its representative chart (needed to rotate derivative data
into a common frame).  At slit tips the transition derivative is path
dependent; such classes are flagged as cone points automatically.

Structured quads are split along alternating (checkerboard) diagonals so
that conjugation, point reflection, and rotation by two angular stations
are exact mesh automorphisms; triangles are oriented counterclockwise in
their computation frame.  Annulus charts compute in the log frame
(energy is conformally invariant, so the kernels are unchanged), which
keeps triangle shapes uniform across decades of radius.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConstructionError, InvalidParameterError, InvalidRegionError

MARK_INTERIOR = 0
MARK_DIRICHLET = 1
MARK_FREE = 2

_MARK_NAMES = {"interior": MARK_INTERIOR, "dirichlet": MARK_DIRICHLET, "free": MARK_FREE}


@dataclass
class Chart:
    """One flat coordinate chart (domain conformal factor sigma == 1)."""

    id: str
    kind: str  # disk-polar | annulus-polar | square-cartesian
    meta: dict = field(default_factory=dict)


@dataclass
class Ring:
    """Closed circular contour of vertex classes in a polar chart."""

    chart: str
    radius: float
    classes: np.ndarray  # ordered by angular station
    theta: np.ndarray


@dataclass
class HomologyLoop:
    """Closed edge loop given as an ordered list of vertex classes."""

    name: str
    classes: np.ndarray  # loop[i] -- loop[i+1] are mesh edges; wraps around


class _VertexPool:
    """Raw vertices plus a union-find over them with frame alignment.

    align[i] is the derivative d(frame of parent[i])/d(frame of i) of the
    gluing map, so after compression it converts derivative data in vertex
    i's chart to the class representative's chart.  Inconsistent alignments
    along different gluing paths mark the class as a cone point.
    """

    def __init__(self):
        self.chart = []
        self.z = []
        self.parent = []
        self.align = []
        self.cone = []

    def add(self, chart, z):
        idx = len(self.z)
        self.chart.append(chart)
        self.z.append(complex(z))
        self.parent.append(idx)
        self.align.append(1.0 + 0.0j)
        self.cone.append(False)
        return idx

    def find(self, i):
        if self.parent[i] == i:
            return i, 1.0 + 0.0j
        root, a = self.find(self.parent[i])
        a = a * self.align[i]
        self.parent[i] = root
        self.align[i] = a
        return root, a

    def union(self, i, j, a_ij):
        """Identify i and j, where a_ij = d(frame_j)/d(frame_i)."""
        ri, ai = self.find(i)
        rj, aj = self.find(j)
        if ri == rj:
            if abs(aj * a_ij / ai - 1.0) > 1e-9:
                self.cone[ri] = True
            return
        self.parent[rj] = ri
        self.align[rj] = ai / (a_ij * aj)  # d(frame_ri)/d(frame_rj)
        self.cone[ri] = self.cone[ri] or self.cone[rj]


class _Builder:
    """Accumulates raw vertices and oriented triangles, then finalizes."""

    def __init__(self, charts):
        self.charts = charts
        self.pool = _VertexPool()
        self.tri_raw = []
        self.tri_chart = []
        self.tri_frame = []

    def add_tri(self, chart, ids, frame):
        self.tri_raw.append(ids)
        self.tri_chart.append(chart)
        self.tri_frame.append(frame)

    def add_quad(self, chart, ids, frame, parity):
        """Split the ccw quad (a,b,c,d) along a diagonal chosen by parity."""
        a, b, c, d = ids
        fa, fb, fc, fd = frame
        if parity % 2 == 0:
            self.add_tri(chart, (a, b, c), (fa, fb, fc))
            self.add_tri(chart, (a, c, d), (fa, fc, fd))
        else:
            self.add_tri(chart, (a, b, d), (fa, fb, fd))
            self.add_tri(chart, (b, c, d), (fb, fc, fd))

    def finish(self, meta):
        pool = self.pool
        nraw = len(pool.z)
        class_of = np.empty(nraw, dtype=np.int64)
        align = np.empty(nraw, dtype=np.complex128)
        roots = {}
        rep_raw = []
        for i in range(nraw):
            r, a = pool.find(i)
            if r not in roots:
                roots[r] = len(rep_raw)
                rep_raw.append(r)
            class_of[i] = roots[r]
            align[i] = a
        rep_raw = np.asarray(rep_raw, dtype=np.int64)
        cone = np.zeros(len(rep_raw), dtype=bool)
        for r, c in roots.items():
            cone[c] = pool.cone[r]
        return GluedMesh(
            charts=self.charts,
            raw_chart=np.asarray(pool.chart, dtype=np.int32),
            raw_z=np.asarray(pool.z, dtype=np.complex128),
            class_of=class_of,
            raw_align=align,
            rep_raw=rep_raw,
            cone=cone,
            tri_raw=np.asarray(self.tri_raw, dtype=np.int64),
            tri_chart=np.asarray(self.tri_chart, dtype=np.int32),
            tri_frame=np.asarray(self.tri_frame, dtype=np.complex128),
            meta=meta,
        )


def _hat_gradients(tri_frame):
    """Signed areas and z-derivatives g_a of the corner hat functions."""
    e1 = tri_frame[:, 2] - tri_frame[:, 1]
    e2 = tri_frame[:, 0] - tri_frame[:, 2]
    e3 = tri_frame[:, 1] - tri_frame[:, 0]
    area = 0.5 * np.imag(np.conj(e3) * (-e2))
    g = np.empty_like(tri_frame)
    g[:, 0] = -1j * np.conj(e1) / (4.0 * area)
    g[:, 1] = -1j * np.conj(e2) / (4.0 * area)
    g[:, 2] = -1j * np.conj(e3) / (4.0 * area)
    return area, g


class GluedMesh:
    """Immutable triangulated glued domain.  Build via the module builders."""

    def __init__(self, charts, raw_chart, raw_z, class_of, raw_align, rep_raw,
                 cone, tri_raw, tri_chart, tri_frame, meta):
        self.charts = charts
        self.raw_chart = raw_chart
        self.raw_z = raw_z
        self.class_of = class_of
        self.raw_align = raw_align
        self.rep_raw = rep_raw
        self.n_classes = len(rep_raw)
        self.class_chart = raw_chart[rep_raw]
        self.class_z = raw_z[rep_raw]
        self.cone = cone
        self.marker = np.zeros(self.n_classes, dtype=np.int8)
        self.tri_raw = tri_raw
        self.tri_chart = tri_chart
        self.tri_class = class_of[tri_raw]
        self.tri_frame = tri_frame
        self.tri_area, self.tri_g = _hat_gradients(tri_frame)
        if np.any(self.tri_area <= 0):
            bad = int(np.argmin(self.tri_area))
            raise ConstructionError(
                f"triangle {bad} has non-positive area {self.tri_area[bad]:.3e}"
            )
        self.rings = []
        self.tags = {}
        self.symmetries = {}
        self.meta = dict(meta)
        self._edges = None
        self._adj = None
        self._tri_z = None

    @property
    def tri_z(self):
        """Chart coordinates of triangle corners (frame may differ)."""
        if self._tri_z is None:
            self._tri_z = self.raw_z[self.tri_raw]
        return self._tri_z

    # -- markers and tags --------------------------------------------------

    def set_marker(self, classes, marker):
        self.marker[np.asarray(classes)] = _MARK_NAMES[marker]

    def classes_with_marker(self, marker):
        return np.nonzero(self.marker == _MARK_NAMES[marker])[0]

    @property
    def free_mask(self):
        """Degrees of freedom: everything except dirichlet classes."""
        return self.marker != MARK_DIRICHLET

    # -- topology ----------------------------------------------------------

    def _edge_data(self):
        if self._edges is None:
            t = self.tri_class
            a = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
            b = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
            und = np.minimum(a, b) * self.n_classes + np.maximum(a, b)
            uniq, counts = np.unique(und, return_counts=True)
            directed = a * self.n_classes + b
            self._edges = (a, b, uniq, counts, directed)
        return self._edges

    def euler_characteristic(self):
        _, _, uniq, _, _ = self._edge_data()
        return self.n_classes - len(uniq) + len(self.tri_class)

    def boundary_edges(self):
        _, _, uniq, counts, _ = self._edge_data()
        single = uniq[counts == 1]
        return np.stack([single // self.n_classes, single % self.n_classes], axis=1)

    def boundary_component_count(self):
        be = self.boundary_edges()
        if len(be) == 0:
            return 0
        nodes = np.unique(be)
        idx = np.searchsorted(nodes, be)
        m = sparse.coo_matrix(
            (np.ones(len(be)), (idx[:, 0], idx[:, 1])),
            shape=(len(nodes), len(nodes)),
        )
        ncomp, _ = sparse.csgraph.connected_components(m, directed=False)
        return ncomp

    def genus(self):
        chi = self.euler_characteristic()
        b = self.boundary_component_count()
        g2 = 2 - chi - b
        if g2 % 2:
            raise ConstructionError("non-orientable or inconsistent complex")
        return g2 // 2

    def validate(self):
        """Check orientation consistency and vertex fans; raise on failure."""
        _, _, uniq, counts, directed = self._edge_data()
        if np.any(counts > 2):
            bad = uniq[counts > 2][0]
            raise ConstructionError(
                f"edge ({bad // self.n_classes}, {bad % self.n_classes}) "
                f"shared by more than two triangles"
            )
        du, dc = np.unique(directed, return_counts=True)
        if np.any(dc > 1):
            bad = du[dc > 1][0]
            raise ConstructionError(
                f"directed edge ({bad // self.n_classes}, {bad % self.n_classes}) "
                f"repeated: inconsistent orientation"
            )
        succ = [dict() for _ in range(self.n_classes)]
        for (va, vb, vc) in self.tri_class:
            succ[va][vb] = vc
            succ[vb][vc] = va
            succ[vc][va] = vb
        on_boundary = np.zeros(self.n_classes, dtype=bool)
        on_boundary[self.boundary_edges().ravel()] = True
        for v in range(self.n_classes):
            link = succ[v]
            if not link:
                raise ConstructionError(f"vertex class {v} has no triangles")
            if on_boundary[v]:
                continue
            start = next(iter(link))
            cur = link[start]
            steps = 1
            while cur != start and cur in link and steps <= len(link):
                cur = link[cur]
                steps += 1
            if cur != start or steps != len(link):
                raise ConstructionError(
                    f"interior vertex class {v} has an open or split fan"
                )
        return {
            "classes": self.n_classes,
            "triangles": len(self.tri_class),
            "chi": self.euler_characteristic(),
            "boundaries": self.boundary_component_count(),
        }

    # -- class occurrence table (for derivative stencils) -------------------

    def class_members(self):
        """(starts, raw_indices): raw vertices grouped by class id."""
        order = np.argsort(self.class_of, kind="stable")
        starts = np.searchsorted(self.class_of[order], np.arange(self.n_classes + 1))
        return starts, order

    def adjacency(self):
        if self._adj is None:
            a, b, _, _, _ = self._edge_data()
            m = sparse.coo_matrix(
                (np.ones(len(a), dtype=np.int8), (a, b)),
                shape=(self.n_classes, self.n_classes),
            )
            self._adj = ((m + m.T) > 0).tocsr()
        return self._adj

    # -- regions -------------------------------------------------------------

    def _polar_tri_mask(self):
        kinds = np.array(
            [c.kind in ("disk-polar", "annulus-polar") for c in self.charts]
        )
        return kinds[self.tri_chart]

    def ring_radii(self, chart=None):
        return np.array(
            [r.radius for r in self.rings if chart is None or r.chart == chart]
        )

    def ring_at(self, radius, chart=None):
        for r in self.rings:
            if chart is not None and r.chart != chart:
                continue
            if abs(r.radius - radius) <= 1e-9 * max(1.0, abs(radius)):
                return r
        raise InvalidRegionError(f"no ring at radius {radius}")

    def region_mask(self, region):
        """Boolean triangle mask for a region spec.

        Specs: None or 'all'; ('chart', id); ('disk', r); ('annulus', a, b);
        ('sigma', r) = square charts plus the polar part inside radius r.
        Radial cuts must coincide with mesh rings so no triangle straddles.
        """
        t = len(self.tri_class)
        if region is None or region == "all" or region == ("all",):
            return np.ones(t, dtype=bool)
        if not isinstance(region, tuple):
            raise InvalidRegionError(f"bad region spec {region!r}")
        kind = region[0]
        if kind == "chart":
            ids = [c.id for c in self.charts]
            if region[1] not in ids:
                raise InvalidRegionError(f"no chart {region[1]!r}")
            return self.tri_chart == ids.index(region[1])
        centroid = np.abs(self.tri_z.mean(axis=1))
        polar = self._polar_tri_mask()
        if kind == "disk":
            r = float(region[1])
            self.ring_at(r)
            return polar & (centroid <= r)
        if kind == "annulus":
            a, b = float(region[1]), float(region[2])
            if not a < b:
                raise InvalidRegionError("annulus region needs a < b")
            self.ring_at(a)
            self.ring_at(b)
            return polar & (centroid >= a) & (centroid <= b)
        if kind == "sigma":
            r = float(region[1])
            self.ring_at(r)
            return (~polar) | (centroid <= r)
        raise InvalidRegionError(f"bad region spec {region!r}")

    # -- finite element matrices ----------------------------------------------

    def stiffness_matrix(self):
        """P1 stiffness (cotan) matrix over classes, csr format."""
        t = len(self.tri_class)
        rows = np.broadcast_to(self.tri_class[:, :, None], (t, 3, 3))
        cols = np.broadcast_to(self.tri_class[:, None, :], (t, 3, 3))
        g = self.tri_g
        vals = (
            4.0
            * np.real(np.conj(g)[:, :, None] * g[:, None, :])
            * self.tri_area[:, None, None]
        )
        m = sparse.coo_matrix(
            (vals.ravel(), (rows.ravel(), cols.ravel())),
            shape=(self.n_classes, self.n_classes),
        )
        return m.tocsr()

    def mass_vector(self):
        """Lumped flat vertex masses m_a = sum of A_T/3 over incident T."""
        m = np.zeros(self.n_classes)
        np.add.at(m, self.tri_class, np.broadcast_to(
            (self.tri_area / 3.0)[:, None], self.tri_class.shape))
        return m

    # -- symmetries -------------------------------------------------------------

    def add_symmetry(self, name, raw_perm):
        """Register a symmetry given as a permutation of raw vertices."""
        perm = np.full(self.n_classes, -1, dtype=np.int64)
        perm[self.class_of] = self.class_of[raw_perm]
        if np.any(perm < 0) or len(np.unique(perm)) != self.n_classes:
            raise ConstructionError(f"symmetry {name!r} is not a class permutation")
        self.symmetries[name] = perm

    def symmetry(self, name):
        if name not in self.symmetries:
            raise InvalidParameterError(
                f"mesh has no symmetry {name!r}; available: {sorted(self.symmetries)}"
            )
        return self.symmetries[name]

    def rotation_permutation(self, k):
        """Class permutation for rotation by 2pi/k, if an exact automorphism."""
        if "rot2" not in self.symmetries:
            raise InvalidParameterError("mesh has no rotational symmetry")
        n_theta = self.meta["n_theta"]
        if n_theta % k or (n_theta // k) % 2:
            raise InvalidParameterError(
                f"rotation by 2pi/{k} is not a mesh automorphism at n_theta={n_theta}"
            )
        perm = np.arange(self.n_classes)
        rot2 = self.symmetries["rot2"]
        for _ in range((n_theta // k) // 2):
            perm = rot2[perm]
        return perm

    def check_automorphism(self, perm):
        """Verify perm maps triangles to triangles; return +1/-1 orientation."""

        def canon(a, b, c):
            return min((a, b, c), (b, c, a), (c, a, b))

        table = {canon(*t): None for t in map(tuple, self.tri_class)}
        orient = None
        for a, b, c in self.tri_class:
            pa, pb, pc = perm[a], perm[b], perm[c]
            if canon(pa, pb, pc) in table:
                o = 1
            elif canon(pa, pc, pb) in table:
                o = -1
            else:
                raise ConstructionError(
                    "permutation does not map triangles to triangles"
                )
            if orient is None:
                orient = o
            elif orient != o:
                raise ConstructionError("permutation mixes orientations")
        return orient

    # -- serialization ------------------------------------------------------------

    def to_dict(self):
        return {
            "format": "harmdisk-mesh",
            "version": 1,
            "charts": [
                {"id": c.id, "kind": c.kind, "meta": c.meta} for c in self.charts
            ],
            "vertices": {
                "chart": self.raw_chart.tolist(),
                "x": self.raw_z.real.tolist(),
                "y": self.raw_z.imag.tolist(),
                "class": self.class_of.tolist(),
                "align_x": self.raw_align.real.tolist(),
                "align_y": self.raw_align.imag.tolist(),
            },
            "classes": {
                "rep": self.rep_raw.tolist(),
                "marker": self.marker.tolist(),
                "cone": self.cone.astype(int).tolist(),
            },
            "triangles": {
                "chart": self.tri_chart.tolist(),
                "raw": self.tri_raw.tolist(),
                "frame_x": self.tri_frame.real.tolist(),
                "frame_y": self.tri_frame.imag.tolist(),
            },
            "rings": [
                {
                    "chart": r.chart,
                    "radius": r.radius,
                    "classes": r.classes.tolist(),
                    "theta": r.theta.tolist(),
                }
                for r in self.rings
            ],
            "tags": {k: np.asarray(v).tolist() for k, v in self.tags.items()},
            "symmetries": {k: v.tolist() for k, v in self.symmetries.items()},
            "meta": self.meta,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "harmdisk-mesh":
            raise InvalidParameterError("not a mesh dictionary")
        v = d["vertices"]
        tri = d["triangles"]
        mesh = cls(
            charts=[Chart(c["id"], c["kind"], c.get("meta", {})) for c in d["charts"]],
            raw_chart=np.asarray(v["chart"], dtype=np.int32),
            raw_z=np.asarray(v["x"]) + 1j * np.asarray(v["y"]),
            class_of=np.asarray(v["class"], dtype=np.int64),
            raw_align=np.asarray(v["align_x"]) + 1j * np.asarray(v["align_y"]),
            rep_raw=np.asarray(d["classes"]["rep"], dtype=np.int64),
            cone=np.asarray(d["classes"]["cone"], dtype=bool),
            tri_raw=np.asarray(tri["raw"], dtype=np.int64),
            tri_chart=np.asarray(tri["chart"], dtype=np.int32),
            tri_frame=np.asarray(tri["frame_x"]) + 1j * np.asarray(tri["frame_y"]),
            meta=d.get("meta", {}),
        )
        mesh.marker = np.asarray(d["classes"]["marker"], dtype=np.int8)
        mesh.rings = [
            Ring(r["chart"], r["radius"], np.asarray(r["classes"], dtype=np.int64),
                 np.asarray(r["theta"]))
            for r in d.get("rings", [])
        ]
        mesh.tags = {
            k: np.asarray(val, dtype=np.int64) for k, val in d.get("tags", {}).items()
        }
        mesh.symmetries = {
            k: np.asarray(val, dtype=np.int64)
            for k, val in d.get("symmetries", {}).items()
        }
        return mesh

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


# -- shared construction helpers ------------------------------------------------


def _check_res(name, value, minimum=8):
    if not isinstance(value, (int, np.integer)) or value < minimum:
        raise InvalidParameterError(f"{name} must be an integer >= {minimum}")


def _polar_band(bld, chart, inner_ids, outer_ids, inner_fr, outer_fr, radial_index):
    """Quads between two closed rings; frame arrays carry an unwrapped
    station at index m for the seam cell."""
    m = len(inner_ids)
    for j in range(m):
        j1 = (j + 1) % m
        ids = (inner_ids[j], outer_ids[j], outer_ids[j1], inner_ids[j1])
        fr = (inner_fr[j], outer_fr[j], outer_fr[j + 1], inner_fr[j + 1])
        bld.add_quad(chart, ids, fr, radial_index + j)


def _stations(n_theta):
    return 2.0 * np.pi * np.arange(n_theta + 1) / n_theta


# -- builders ---------------------------------------------------------------------


def build_disk(s, n_r, n_theta):
    """Polar disk mesh of radius s; the circle gamma_s is marked dirichlet.

    Uniform radial spacing (ring radius s*i/n_r is exact at dyadic
    fractions, so probe radii like s/2 are exact ring radii), uniform
    angular stations, checkerboard diagonal split, center fan.
    """
    if not s > 0:
        raise InvalidParameterError("disk radius must be positive")
    _check_res("n_r", n_r)
    _check_res("n_theta", n_theta)
    if n_theta % 2:
        raise InvalidParameterError("n_theta must be even")
    charts = [Chart("disk", "disk-polar", {"s": float(s), "frame": "z"})]
    bld = _Builder(charts)
    theta = _stations(n_theta)
    unit = np.exp(1j * theta)
    radii = [s * (i / n_r) for i in range(n_r + 1)]
    center = bld.pool.add(0, 0.0)
    ring_ids = []
    for i in range(1, n_r + 1):
        ring_ids.append([bld.pool.add(0, radii[i] * u) for u in unit[:n_theta]])
    z1 = radii[1] * unit
    first = ring_ids[0]
    for m in range(n_theta):
        m1 = (m + 1) % n_theta
        bld.add_tri(0, (center, first[m], first[m1]), (0.0, z1[m], z1[m + 1]))
    for i in range(1, n_r):
        _polar_band(bld, 0, ring_ids[i - 1], ring_ids[i],
                    radii[i] * unit, radii[i + 1] * unit, i)
    meta = {"builder": "disk", "s": float(s), "n_r": n_r, "n_theta": n_theta}
    mesh = _finish_polar(bld, meta, ring_ids, radii[1:], theta[:n_theta], "disk")
    mesh.tags["center"] = np.array([mesh.class_of[center]])
    mesh.set_marker(mesh.rings[-1].classes, "dirichlet")
    mesh.tags["outer"] = mesh.rings[-1].classes
    return mesh


def _finish_polar(bld, meta, ring_ids, ring_radii, theta, chart_id):
    mesh = bld.finish(meta)
    for rid, rr in zip(ring_ids, ring_radii):
        mesh.rings.append(
            Ring(chart_id, float(rr), mesh.class_of[np.asarray(rid)], theta.copy())
        )
    n_theta = meta["n_theta"]
    conj_perm = np.arange(len(mesh.raw_z))
    rot2_perm = np.arange(len(mesh.raw_z))
    ms = np.arange(n_theta)
    for rid in ring_ids:
        rid = np.asarray(rid)
        conj_perm[rid] = rid[(-ms) % n_theta]
        rot2_perm[rid] = rid[(ms + 2) % n_theta]
    mesh.add_symmetry("conj", conj_perm)
    mesh.add_symmetry("rot2", rot2_perm)
    return mesh


def build_annulus(r, s, n_r, n_theta, inner_marker="free"):
    """Annulus r < |z| < s, geometric radii, log-frame computation.

    gamma_s is dirichlet; gamma_r carries inner_marker ('free' or
    'dirichlet').
    """
    if not (0 < r < s):
        raise InvalidParameterError("need 0 < r < s")
    if inner_marker not in ("free", "dirichlet"):
        raise InvalidParameterError("inner_marker must be 'free' or 'dirichlet'")
    _check_res("n_r", n_r)
    _check_res("n_theta", n_theta)
    if n_theta % 2:
        raise InvalidParameterError("n_theta must be even")
    charts = [Chart("annulus", "annulus-polar",
                    {"r": float(r), "s": float(s), "frame": "log"})]
    bld = _Builder(charts)
    theta = _stations(n_theta)
    unit = np.exp(1j * theta)
    lr = np.log(r) + (np.log(s) - np.log(r)) * np.arange(n_r + 1) / n_r
    radii = np.exp(lr)
    radii[0], radii[-1] = r, s
    ring_ids = [
        [bld.pool.add(0, radii[i] * u) for u in unit[:n_theta]]
        for i in range(n_r + 1)
    ]
    for i in range(n_r):
        _polar_band(bld, 0, ring_ids[i], ring_ids[i + 1],
                    lr[i] + 1j * theta, lr[i + 1] + 1j * theta, i)
    meta = {"builder": "annulus", "r": float(r), "s": float(s),
            "n_r": n_r, "n_theta": n_theta}
    mesh = _finish_polar(bld, meta, ring_ids, radii, theta[:n_theta], "annulus")
    mesh.set_marker(mesh.rings[0].classes, inner_marker)
    mesh.set_marker(mesh.rings[-1].classes, "dirichlet")
    mesh.tags["inner"] = mesh.rings[0].classes
    mesh.tags["outer"] = mesh.rings[-1].classes
    return mesh


def build_doubled_annulus(s, n_r, n_theta):
    """Annulus 1/s < |z| < s, symmetric under z -> 1/conj(z) about |z| = 1.

    n_r radial intervals per half (2 n_r total).  Both boundary circles are
    dirichlet; the core circle |z| = 1 is tagged 'core'.  The reflection is
    an exact mesh automorphism ('mirror'): log radii pair by negation.
    """
    if not s > 1:
        raise InvalidParameterError("need s > 1")
    _check_res("n_r", n_r)
    _check_res("n_theta", n_theta)
    if n_theta % 2:
        raise InvalidParameterError("n_theta must be even")
    charts = [Chart("annulus", "annulus-polar",
                    {"r": 1.0 / float(s), "s": float(s), "frame": "log"})]
    bld = _Builder(charts)
    theta = _stations(n_theta)
    unit = np.exp(1j * theta)
    logs = np.log(s)
    lr = np.array([((i - n_r) / n_r) * logs for i in range(2 * n_r + 1)])
    radii = np.exp(lr)
    radii[n_r] = 1.0
    ring_ids = [
        [bld.pool.add(0, radii[i] * u) for u in unit[:n_theta]]
        for i in range(2 * n_r + 1)
    ]
    for i in range(2 * n_r):
        _polar_band(bld, 0, ring_ids[i], ring_ids[i + 1],
                    lr[i] + 1j * theta, lr[i + 1] + 1j * theta, i)
    meta = {"builder": "doubled-annulus", "s": float(s),
            "n_r": n_r, "n_theta": n_theta}
    mesh = _finish_polar(bld, meta, ring_ids, radii, theta[:n_theta], "annulus")
    mesh.set_marker(mesh.rings[0].classes, "dirichlet")
    mesh.set_marker(mesh.rings[-1].classes, "dirichlet")
    mesh.tags["inner"] = mesh.rings[0].classes
    mesh.tags["outer"] = mesh.rings[-1].classes
    mesh.tags["core"] = mesh.rings[n_r].classes
    mirror = np.arange(len(mesh.raw_z))
    for i in range(2 * n_r + 1):
        mirror[np.asarray(ring_ids[i])] = np.asarray(ring_ids[2 * n_r - i])
    mesh.add_symmetry("mirror", mirror)
    return mesh


def _ladder(anchors, q):
    """Geometric radii through each anchor interval; prefix-stable."""
    radii = [float(anchors[0])]
    for a, b in zip(anchors, anchors[1:]):
        m = max(1, int(np.ceil(np.log(b / a) / np.log(q) - 1e-9)))
        for i in range(1, m):
            radii.append(a * (b / a) ** (i / m))
        radii.append(float(b))
    return radii


def build_punctured_torus(s, n, _anchors=None):
    """Genus-1 compact piece Sigma_s: slit disk L plus two handle squares.

    The disk Omega_s is slit along y = +-1/2, |x| <= 1/2; the central block
    C between the slits is an n x n Cartesian grid whose top/bottom rows
    are the inner slit banks.  Square charts H+ and H- (n x n) glue to the
    outer banks and to each other:

        H+ top    <-> upper bank, top slit     (z -> z)
        H+ bottom <-> lower bank, bottom slit  (z -> z)
        H- top    <-> lower bank, top slit     (z -> -z + i)
        H- bottom <-> upper bank, bottom slit  (z -> -z - i)
        H+ right  <-> H- left                  (z -> z - 1)
        H+ left   <-> H- right                 (z -> z + 1)

    All transitions are holomorphic, the four slit tips become 3pi cone
    points, chi = -1, genus 1, one dirichlet boundary gamma_s.  The slit
    square meets a blend strip that grades into uniform circular rings;
    ring radii run geometrically through the anchor list ({1, 2, s} by
    default) so exhaustion members share coordinates exactly.

    Returns (mesh, eta_h, eta_v); the loops generate the handle homology
    (eta_h through both squares, eta_v through H- and the central block).
    """
    if not s > 1:
        raise InvalidParameterError("need s > 1")
    _check_res("n", n)
    if n % 2:
        raise InvalidParameterError("n must be even")
    charts = [
        Chart("L", "disk-polar", {"s": float(s), "frame": "z", "slit": True}),
        Chart("Hp", "square-cartesian", {"frame": "z"}),
        Chart("Hm", "square-cartesian", {"frame": "z"}),
    ]
    CL, CP, CM = 0, 1, 2
    bld = _Builder(charts)
    pool = bld.pool
    xg = np.array([i / n - 0.5 for i in range(n + 1)])

    def grid(ch):
        return [[pool.add(ch, complex(xg[i], xg[j])) for j in range(n + 1)]
                for i in range(n + 1)]

    cid = grid(CL)
    hp = grid(CP)
    hm = grid(CM)
    top_u = [cid[i][n] if i in (0, n) else pool.add(CL, complex(xg[i], 0.5))
             for i in range(n + 1)]
    bot_l = [cid[i][0] if i in (0, n) else pool.add(CL, complex(xg[i], -0.5))
             for i in range(n + 1)]

    def quads(ch, g):
        for i in range(n):
            for j in range(n):
                ids = (g[i][j], g[i + 1][j], g[i + 1][j + 1], g[i][j + 1])
                bld.add_quad(ch, ids, tuple(pool.z[t] for t in ids), i + j)

    quads(CL, cid)
    quads(CP, hp)
    quads(CM, hm)

    # perimeter of the C square walked ccw from (1/2, 0)
    peri = []
    peri.extend(cid[n][j] for j in range(n // 2, n))
    peri.append(cid[n][n])
    peri.extend(top_u[i] for i in range(n - 1, 0, -1))
    peri.append(cid[0][n])
    peri.extend(cid[0][j] for j in range(n - 1, 0, -1))
    peri.append(cid[0][0])
    peri.extend(bot_l[i] for i in range(1, n))
    peri.append(cid[n][0])
    peri.extend(cid[n][j] for j in range(1, n // 2))
    m4 = 4 * n
    theta = _stations(m4)
    unit = np.exp(1j * theta)
    peri_z = np.array([pool.z[t] for t in peri])

    nb = 3  # blend layers from the square perimeter to the unit circle
    layers = [list(peri)]
    for t in range(1, nb):
        f = t / nb
        pts = (1 - f) * peri_z + f * unit[:m4]
        layers.append([pool.add(CL, p) for p in pts])
    anchors = _anchors
    if anchors is None:
        anchors = sorted({1.0, 2.0, float(s)})
        anchors = [a for a in anchors if a <= s + 1e-12]
    q = np.exp(np.pi / (2 * n))
    radii = _ladder(anchors, q)
    ring_ids = [[pool.add(CL, rr * u) for u in unit[:m4]] for rr in radii]
    layers.append(ring_ids[0])
    for t in range(nb):
        zin = np.array([pool.z[v] for v in layers[t]])
        zout = np.array([pool.z[v] for v in layers[t + 1]])
        _polar_band(bld, CL, layers[t], layers[t + 1],
                    np.append(zin, zin[0]), np.append(zout, zout[0]), t)
    for i in range(len(radii) - 1):
        _polar_band(bld, CL, ring_ids[i], ring_ids[i + 1],
                    radii[i] * unit, radii[i + 1] * unit, nb + i)

    # gluing unions: a = d(frame_second)/d(frame_first)
    for i in range(n + 1):
        pool.union(hp[i][n], top_u[i], 1.0)        # z -> z
        pool.union(hp[i][0], bot_l[i], 1.0)        # z -> z
        pool.union(hm[i][n], cid[n - i][n], -1.0)  # z -> -z + i
        pool.union(hm[i][0], cid[n - i][0], -1.0)  # z -> -z - i
    for j in range(n + 1):
        pool.union(hp[n][j], hm[0][j], 1.0)        # z -> z - 1
        pool.union(hp[0][j], hm[n][j], 1.0)        # z -> z + 1

    meta = {"builder": "punctured-torus", "s": float(s), "n": n,
            "n_theta": m4, "anchors": [float(a) for a in anchors],
            "ring_radii": [float(rr) for rr in radii]}
    mesh = bld.finish(meta)
    ncone = int(np.sum(mesh.cone))
    if ncone != 4:
        raise ConstructionError(
            f"expected 4 cone points at the slit tips, found {ncone}"
        )
    for rid, rr in zip(ring_ids, radii):
        mesh.rings.append(Ring("L", float(rr), mesh.class_of[np.asarray(rid)],
                               theta[:m4].copy()))
    mesh.set_marker(mesh.rings[-1].classes, "dirichlet")
    mesh.tags["outer"] = mesh.rings[-1].classes
    mesh.tags["origin_L"] = np.array([mesh.class_of[cid[n // 2][n // 2]]])
    mesh.tags["origin_Hp"] = np.array([mesh.class_of[hp[n // 2][n // 2]]])
    mesh.tags["origin_Hm"] = np.array([mesh.class_of[hm[n // 2][n // 2]]])

    # fixed circles of the realizable anti-conformal involutions; used to
    # classify where Hopf zeros sit
    def cls(seq):
        return np.unique(mesh.class_of[np.asarray(seq)])

    mesh.tags["circle_A"] = cls(
        [cid[i][n // 2] for i in range(n + 1)]
        + [lay[0] for lay in layers] + [lay[2 * n] for lay in layers]
        + [rid[0] for rid in ring_ids] + [rid[2 * n] for rid in ring_ids]
    )
    mesh.tags["circle_C1"] = cls(
        [hp[i][n // 2] for i in range(n + 1)]
        + [hm[i][n // 2] for i in range(n + 1)]
    )
    mesh.tags["circle_B"] = cls(
        [hp[n // 2][j] for j in range(n + 1)]
        + [lay[n] for lay in layers] + [lay[3 * n] for lay in layers]
        + [rid[n] for rid in ring_ids] + [rid[3 * n] for rid in ring_ids]
    )
    mesh.tags["circle_D1"] = cls(
        [cid[n // 2][j] for j in range(n + 1)]
        + [hm[n // 2][j] for j in range(n + 1)]
    )

    # symmetries as raw permutations: conj (chartwise conjugation) and
    # point (chartwise z -> -z); both are gluing-table automorphisms
    nraw = len(pool.z)
    conj = np.arange(nraw)
    point = np.arange(nraw)

    def assign(perm, src, dst):
        perm[np.asarray(src)] = np.asarray(dst)

    for g in (cid, hp, hm):
        garr = np.asarray(g)
        assign(conj, garr.ravel(), garr[:, ::-1].ravel())
        assign(point, garr.ravel(), garr[::-1, ::-1].ravel())
    tu, bl = np.asarray(top_u), np.asarray(bot_l)
    assign(conj, tu, bl)
    assign(conj, bl, tu)
    assign(point, tu, bl[::-1])
    assign(point, bl, tu[::-1])
    ms = np.arange(m4)
    for ring in [*layers[1:], *ring_ids[1:]]:
        ring = np.asarray(ring)
        assign(conj, ring, ring[(-ms) % m4])
        assign(point, ring, ring[(ms + 2 * n) % m4])
    mesh.add_symmetry("conj", conj)
    mesh.add_symmetry("point", point)
    mesh.symmetries["conj_point"] = mesh.symmetries["conj"][mesh.symmetries["point"]]

    eta_h = HomologyLoop(
        "eta_h",
        np.concatenate([
            mesh.class_of[np.asarray([hp[i][n // 2] for i in range(n)])],
            mesh.class_of[np.asarray([hm[i][n // 2] for i in range(n)])],
        ]),
    )
    eta_v = HomologyLoop(
        "eta_v",
        np.concatenate([
            mesh.class_of[np.asarray([hm[n // 2][j] for j in range(n)])],
            mesh.class_of[np.asarray([cid[n // 2][j] for j in range(n, 0, -1)])],
        ]),
    )
    mesh.meta["loops"] = {
        "eta_h": eta_h.classes.tolist(),
        "eta_v": eta_v.classes.tolist(),
    }
    return mesh, eta_h, eta_v


def exhaustion(s_list, n):
    """Nested compacta Sigma_{s_1} in Sigma_{s_2} in ... sharing coordinates.

    Members use a common anchor ladder ({1, 2} plus every smaller s in the
    list), so shared rings have bit-identical radii and coordinates; vertex
    sets are nested as coordinate sets.  Returns a list of meshes; the
    homology loops of each member are in mesh.meta['loops'].
    """
    if len(s_list) == 0:
        raise InvalidParameterError("empty exhaustion list")
    vals = [float(t) for t in s_list]
    if any(b <= a for a, b in zip(vals, vals[1:])) or vals[0] <= 1:
        raise InvalidParameterError("s_list must be strictly increasing with min > 1")
    out = []
    for si in vals:
        anchors = sorted({1.0, 2.0, *[t for t in vals if t <= si]})
        anchors = [a for a in anchors if a <= si + 1e-12]
        mesh, _, _ = build_punctured_torus(si, n, _anchors=anchors)
        out.append(mesh)
    return out
