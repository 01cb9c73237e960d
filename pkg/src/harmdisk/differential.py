"""Pointwise derivative estimates on glued meshes.

Each vertex class gets a least-squares quadratic fit over its one-ring,
yielding u_z, u_zbar and second derivatives that are exact on quadratics
and O(h^2) accurate on smooth data.  Stencil displacements are transported
into the frame of the class representative through the gluing alignments,
so multi-chart meshes (the slit torus) come out frame-consistent.  Cone
classes have no single frame; they still get a fan-averaged fit but are
flagged, and diagnostics should mask a small graph neighborhood around
them.
"""

import numpy as np

_QUAD_MIN = 5  # unknowns in the quadratic model
_ANISO_MAX = 8.0  # stencil edge-length ratio beyond which 2nd derivs are untrusted
_EXT_REACH = 1.8  # two-ring rows are kept only within this multiple of the fan


class Derivatives:
    """Per-class derivative estimates, in each class representative's frame.

    ok marks classes whose first derivatives come from a non-degenerate
    stencil; ok2 marks those with a full quadratic fit (second derivatives
    are NaN elsewhere).  Cone classes are fit but never ok.
    """

    __slots__ = ("uz", "uzb", "uzz", "uzzb", "uzbzb", "ok", "ok2")

    def __init__(self, n):
        self.uz = np.full(n, np.nan, dtype=np.complex128)
        self.uzb = np.full(n, np.nan, dtype=np.complex128)
        self.uzz = np.full(n, np.nan, dtype=np.complex128)
        self.uzzb = np.full(n, np.nan, dtype=np.complex128)
        self.uzbzb = np.full(n, np.nan, dtype=np.complex128)
        self.ok = np.zeros(n, dtype=bool)
        self.ok2 = np.zeros(n, dtype=bool)


def _neighbor_table(mesh):
    """Directed edges (class, neighbor class, displacement in rep frame)."""
    t = mesh.tri_class
    f = mesh.tri_frame
    al = mesh.raw_align[mesh.tri_raw]
    vs, js, ds = [], [], []
    for a in range(3):
        for nb in ((a + 1) % 3, (a + 2) % 3):
            vs.append(t[:, a])
            js.append(t[:, nb])
            ds.append((f[:, nb] - f[:, a]) * al[:, a])
    v = np.concatenate(vs)
    j = np.concatenate(js)
    d = np.concatenate(ds)
    code = v * mesh.n_classes + j
    order = np.argsort(code, kind="stable")
    code, v, j, d = code[order], v[order], j[order], d[order]
    keep = np.ones(len(code), dtype=bool)
    keep[1:] = code[1:] != code[:-1]
    return v[keep], j[keep], d[keep]


def _ragged_indices(starts, counts):
    """Index array visiting counts[k] consecutive slots from starts[k]."""
    base = np.repeat(starts, counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return base + offs


def _two_ring(n, v, j, d, starts, counts, need):
    """Second-hop stencil rows for the classes in `need`.

    The hop through neighbor w transports w's displacements into v's rep
    frame with the factor -d_vw / d_wv recovered from the reverse edge
    (gluing maps are rigid, so the factor is exact).  Hops reaching far
    beyond the one-ring are discarded: they ruin the near-cancellation of
    cubic residuals that keeps the fitted second derivatives accurate,
    which matters on stretched polar cells near the rim.
    """
    maxd = np.zeros(n)
    np.maximum.at(maxd, v, np.abs(d))
    idx = _ragged_indices(starts[need], counts[need])
    pv, pw, pd = v[idx], j[idx], d[idx]
    code = v * n + j
    rev = np.searchsorted(code, pw * n + pv)
    t = -pd / d[rev]
    wc = counts[pw]
    idx2 = _ragged_indices(starts[pw], wc)
    pv2 = np.repeat(pv, wc)
    dx = np.repeat(pd, wc) + np.repeat(t, wc) * d[idx2]
    x = j[idx2]
    keep = (x != pv2) & (np.abs(dx) <= _EXT_REACH * maxd[pv2])
    return pv2[keep], x[keep], dx[keep]


class StencilSet:
    """Grouped pseudo-inverses for batched derivative evaluation.

    Classes are grouped by valence so each group is one stacked pinv; the
    model is u(v+d) - u(v) = a d + b conj(d) + c d^2/2 + e |d|^2
    + f conj(d)^2/2, solved with displacements normalized by a per-class
    scale for conditioning.
    """

    def __init__(self, mesh):
        self.n = mesh.n_classes
        v, j, d = _neighbor_table(mesh)
        counts = np.bincount(v, minlength=self.n)
        starts = np.cumsum(counts) - counts

        # fans too small for a robust quadratic fit (checkerboard grids have
        # valence-4 vertices) get their two-ring appended
        need = np.nonzero((counts >= 2) & (counts <= _QUAD_MIN) & ~mesh.cone)[0]
        if len(need):
            ev, ej, ed = _two_ring(self.n, v, j, d, starts, counts, need)
            v = np.concatenate([v, ev])
            j = np.concatenate([j, ej])
            d = np.concatenate([d, ed])
            code = v * self.n + j
            order = np.argsort(code, kind="stable")
            code, v, j, d = code[order], v[order], j[order], d[order]
            keep = np.ones(len(code), dtype=bool)
            keep[1:] = code[1:] != code[:-1]
            v, j, d = v[keep], j[keep], d[keep]
            counts = np.bincount(v, minlength=self.n)
            starts = np.cumsum(counts) - counts

        self.groups = []
        self.ok = counts >= 2
        self.ok &= ~mesh.cone
        self.ok2 = (counts >= _QUAD_MIN) & self.ok
        for m in np.unique(counts):
            if m < 2:
                continue
            members = np.nonzero(counts == m)[0]
            idx = starts[members][:, None] + np.arange(m)
            nbr = j[idx]
            delta = d[idx]
            r = np.abs(delta)
            # Strongly anisotropic stencils (polar slivers near the axis)
            # estimate first derivatives fine but second derivatives do not
            # converge under refinement; flag them out of ok2.
            self.ok2[members[r.max(axis=1) > _ANISO_MAX * r.min(axis=1)]] = False
            h = np.sqrt(np.mean(r**2, axis=1))
            dn = delta / h[:, None]
            cols = [dn, np.conj(dn)]
            if m >= _QUAD_MIN:
                cols += [0.5 * dn**2, np.abs(dn) ** 2, 0.5 * np.conj(dn) ** 2]
            design = np.stack(cols, axis=2)
            pinv = np.linalg.pinv(design)
            self.groups.append((members, nbr, pinv, h, m >= _QUAD_MIN))

    def derivatives(self, u):
        return self._fit(np.asarray(u, dtype=np.complex128), recentre=False)

    def centered(self, u):
        return self._fit(np.asarray(u, dtype=np.complex128), recentre=True)

    def _fit(self, u, recentre):
        out = Derivatives(self.n)
        out.ok = self.ok.copy()
        out.ok2 = self.ok2.copy()
        for members, nbr, pinv, h, quad in self.groups:
            a = u[members][:, None]
            if recentre:
                rhs = (u[nbr] - a) / (1.0 - np.conj(a) * u[nbr])
            else:
                rhs = u[nbr] - a
            coef = np.einsum("nij,nj->ni", pinv, rhs)
            out.uz[members] = coef[:, 0] / h
            out.uzb[members] = coef[:, 1] / h
            if quad:
                h2 = h * h
                out.uzz[members] = coef[:, 2] / h2
                out.uzzb[members] = coef[:, 3] / h2
                out.uzbzb[members] = coef[:, 4] / h2
        return out


def stencils(mesh):
    """Build (and cache on the mesh) the stencil set."""
    ss = getattr(mesh, "_stencil_set", None)
    if ss is None:
        ss = StencilSet(mesh)
        mesh._stencil_set = ss
    return ss


def derivatives(mesh, u):
    return stencils(mesh).derivatives(u)


def derivatives_centered(mesh, u):
    """Derivatives of the recentred map w = (u - a)/(1 - conj(a) u).

    Each class value a is moved to the origin by a disk isometry before
    differencing, so the fields are w_z, w_zbar, ... of the moved map (not
    of u).  Deep in a boundary layer, where 1 - |u| approaches the clamp
    margin, chart differences of u lose most of their digits against the
    conformal factor; differences of w stay conditioned at hyperbolic
    scale.  First derivatives recover the map invariants exactly:
    rho(a) u_z conj(u_zbar) = 4 w_z conj(w_zbar) and likewise for the
    energy densities.
    """
    return stencils(mesh).centered(u)


def rep_to_chart_factor(mesh):
    """Per-class d(rep frame)/d(chart coordinate).

    Identity except on log-frame charts, where the computation frame is
    log z and the factor is 1/z at the class position.
    """
    fac = np.ones(mesh.n_classes, dtype=np.complex128)
    for ci, ch in enumerate(mesh.charts):
        if ch.meta.get("frame") == "log":
            sel = mesh.class_chart == ci
            fac[sel] = 1.0 / mesh.class_z[sel]
    return fac


def hopf_pointwise(mesh, u):
    """Hopf differential rho(u) u_z conj(u_zbar) per class, chart frame.

    Sampled through the recentred map at each class, for which the same
    quantity is 4 w_z conj(w_zbar) exactly; see derivatives_centered for
    why this survives boundary layers.  On multi-chart meshes the gluing
    alignments are +-1, so the quadratic differential has the same value
    in every chart touching a class.
    """
    d = derivatives_centered(mesh, u)
    phi = 4.0 * d.uz * np.conj(d.uzb)
    return phi * rep_to_chart_factor(mesh) ** 2


def tension_pointwise(mesh, u):
    """Tension field u_zzbar + (log rho)_u u_z u_zbar per class, chart frame.

    Computed as (1 - |a|^2) w_zzbar of the recentred map, which equals the
    chart tension exactly (the connection term vanishes at the origin of
    the moved frame) and stays conditioned in boundary layers.  NaN where
    no quadratic stencil exists (boundary fans too small); the caller
    decides what to do with flagged cone neighborhoods.
    """
    u = np.asarray(u, dtype=np.complex128)
    d = derivatives_centered(mesh, u)
    tau = (1.0 - np.abs(u) ** 2) * d.uzzb
    return tau * np.abs(rep_to_chart_factor(mesh)) ** 2


def dbar_residual(mesh, phi):
    """|d phi / d zbar| per class for a chart-frame scalar field phi.

    Measures failure of holomorphy; O(h^2) for smooth holomorphic phi.
    The stencil acts in the rep frame and the result is rescaled to the
    chart coordinate, so values are comparable across charts.
    """
    d = derivatives(mesh, np.asarray(phi, dtype=np.complex128))
    return np.abs(d.uzb) * np.abs(rep_to_chart_factor(mesh))


def near_cone_mask(mesh, hops=2):
    """Classes within the given graph distance of a cone class."""
    mask = mesh.cone.copy()
    if not mask.any():
        return mask
    adj = mesh.adjacency()
    for _ in range(hops):
        mask = mask | (adj @ mask.astype(np.int8) > 0)
    return mask
