"""Discrete harmonic maps into the hyperbolic disk.

The energy of a piecewise-linear map is summed per triangle with the
target conformal factor frozen at the triangle's value centroid.  Its
gradient with respect to the vertex values gives the discrete tension

    tau_hat_a = -G_a / (2 rho(u_a) m_a),

the mass-normalized steepest-descent direction, which vanishes exactly at
discrete minimizers and is the stopping quantity.  The stencil-based
tension field (quadratic fits of u) is the independent consistency
diagnostic; it converges to zero only with mesh refinement.

Minimization runs tension-field flow (exponential-map steps, adaptive
step size halved whenever the energy rises) for robust warmup, then a
damped Newton endgame on the reduced real 2N system with Levenberg
regularization.  Newton steps must not increase the energy: near a stiff
boundary layer the mass-scaled tension is spuriously small at clamped
iterates, so a tension drop alone never buys an energy rise.  Flow
sweeps are Jacobi-style (read old state, write new); returned states are
immutable snapshots.
"""

import warnings

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from . import _kernels as kernels
from . import differential
from .domain import MARK_DIRICHLET, MARK_INTERIOR
from .errors import DomainError, InvalidParameterError, NonConvergenceError
from .hyperbolic import CLAMP_MARGIN, conformal_factor, dist, geodesic_step


class MapState:
    """Per-vertex-class map values into the open disk; immutable snapshot."""

    __slots__ = ("mesh", "values")

    def __init__(self, mesh, values):
        values = np.array(values, dtype=np.complex128)
        if values.shape != (mesh.n_classes,):
            raise InvalidParameterError(
                f"expected {mesh.n_classes} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("map values must be finite")
        if np.any(np.abs(values) >= 1.0):
            raise DomainError("map values must lie strictly inside the unit disk")
        values.setflags(write=False)
        self.mesh = mesh
        self.values = values

    def with_values(self, values):
        return MapState(self.mesh, values)


class SolveReport:
    """Iteration record: trace rows are (iteration, energy, tension_sup, step)."""

    def __init__(self, iterations, tension_sup, converged, clamp_events, scheme,
                 trace):
        self.iterations = iterations
        self.tension_sup = tension_sup
        self.converged = converged
        self.clamp_events = clamp_events
        self.scheme = scheme
        self.trace = trace

    @property
    def energy_trace(self):
        return np.array([row[1] for row in self.trace])

    def trace_csv(self):
        lines = ["iter,energy,tension_sup,dt"]
        for it, e, ts, dt in self.trace:
            lines.append(f"{it},{e!r},{ts!r},{dt!r}")
        return "\n".join(lines) + "\n"


class EnergyDensityField:
    """Pointwise energy split: H holomorphic, L anti-holomorphic parts."""

    __slots__ = ("H", "L")

    def __init__(self, H, L):
        self.H = H
        self.L = L

    @property
    def e(self):
        return self.H + self.L

    @property
    def J(self):
        return self.H - self.L


def _values(u):
    if isinstance(u, MapState):
        return u.values
    return np.asarray(u, dtype=np.complex128)


def _chart_mass(mesh):
    """Mass vector in chart-coordinate area units (cached)."""
    m = getattr(mesh, "_chart_mass", None)
    if m is None:
        z = mesh.tri_z
        a = 0.5 * np.abs(np.imag(np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0])))
        m = np.zeros(mesh.n_classes)
        np.add.at(m, mesh.tri_class, (a / 3.0)[:, None])
        mesh._chart_mass = m
    return m


def energy(mesh, u, region=None):
    """Dirichlet energy of the map, optionally over a whole-triangle region."""
    vals = _values(u)
    if region is None:
        return kernels.energy(vals, mesh.tri_class, mesh.tri_g, mesh.tri_area)
    mask = mesh.region_mask(region)
    return kernels.energy(vals, mesh.tri_class[mask], mesh.tri_g[mask],
                          mesh.tri_area[mask])


def discrete_tension(mesh, u):
    """Mass-normalized energy gradient per class, zero at dirichlet vertices.

    In chart units: the gradient is divided by the chart-area mass, so the
    stopping tolerance means the same thing on log-frame charts.
    """
    vals = _values(u)
    _, grad = kernels.energy_gradient(vals, mesh.tri_class, mesh.tri_g,
                                      mesh.tri_area, mesh.n_classes)
    tau = -grad / (2.0 * conformal_factor(vals) * _chart_mass(mesh))
    tau[~mesh.free_mask] = 0.0
    return tau


def tension(mesh, u):
    """Stencil tension field and its per-vertex quality flags.

    tau is u_zzbar + (log rho)_u u_z u_zbar from local quadratic fits,
    zero by convention at dirichlet vertices and wherever the stencil is
    degenerate (cones, tiny boundary fans); ok marks trustworthy entries.
    """
    vals = _values(u)
    tau = differential.tension_pointwise(mesh, vals)
    ok = differential.stencils(mesh).ok2 & ~mesh.cone
    ok &= mesh.marker != MARK_DIRICHLET
    tau[~ok] = 0.0
    return tau, ok


def energy_decomposition(mesh, u):
    """Per-vertex H = rho|u_z|^2, L = rho|u_zbar|^2 in chart-frame units.

    Sampled through the recentred map (H = 4|w_z|^2, exactly the same
    quantity, conditioned at hyperbolic scale in boundary layers) where a
    quadratic stencil exists; other classes (boundary fans, cones) fall
    back to the mass-weighted average of the incident triangles'
    densities, which keeps H, L finite and nonnegative everywhere and
    integrates back to the energy.
    """
    vals = _values(u)
    d = differential.derivatives_centered(mesh, vals)
    fac2 = np.abs(differential.rep_to_chart_factor(mesh)) ** 2
    H = 4.0 * np.abs(d.uz) ** 2 * fac2
    L = 4.0 * np.abs(d.uzb) ** 2 * fac2

    bad = ~(d.ok2 & np.isfinite(H) & np.isfinite(L))
    if bad.any():
        ht, lt = kernels.triangle_densities(vals, mesh.tri_class, mesh.tri_g)
        w = mesh.tri_area / 3.0
        hacc = np.zeros(mesh.n_classes)
        lacc = np.zeros(mesh.n_classes)
        macc = np.zeros(mesh.n_classes)
        np.add.at(hacc, mesh.tri_class, (w * ht)[:, None])
        np.add.at(lacc, mesh.tri_class, (w * lt)[:, None])
        np.add.at(macc, mesh.tri_class, w[:, None])
        fr2 = fac2  # frame densities rescale like tension
        H[bad] = hacc[bad] / macc[bad] * fr2[bad]
        L[bad] = lacc[bad] / macc[bad] * fr2[bad]
    return EnergyDensityField(H, L)


def density_consistency(mesh, u):
    """Relative gap between the integrated pointwise density and the energy.

    Chart-area masses pair with the chart-frame densities, so the sum
    approximates the energy integral on any chart layout.
    """
    vals = _values(u)
    field = energy_decomposition(mesh, vals)
    total = np.sum(_chart_mass(mesh) * field.e)
    e_ref = energy(mesh, vals)
    return abs(total - e_ref) / max(e_ref, 1e-300)


def max_principle_gap(mesh, u, p=0.0 + 0.0j):
    """max interior dist(u,p) minus max dirichlet dist(u,p); <= eps_h if ok."""
    vals = _values(u)
    d = dist(vals, p)
    diri = mesh.marker == MARK_DIRICHLET
    if not diri.any():
        raise InvalidParameterError("mesh has no dirichlet vertices")
    return d[~diri].max() - d[diri].max()


def _clamp(values, counter):
    r = np.abs(values)
    hot = r > 1.0 - CLAMP_MARGIN
    if hot.any():
        scale = np.where(hot, (1.0 - CLAMP_MARGIN) / np.where(hot, r, 1.0), 1.0)
        values = values * scale
        counter[0] += int(hot.sum())
    return values


def _hessian_reduced(mesh, free):
    """Cached pattern bookkeeping for the reduced real 2N system."""
    cache = getattr(mesh, "_hess_cache", None)
    if cache is not None and np.array_equal(cache[0], free):
        return cache[1:]
    rows, cols = kernels.hessian_pattern(mesh.tri_class, mesh.n_classes)
    free2 = np.concatenate([free, free])
    keep = free2[rows] & free2[cols]
    red = np.full(2 * mesh.n_classes, -1, dtype=np.int64)
    nf = int(free.sum())
    red[np.nonzero(free2)[0]] = np.arange(2 * nf)
    rr, rc = red[rows[keep]], red[cols[keep]]
    mesh._hess_cache = (free.copy(), keep, rr, rc, nf)
    return keep, rr, rc, nf


def solve(mesh, u0, tol=1e-8, max_iter=2000, scheme="auto", project=None):
    """Minimize the map energy with fixed dirichlet values.

    Returns (MapState, SolveReport).  Dirichlet entries of u0 are copied
    bit-identically into the result; free and interior classes are updated
    until the discrete tension sup-norm drops below tol.  scheme 'flow'
    uses only tension-field flow, 'damped-newton' only the second-order
    endgame, 'auto' chains them.

    project, if given, maps a value vector to a nearby one and is applied
    to every candidate iterate before evaluation.  Its intended use is
    averaging over a symmetry group of the problem: the linear solves
    inject asymmetric round-off which stiff boundary layers amplify along
    near-flat valleys, and re-projection keeps the whole descent path on
    the symmetric subspace, where the minimizer of a symmetric problem
    lies.  It must fix dirichlet values and preserve the open disk.
    """
    if scheme not in ("flow", "damped-newton", "auto"):
        raise InvalidParameterError(f"unknown scheme {scheme!r}")
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    values = np.array(_values(u0), dtype=np.complex128)
    if values.shape != (mesh.n_classes,):
        raise InvalidParameterError("u0 has wrong length")
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) >= 1.0):
        raise DomainError("initial map must take values inside the unit disk")
    free = mesh.free_mask
    clamp_count = [0]
    values[free] = _clamp(values[free], clamp_count)
    if project is not None:
        values = np.asarray(project(values), dtype=np.complex128)
    trace = []
    it = 0
    mass = _chart_mass(mesh)

    def grad_state(v):
        e, grad = kernels.energy_gradient(v, mesh.tri_class, mesh.tri_g,
                                          mesh.tri_area, mesh.n_classes)
        tau = -grad / (2.0 * conformal_factor(v) * mass)
        tau[~free] = 0.0
        return e, grad, float(np.abs(tau).max())

    e_cur, g_cur, sup = grad_state(values)
    trace.append((it, e_cur, sup, 0.0))
    converged = sup < tol

    # -- tension-field flow ----------------------------------------------------
    if scheme in ("flow", "auto") and not converged:
        dt = 1.0
        stall = 0
        flow_budget = max_iter if scheme == "flow" else min(max_iter, 400)
        flow_target = tol if scheme == "flow" else max(1e3 * tol, 1e-2)
        window = []
        while it < flow_budget and sup >= flow_target:
            # hand off early when a whole window of steps barely moves the
            # energy: stiff boundary layers cap the stable step size and the
            # Newton endgame is far cheaper than crawling here
            window.append(e_cur)
            if scheme == "auto" and len(window) > 25:
                if window[-26] - e_cur < 1e-3 * max(1.0, abs(e_cur)):
                    break
            tau = -g_cur / (2.0 * conformal_factor(values) * mass)
            tau[~free] = 0.0
            prop = values.copy()
            prop[free] = _clamp(geodesic_step(values[free], tau[free], dt),
                                clamp_count)
            if project is not None:
                prop = np.asarray(project(prop), dtype=np.complex128)
            e_new = kernels.energy(prop, mesh.tri_class, mesh.tri_g, mesh.tri_area)
            if e_new <= e_cur:
                gain = e_cur - e_new
                values = prop
                e_cur, g_cur, sup = grad_state(values)
                it += 1
                trace.append((it, e_cur, sup, dt))
                dt = min(dt * 1.3, 1e3)
                stall = stall + 1 if gain < 1e-14 * max(1.0, abs(e_cur)) else 0
                if stall >= 3:
                    break
            else:
                dt *= 0.5
                if dt < 1e-16:
                    break
        converged = sup < tol
        if scheme == "flow":
            if not converged and (stall >= 3 or it >= flow_budget or dt < 1e-16):
                warnings.warn("tension-field flow stagnated before tol",
                              stacklevel=2)
            state = MapState(mesh, values)
            return state, SolveReport(it, sup, converged, clamp_count[0],
                                      scheme, trace)

    # -- damped Newton endgame ---------------------------------------------------
    if not converged:
        keep, rr, rc, nf = _hessian_reduced(mesh, free)
        fidx = np.nonzero(free)[0]
        lam = 0.0
        polish = 0
        # remember the lowest-tension iterate: on stiff boundary layers the
        # energy minimizer sits at a round-off tension floor, and descent
        # can walk through (and past) far better-converged states
        best_sup, best_vals, best_e = sup, values.copy(), e_cur
        since_best = 0
        idx = np.arange(nf)
        crow = np.concatenate([idx, idx + nf, idx, idx + nf])
        ccol = np.concatenate([idx, idx + nf, idx + nf, idx])
        while it < max_iter:
            if sup < tol and (polish >= 6 or sup < 1e-14):
                break
            if best_sup < tol and since_best >= 10:
                break
            vals_flat = kernels.hessian_values(values, mesh.tri_class, mesh.tri_g,
                                               mesh.tri_area)
            hmat = sparse.csc_matrix(
                (vals_flat[keep], (rr, rc)), shape=(2 * nf, 2 * nf)
            )
            # steps live in the exponential chart at the current map: the
            # chart Hessian gains the Christoffel term -<grad, Gamma[xi,xi]>,
            # which makes it positive semidefinite for this negatively curved
            # target and keeps Newton sane on stiff boundary layers
            uf = values[fidx]
            kap = np.conj(g_cur[fidx]) * 2.0 * np.conj(uf) / (1.0 - np.abs(uf) ** 2)
            cvals = np.concatenate([-2 * kap.real, 2 * kap.real,
                                    2 * kap.imag, 2 * kap.imag])
            hmat = hmat + sparse.csc_matrix(
                (cvals, (crow, ccol)), shape=(2 * nf, 2 * nf)
            )
            gr = np.concatenate([2 * g_cur.real[free], 2 * g_cur.imag[free]])
            damp = sparse.diags(np.maximum(np.abs(hmat.diagonal()), 1e-30),
                                format="csc")
            accepted = False
            while not accepted:
                try:
                    # Jacobi equilibration: the conformal factor spans many
                    # decades across a boundary layer, and nearly all of the
                    # system's conditioning is that row scaling; normalizing
                    # the diagonal lets the factorization deliver steps
                    # accurate enough for the quadratic endgame
                    asys = (hmat + lam * damp).tocsc()
                    d = np.sqrt(np.maximum(np.abs(asys.diagonal()), 1e-300))
                    dinv = sparse.diags(1.0 / d, format="csc")
                    lu = splu(dinv @ asys @ dinv)
                    step = lu.solve(-(gr / d)) / d
                except RuntimeError:
                    step = None
                if step is not None and np.all(np.isfinite(step)):
                    xi = step[:nf] + 1j * step[nf:]
                    for frac in (1.0, 0.5, 0.25, 0.1, 0.03):
                        prop = values.copy()
                        prop[fidx] = _clamp(
                            geodesic_step(values[fidx], xi, frac), clamp_count
                        )
                        if project is not None:
                            prop = np.asarray(project(prop), dtype=np.complex128)
                        e_new, g_new, sup_new = grad_state(prop)
                        # descent is the only road: clamped rim points make
                        # the mass-scaled tension small at garbage iterates,
                        # so a sup drop alone must never buy an energy rise.
                        # The energy is a pairwise sum of positive terms, so
                        # its round-off is a few eps relative and the slack
                        # can sit just above that
                        slack = 1e-14 * max(1.0, abs(e_cur))
                        if e_new < e_cur - slack or (sup_new < sup and
                                                     e_new <= e_cur + slack):
                            values, e_cur, g_cur = prop, e_new, g_new
                            if sup < tol and sup_new < 0.1 * sup:
                                polish += 1
                            elif sup < tol:
                                polish = 6
                            sup = sup_new
                            accepted = True
                            break
                if not accepted:
                    lam = 10.0 * lam if lam > 0 else 1e-8
                    if lam > 1e8:
                        break
            it += 1
            trace.append((it, e_cur, sup, lam))
            if not accepted:
                break
            if sup < best_sup:
                best_sup, best_vals, best_e = sup, values.copy(), e_cur
                since_best = 0
            else:
                since_best += 1
            lam = 0.0 if lam < 1e-7 else lam / 30.0
        if best_sup < sup:
            sup, values, e_cur = best_sup, best_vals, best_e
        converged = sup < tol

    state = MapState(mesh, values)
    return state, SolveReport(it, sup, converged, clamp_count[0], scheme, trace)


def stability_probe(mesh, u_harmonic, magnitude, seed, tol=1e-8):
    """Perturb interior values by random geodesic steps, reflow, and compare.

    Returns (reflowed MapState, sup hyperbolic distance to the original).
    Deterministic for a given seed.
    """
    if magnitude < 0:
        raise InvalidParameterError("magnitude must be nonnegative")
    base = _values(u_harmonic)
    if magnitude == 0:
        return MapState(mesh, base), 0.0
    rng = np.random.default_rng(seed)
    free = mesh.free_mask
    n = int(free.sum())
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    frac = rng.uniform(0.0, 1.0, n)
    p = base[free]
    # geodesic_step length is sqrt(rho)|v| t = 2|v|t/(1-|p|^2)
    t = 0.5 * frac * magnitude * (1.0 - np.abs(p) ** 2)
    counter = [0]
    pert = base.copy()
    pert[free] = _clamp(geodesic_step(p, np.exp(1j * theta), t), counter)
    state, report = solve(mesh, pert, tol=tol, scheme="auto")
    if not report.converged:
        raise NonConvergenceError("reflow after perturbation did not converge")
    gap = float(dist(state.values, base).max())
    return state, gap


def q_subharmonicity(mesh, u, v):
    """Worst discrete Laplacian of Q = cosh dist(u,v) - 1 over the interior.

    The cotangent-weight (P1 stiffness) Laplacian of a subharmonic
    function should be >= -O(h^2); classes within two hops of a cone are
    excluded, as are boundary classes.
    """
    q = np.cosh(dist(_values(u), _values(v))) - 1.0
    lap = -(mesh.stiffness_matrix() @ q) / mesh.mass_vector()
    sel = mesh.marker == MARK_INTERIOR
    sel &= ~differential.near_cone_mask(mesh)
    if not sel.any():
        raise InvalidParameterError("no interior vertices to test")
    return float(lap[sel].min())
