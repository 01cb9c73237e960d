"""Hopf-differential extraction and complex-analytic diagnostics."""

import numpy as np
import pytest
from scipy.integrate import quad

from harmdisk import domain, hopf, solver
from harmdisk.errors import (
    InvalidParameterError,
    InvalidRegionError,
)


# -- oracles -------------------------------------------------------------------


def quad_laurent_oracle(f, radius, n):
    """c_n by adaptive quadrature of the Cauchy integral, no mesh involved."""

    def integrand(t, part):
        val = f(radius * np.exp(1j * t)) * np.exp(-1j * n * t) / radius**n
        return val.real if part == 0 else val.imag

    re, _ = quad(integrand, 0.0, 2.0 * np.pi, args=(0,), limit=200)
    im, _ = quad(integrand, 0.0, 2.0 * np.pi, args=(1,), limit=200)
    return (re + 1j * im) / (2.0 * np.pi)


def solve_geodesic(n):
    mesh = domain.build_disk(1.0, n, 2 * n)
    target = np.tanh(mesh.class_z.real / 2.0) + 0j
    u0 = np.where(mesh.marker == domain.MARK_DIRICHLET, target, 0.0)
    state, report = solver.solve(mesh, u0)
    assert report.converged
    return mesh, state


@pytest.fixture(scope="module")
def torus16():
    mesh, eta_h, eta_v = domain.build_punctured_torus(2.0, 16)
    return mesh


@pytest.fixture(scope="module")
def geodesic32():
    return solve_geodesic(32)


@pytest.fixture(scope="module")
def geodesic64():
    return solve_geodesic(64)


def interior_trusted(mesh, extra_ok):
    return (
        (mesh.marker == domain.MARK_INTERIOR)
        & extra_ok
        & ~differential_near_cone(mesh)
    )


def differential_near_cone(mesh):
    from harmdisk import differential

    return differential.near_cone_mask(mesh)


# -- extraction ----------------------------------------------------------------


class TestHopfExtraction:
    def test_constant_map_zero(self):
        mesh = domain.build_disk(1.0, 8, 16)
        f = hopf.hopf(mesh, np.full(mesh.n_classes, 0.3 + 0.1j))
        assert np.abs(f.values[f.ok]).max() < 1e-25

    def test_geodesic_model_quarter(self):
        mesh = domain.build_disk(1.0, 64, 128)
        u = np.tanh(mesh.class_z.real / 2.0) + 0j
        f = hopf.hopf(mesh, u)
        from harmdisk import differential

        d = differential.derivatives(mesh, u)
        sel = interior_trusted(mesh, f.ok & d.ok2)
        assert np.abs(f.values[sel] - 0.25).max() < 1e-3

    def test_matches_energy_decomposition(self, geodesic32):
        mesh, state = geodesic32
        f = hopf.hopf(mesh, state)
        dens = solver.energy_decomposition(mesh, state)
        from harmdisk import differential

        d = differential.derivatives(mesh, state.values)
        sel = interior_trusted(mesh, f.ok & d.ok2)
        lhs = np.abs(f.values[sel])
        rhs = np.sqrt(dens.H[sel] * dens.L[sel])
        assert np.abs(lhs - rhs).max() <= 0.01 * max(rhs.max(), 1e-12)

    def test_rotation_transformation_law(self):
        # phi is a quadratic differential: pulling u back along a rotation
        # R(z) = exp(i a) z multiplies phi by exp(2 i a)
        mesh = domain.build_disk(1.0, 16, 32)
        z = mesh.class_z
        u = 0.4 * z + 0.15 * np.conj(z) + 0.1 * z**2
        perm = mesh.rotation_permutation(16)
        probe = np.nonzero(np.abs(z) > 0.5)[0][0]
        alpha = np.angle(z[perm[probe]] / z[probe])
        f = hopf.hopf(mesh, u)
        f_rot = hopf.hopf(mesh, u[perm])
        lhs = f_rot.values
        rhs = f.values[perm] * np.exp(2j * alpha)
        sel = f_rot.ok & f.ok[perm]
        scale = np.abs(rhs[sel]).max()
        assert np.abs(lhs[sel] - rhs[sel]).max() < 1e-12 * scale

    def test_rejects_bad_shape(self):
        mesh = domain.build_disk(1.0, 8, 16)
        with pytest.raises(InvalidParameterError):
            hopf.HopfField(mesh, np.zeros(3, dtype=complex))


class TestHolomorphy:
    def test_quadratic_exact(self):
        mesh = domain.build_disk(1.0, 16, 32)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        norms = hopf.holomorphic_residual(f)
        assert norms.sup < 1e-10
        assert norms.l2 < 1e-10
        assert norms.n_measured > 100

    def test_antiholomorphic_detected(self):
        mesh = domain.build_disk(1.0, 16, 32)
        f = hopf.HopfField(mesh, np.conj(mesh.class_z))
        norms = hopf.holomorphic_residual(f)
        assert norms.sup == pytest.approx(1.0, abs=1e-10)

    def test_solved_state_residual(self, geodesic32, geodesic64):
        sups = []
        for mesh, state in (geodesic32, geodesic64):
            f = hopf.hopf(mesh, state)
            norms = hopf.holomorphic_residual(f)
            sups.append(norms.sup)
        assert sups[1] <= 0.05
        assert sups[1] < 0.6 * sups[0]


# -- Laurent spectra -----------------------------------------------------------


class TestLaurent:
    def test_pure_quadratic(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        spec = hopf.laurent(f, 2.0, (-6, 6))
        assert spec[2] == pytest.approx(1.0, abs=1e-12)
        others = [abs(spec[n]) for n in spec.ns if n != 2]
        assert max(others) < 1e-12

    def test_principal_part_both_radii(self):
        mesh = domain.build_annulus(0.4, 3.0, 32, 64)
        f = hopf.HopfField(mesh, mesh.class_z**-2.0)
        for radius in (0.5, 2.0):
            spec = hopf.laurent(f, radius, (-6, 6))
            assert spec[-2] == pytest.approx(1.0, abs=1e-10)

    def test_mixed_field_and_quadrature_oracle(self):
        mesh = domain.build_annulus(0.4, 3.0, 32, 64)
        z = mesh.class_z
        f = hopf.HopfField(mesh, z**2 + 3.0 / z**6)
        spec = hopf.laurent(f, 1.5, (-8, 4))
        assert spec[2] == pytest.approx(1.0, abs=1e-10)
        assert spec[-6] == pytest.approx(3.0, abs=1e-10)
        oracle = quad_laurent_oracle(lambda w: w**2 + 3.0 / w**6,
                                     spec.radius, -6)
        assert spec[-6] == pytest.approx(oracle, abs=1e-9)

    def test_radius_independence(self):
        mesh = domain.build_annulus(0.4, 3.0, 32, 64)
        z = mesh.class_z
        f = hopf.HopfField(mesh, 2.0 * z**2 + 0.5 / z**2 - 1.0 / z**6)
        specs = [hopf.laurent(f, r, (-8, 4)) for r in (0.8, 1.3, 2.4)]
        for n in (-6, -2, 2):
            vals = [s[n] for s in specs]
            spread = max(abs(v - vals[0]) for v in vals)
            assert spread <= 1e-6 * max(abs(vals[0]), 1e-12)

    def test_snapping_recorded(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        spec = hopf.laurent(f, 1.97, (-2, 2))
        assert spec.requested_radius == pytest.approx(1.97)
        assert np.any(np.abs(mesh.ring_radii() - spec.radius) < 1e-12)

    def test_contour_outside_band(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        with pytest.raises(InvalidRegionError):
            hopf.laurent(f, 7.0, (-2, 2))

    def test_window_aliasing_guard(self):
        mesh = domain.build_disk(3.0, 8, 16)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        with pytest.raises(InvalidParameterError):
            hopf.laurent(f, 2.0, (-20, 20))


class TestSelectionRule:
    def test_allowed_indices_k4(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        spec = hopf.laurent(f, 2.0, (-14, 10))
        allowed = spec.ns[(spec.ns + 2) % 4 == 0]
        assert list(allowed) == [-14, -10, -6, -2, 2, 6, 10]

    def test_symmetric_field_clean(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        spec = hopf.laurent(f, 2.0, (-14, 10))
        assert hopf.selection_rule_check(spec, 4) < 1e-10

    def test_constructed_violation(self):
        mesh = domain.build_disk(3.0, 24, 64)
        z = mesh.class_z
        f = hopf.HopfField(mesh, z**2 + 0.1 * z**3)
        spec = hopf.laurent(f, 1.0, (-6, 6))
        assert hopf.selection_rule_check(spec, 4) == pytest.approx(0.1, rel=1e-6)


# -- reflection identity ---------------------------------------------------------


@pytest.fixture(scope="module")
def doubled():
    return domain.build_doubled_annulus(3.0, 24, 48)


class TestReflectionIdentity:
    def test_pure_principal(self, doubled):
        f = hopf.HopfField(doubled, doubled.class_z**-2.0)
        assert hopf.reflection_identity_check(f) < 1e-12

    def test_symmetric_pair(self, doubled):
        z = doubled.class_z
        f = hopf.HopfField(doubled, z**2 + z**-6.0)
        assert hopf.reflection_identity_check(f) < 1e-12

    def test_broken_symmetry_detected(self, doubled):
        z = doubled.class_z
        f = hopf.HopfField(doubled, z**2 + 2.0 * z**-6.0)
        assert hopf.reflection_identity_check(f) > 0.05

    def test_coefficient_symmetry(self, doubled):
        z = doubled.class_z
        f = hopf.HopfField(doubled, 0.7 * (z**2 + z**-6.0) + 0.2 * (1.0 / z**2 + z**-2.0))
        spec = hopf.laurent(f, 1.4, (-10, 6))
        scale = np.abs(spec.coeffs).max()
        for n in range(-4, 7):
            if spec.n_min <= -(n + 2) <= spec.n_max and spec.n_min <= n - 2 <= spec.n_max:
                assert abs(spec[-(n + 2)] - spec[n - 2]) < 1e-10 * scale


# -- zero divisors ---------------------------------------------------------------


class TestDivisor:
    def test_double_zero_at_origin(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        div = hopf.find_divisor(f, k=4, g=0)
        assert len(div.zeros) == 1
        z = div.zeros[0]
        assert abs(z.position) < 0.05
        assert z.multiplicity == 2
        assert div.pole_order_at_puncture is None

    def test_two_simple_zeros(self):
        mesh = domain.build_disk(3.0, 32, 96)
        z = mesh.class_z
        f = hopf.HopfField(mesh, (z - 1.0) * (z + 1.0))
        div = hopf.find_divisor(f, k=4, g=0)
        assert div.total_multiplicity() == 2
        pos = sorted(round(w.position.real, 1) for w in div.zeros)
        assert pos == [-1.0, 1.0]
        assert all(w.multiplicity == 1 for w in div.zeros)

    def test_no_zero_no_candidates(self, torus16):
        f = hopf.HopfField(torus16, np.ones(torus16.n_classes, dtype=complex))
        div = hopf.find_divisor(f, k=4, g=1)
        assert div.zeros == []
        assert div.growth_exponent == pytest.approx(0.0, abs=1e-9)
        assert div.pole_order_at_puncture == 4

    def test_torus_end_growth(self, torus16):
        # phi growing like z^2 on the disk chart end: pole order 6
        z = torus16.class_z
        vals = np.where(torus16.class_chart == 0, z**2, 1.0 + 0j)
        f = hopf.HopfField(torus16, vals)
        exponent, stderr = hopf._growth_exponent(torus16, np.abs(f.values))
        assert exponent == pytest.approx(2.0, abs=0.05)
        assert stderr < 0.05

    def test_defect_requires_pole(self):
        div = hopf.Divisor([], None, None, None, {})
        with pytest.raises(InvalidParameterError):
            div.riemann_roch_defect(1)


class TestArrangements:
    def test_enumeration_is_the_published_list(self):
        arrs = hopf.enumerate_arrangements()
        assert [a.label for a in arrs] == ["a", "b1", "b2", "b3", "c"]
        assert [a.counts for a in arrs] == [
            (0, 0, 2, 2, 0),
            (0, 0, 2, 0, 1),
            (1, 0, 2, 0, 0),
            (0, 1, 2, 0, 0),
            (0, 0, 0, 6, 0),
        ]

    def test_semantic_weights_sum_to_six(self):
        for a in hopf.enumerate_arrangements():
            n_p, n_q, n_r, n_s, n_t = a.site_multiplicities
            assert 4 * n_p + 4 * n_q + 2 * n_r + n_s + 4 * n_t == 6
            assert n_s in (0, 2, 6)
            if n_s:
                assert n_s % 4 == 2

    def _zero(self, mesh, cls, mult):
        return hopf.Zero(mesh.charts[mesh.class_chart[cls]].id,
                         mesh.class_z[cls], mult, cls)

    def test_classify_three_double_zeros(self, torus16):
        mesh = torus16
        zeros = [self._zero(mesh, int(mesh.tags[t][0]), 2)
                 for t in ("origin_L", "origin_Hp", "origin_Hm")]
        div = hopf.Divisor(zeros, 6, 2.0, 0.0, {})
        arr = hopf.classify_divisor_d4(div, mesh)
        assert arr.label == "a"
        assert arr.counts == (0, 0, 2, 2, 0)
        assert sorted(arr.sites) == ["R", "R", "S"]

    def test_classify_order_six(self, torus16):
        mesh = torus16
        div = hopf.Divisor([self._zero(mesh, int(mesh.tags["origin_Hm"][0]), 6)],
                           6, 2.0, 0.0, {})
        arr = hopf.classify_divisor_d4(div, mesh)
        assert arr.label == "c"
        assert arr.counts == (0, 0, 0, 6, 0)

    def test_classify_mirror_circle_family(self, torus16):
        mesh = torus16
        origins = {int(mesh.tags[t][0])
                   for t in ("origin_L", "origin_Hp", "origin_Hm")}
        point = mesh.symmetry("point")
        on_a = [c for c in mesh.tags["circle_A"]
                if c not in origins and point[c] != c
                and not mesh.cone[c]
                and mesh.marker[c] == domain.MARK_INTERIOR]
        c1 = int(on_a[0])
        on_b = [c for c in mesh.tags["circle_B"]
                if c not in origins and point[c] != c
                and not mesh.cone[c]
                and mesh.marker[c] == domain.MARK_INTERIOR]
        c2 = int(on_b[0])
        zeros = [self._zero(mesh, c, 1)
                 for c in (c1, int(point[c1]), c2, int(point[c2]))]
        zeros.append(self._zero(mesh, int(mesh.tags["origin_Hm"][0]), 2))
        arr = hopf.classify_divisor_d4(hopf.Divisor(zeros, 6, 2.0, 0.0, {}), mesh)
        assert arr.label == "b1"
        assert arr.counts == (0, 0, 2, 0, 1)

    def test_generic_zero_is_other(self, torus16):
        mesh = torus16
        tagged = set()
        for t in ("circle_A", "circle_B", "circle_C1", "circle_D1",
                  "origin_L", "origin_Hp", "origin_Hm"):
            tagged |= set(int(c) for c in mesh.tags[t])
        interior = np.nonzero(
            (mesh.marker == domain.MARK_INTERIOR) & ~mesh.cone
        )[0]
        generic = next(
            int(c) for c in interior
            if c not in tagged
            and hopf._site_of(mesh, int(c), 2.0 * hopf._local_h(mesh, int(c))) == "Q"
        )
        div = hopf.Divisor([self._zero(mesh, generic, 6)], 6, 2.0, 0.0, {})
        arr = hopf.classify_divisor_d4(div, mesh)
        assert arr.label == "other"
        assert arr.notes


class TestOrientation:
    def _center_divisor(self, mesh):
        center = int(mesh.tags["center"][0])
        return hopf.Divisor(
            [hopf.Zero("disk", 0j, 2, center)], None, None, None, {}
        )

    def test_conformal_state_positive(self):
        mesh = domain.build_disk(1.0, 16, 32)
        u = solver.MapState(mesh, 0.5 * mesh.class_z)
        signs = hopf.orientation_at_zeros(self._center_divisor(mesh), u)
        assert signs == [1]

    def test_anticonformal_state_negative(self):
        mesh = domain.build_disk(1.0, 16, 32)
        u = solver.MapState(mesh, 0.5 * np.conj(mesh.class_z))
        signs = hopf.orientation_at_zeros(self._center_divisor(mesh), u)
        assert signs == [-1]

    def test_degenerate_state_undetermined(self):
        mesh = domain.build_disk(1.0, 16, 32)
        u = solver.MapState(mesh, np.tanh(mesh.class_z.real / 2.0) + 0j)
        signs = hopf.orientation_at_zeros(self._center_divisor(mesh), u)
        assert signs == [0]


class TestFoliation:
    def test_constant_field_horizontal_lines(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, np.ones(mesh.n_classes, dtype=complex))
        t = hopf.trace_foliation(f, [0.5 + 0.4j], "horizontal",
                                 arclength=20.0)[0]
        pts = t.segments[0][1]
        assert np.abs(pts.imag - 0.4).max() < 1e-9
        assert t.reason == "boundary"
        assert t.phi_length == pytest.approx(pts.real[-1] - 0.5, rel=1e-6)

    def test_quadratic_axis_is_horizontal_leaf(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        t = hopf.trace_foliation(f, [0.3 + 0j], "horizontal", arclength=10.0)[0]
        pts = t.segments[0][1]
        assert np.abs(pts.imag).max() < 1e-12
        assert pts.real[-1] > 2.5

    def test_quadratic_diagonal_is_vertical_leaf(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        seed = 0.3 * np.exp(1j * np.pi / 4)
        t = hopf.trace_foliation(f, [seed], "vertical", arclength=10.0)[0]
        pts = t.segments[0][1]
        assert np.abs(np.angle(pts) - np.pi / 4).max() < 1e-10

    def test_terminates_at_zero(self):
        mesh = domain.build_disk(3.0, 24, 64)
        f = hopf.HopfField(mesh, mesh.class_z**2)
        t = hopf.trace_foliation(f, [-0.5 + 0j], "horizontal",
                                 arclength=10.0)[0]
        assert t.reason == "zero"
        assert abs(t.segments[-1][1][-1]) < 0.1

    def test_torus_crossing_and_budget(self, torus16):
        f = hopf.HopfField(torus16, np.ones(torus16.n_classes, dtype=complex))
        t = hopf.trace_foliation(f, [0.0 + 0.2j], "horizontal",
                                 arclength=5.0, chart="Hp")[0]
        assert t.reason == "arclength"
        assert t.phi_length == pytest.approx(5.0, rel=1e-9)
        charts = [s[0] for s in t.segments]
        assert len(charts) >= 3
        assert set(charts) == {"Hp", "Hm"}

    def test_rejects_bad_direction(self):
        mesh = domain.build_disk(1.0, 8, 16)
        f = hopf.HopfField(mesh, np.ones(mesh.n_classes, dtype=complex))
        with pytest.raises(InvalidParameterError):
            hopf.trace_foliation(f, [0j], "diagonal")


class TestCrossChecks:
    def test_energy_bounds_hopf(self, geodesic32):
        # e >= 2|phi| pointwise with equality where J = 0
        mesh, state = geodesic32
        f = hopf.hopf(mesh, state)
        dens = solver.energy_decomposition(mesh, state)
        from harmdisk import differential

        d = differential.derivatives(mesh, state.values)
        sel = interior_trusted(mesh, f.ok & d.ok2)
        e = dens.e[sel]
        two_phi = 2.0 * np.abs(f.values[sel])
        assert np.all(e >= two_phi - 1e-9 * e.max())
        # the geodesic model has J == 0: equality to discretization error
        assert np.abs(e - two_phi).max() < 0.01 * e.max()
