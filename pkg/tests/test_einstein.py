import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudoplateau.qcore import (
    BilinearForm,
    DegenerateTripleError,
    random_isometry,
    reference_triple,
)
from pseudoplateau import einstein as ein


FORM1 = BilinearForm(1)
FORM2 = BilinearForm(2)


def ref_points(form):
    return [ein.boundary_point(form, z) for z in reference_triple(form)]


def circle_points(form, *angles):
    circ = ein.standard_circle(form)
    return [circ.point_at(t) for t in angles]


def constant_loop(n=1, k=48, fiber=None):
    thetas = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
    f = np.zeros(n + 1)
    f[0] = 1.0
    if fiber is not None:
        f = np.asarray(fiber, dtype=float)
    fibers = np.tile(f, (k, 1))
    return ein.LipschitzLoop(thetas, fibers)


def rigid_arc_loop(n=1, k=96):
    """Isometric on [0, pi/2], contracting at rate 1/3 on the complement."""
    thetas = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
    fibers = np.zeros((k, n + 1))
    for i, t in enumerate(thetas):
        phi = t if t <= np.pi / 2.0 else np.pi / 2.0 - (t - np.pi / 2.0) / 3.0
        fibers[i, 0] = np.cos(phi)
        fibers[i, 1] = np.sin(phi)
    return ein.LipschitzLoop(thetas, fibers)


class TestBoundaryPoint:
    def test_product_normalisation(self):
        p = ein.boundary_point(FORM1, np.array([3.0, 0.0, 0.0, 3.0]))
        assert np.allclose(p.u, [1.0, 0.0])
        assert np.allclose(p.v, [0.0, 1.0])
        assert abs(FORM1.q(p.rep)) <= 1e-10

    def test_sign_rule(self):
        p = ein.boundary_point(FORM1, np.array([-2.0, 0.0, 0.0, 2.0]))
        assert p.u[0] == 1.0

    def test_rejects_non_isotropic(self):
        with pytest.raises(ein.GeometryError):
            ein.boundary_point(FORM1, np.array([1.0, 0.0, 0.0, 2.0]))


class TestTransverse:
    def test_self_not_transverse(self):
        x = circle_points(FORM1, 0.3)[0]
        assert not ein.transverse(FORM1, x, x)

    def test_crown_adjacent_and_diagonal(self):
        crown = ein.barbot_crown_standard(1)
        v = crown.vertices(FORM1)
        assert not ein.transverse(FORM1, v[0], v[1])
        assert ein.transverse(FORM1, v[0], v[2])

    def test_antipodal_circle_points(self):
        x, y = circle_points(FORM1, 0.0, np.pi)
        assert ein.transverse(FORM1, x, y)
        # on the natural circle lifts (cos t, sin t, 1) the pairing is cos(pi) - 1
        lift0 = np.array([1.0, 0.0, 1.0, 0.0])
        lift1 = np.array([-1.0, 0.0, 1.0, 0.0])
        assert FORM1.inner(lift0, lift1) == pytest.approx(-2.0)


class TestTripleClass:
    def test_circle_triple_positive(self):
        a, b, c = circle_points(FORM1, 0.2, 2.0, 4.0)
        assert ein.triple_class(FORM1, a, b, c) == "positive"

    def test_crown_edge_triple_degenerate(self):
        crown = ein.barbot_crown_standard(1)
        v = crown.vertices(FORM1)
        loop = ein.crown_loop(crown)
        mid = loop.boundary_point(np.pi / 4.0)
        assert ein.triple_class(FORM1, v[0], v[1], mid) == "nonnegative_degenerate"

    def test_coincident_points_rejected(self):
        a, b = circle_points(FORM1, 0.2, 2.0)
        with pytest.raises(ein.CoincidentPointsError):
            ein.triple_class(FORM1, a, a, b)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=3))
        if np.min(np.diff(angles)) < 0.1:
            return
        a, b, c = circle_points(FORM2, *angles)
        classes = {
            ein.triple_class(FORM2, *perm)
            for perm in ([a, b, c], [b, c, a], [c, a, b], [a, c, b], [b, a, c], [c, b, a])
        }
        assert classes == {"positive"}


class TestMinkowskiChart:
    def test_origin_maps_to_anchor(self):
        a, b, _ = ref_points(FORM1)
        chart = ein.minkowski_chart(FORM1, a, b)
        img = ein.minkowski_chart_apply(FORM1, chart, np.zeros(2))
        assert ein.projectively_equal(img, b)

    def test_lightlike_line_lands_on_photon(self):
        a, b, _ = ref_points(FORM2)
        chart = ein.minkowski_chart(FORM2, a, b)
        w = np.array([1.0, 1.0, 0.0])
        pts = [ein.minkowski_chart_apply(FORM2, chart, t * w) for t in (0.5, 1.5, 3.0)]
        sig = ein.subspace_signature(FORM2, [p.rep for p in pts]).as_tuple()
        assert sig[2] >= 1 and sig[0] + sig[1] + sig[2] == 3
        assert ein.subspace_signature(FORM2, [pts[0].rep, pts[1].rep]).as_tuple() == (0, 0, 2)

    def test_spacelike_line_lands_on_circle_through_cone_point(self):
        a, b, _ = ref_points(FORM1)
        chart = ein.minkowski_chart(FORM1, a, b)
        w = np.array([1.0, 0.2])
        pts = [ein.minkowski_chart_apply(FORM1, chart, t * w) for t in (-1.0, 0.5, 2.0)]
        # the three images and the cone point span a (2, 1) space; the fourth
        # Gram eigenvalue is the rank-deficiency null
        sig = ein.subspace_signature(FORM1, [p.rep for p in pts] + [a.rep]).as_tuple()
        assert sig == (2, 1, 1)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        a, b, _ = ref_points(FORM2)
        chart = ein.minkowski_chart(FORM2, a, b)
        u = rng.normal(size=3)
        x = ein.minkowski_chart_apply(FORM2, chart, u)
        back = ein.minkowski_chart_inverse(FORM2, chart, x)
        assert np.max(np.abs(back - u)) < 1e-10

    def test_inverse_rejects_light_cone(self):
        a, b, _ = ref_points(FORM1)
        chart = ein.minkowski_chart(FORM1, a, b)
        with pytest.raises(ein.ChartDomainError):
            ein.minkowski_chart_inverse(FORM1, chart, a)


class TestTauChart:
    def test_defining_property(self):
        a, b, c = ref_points(FORM1)
        chart = ein.tau_chart(FORM1, (a, b, c))
        e1 = np.array([1.0, 0.0])
        img_b = ein.minkowski_chart_apply(FORM1, chart, -e1)
        img_c = ein.minkowski_chart_apply(FORM1, chart, e1)
        assert ein.projectively_equal(img_b, b, atol=1e-10)
        assert ein.projectively_equal(img_c, c, atol=1e-10)

    def test_defining_property_generic_triple(self):
        a, b, c = circle_points(FORM2, 0.5, 2.5, 4.5)
        chart = ein.tau_chart(FORM2, (a, b, c))
        e1 = np.zeros(3)
        e1[0] = 1.0
        assert ein.projectively_equal(ein.minkowski_chart_apply(FORM2, chart, -e1), b, atol=1e-8)
        assert ein.projectively_equal(ein.minkowski_chart_apply(FORM2, chart, e1), c, atol=1e-8)

    def test_degenerate_triple_rejected(self):
        crown = ein.barbot_crown_standard(1)
        v = crown.vertices(FORM1)
        with pytest.raises(DegenerateTripleError):
            ein.tau_chart(FORM1, (v[0], v[1], v[2]))


class TestDiamond:
    def test_endpoints_at_distance_two(self):
        a, b, c = ref_points(FORM1)
        assert ein.diamond_distance(FORM1, (a, b, c), b, c) == pytest.approx(2.0, abs=1e-10)

    def test_zero_distance(self):
        a, b, c = ref_points(FORM1)
        assert ein.diamond_distance(FORM1, (a, b, c), b, b) == pytest.approx(0.0, abs=1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_isometry_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = circle_points(FORM1, 0.0, 2.1, 4.2)
        circ = ein.standard_circle(FORM1)
        x = circ.point_at(2.6)
        y = circ.point_at(3.4)
        d0 = ein.diamond_distance(FORM1, (a, b, c), x, y)
        g = random_isometry(FORM1, rng)
        moved = [ein.boundary_point(FORM1, g.apply(p.rep)) for p in (a, b, c, x, y)]
        d1 = ein.diamond_distance(FORM1, tuple(moved[:3]), moved[3], moved[4])
        assert d1 == pytest.approx(d0, abs=1e-9 * (1 + d0))

    def test_outside_point_rejected(self):
        a, b, c = circle_points(FORM1, 0.0, 2.1, 4.2)
        circ = ein.standard_circle(FORM1)
        outside = circ.point_at(1.0)  # between a and b, not in the (b, c) diamond avoiding a
        with pytest.raises(ein.ChartDomainError):
            ein.diamond_distance(FORM1, (a, b, c), outside, b)


class TestQuadruple:
    def test_cyclic_order_positive(self):
        a, b, c, d = circle_points(FORM1, 0.0, 1.5, 3.0, 4.5)
        assert ein.quadruple_positive(FORM1, a, b, c, d)

    def test_same_side_negative(self):
        a, b, c, d = circle_points(FORM1, 0.0, 1.0, 3.0, 2.0)
        assert not ein.quadruple_positive(FORM1, a, b, c, d)

    def test_transposition_breaks_positivity(self):
        a, b, c, d = circle_points(FORM1, 0.0, 1.5, 3.0, 4.5)
        assert not ein.quadruple_positive(FORM1, a, c, b, d)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_cyclic_invariance(self, seed):
        rng = np.random.default_rng(seed)
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=4))
        if np.min(np.diff(angles)) < 0.15:
            return
        a, b, c, d = circle_points(FORM2, *angles)
        assert ein.quadruple_positive(FORM2, a, b, c, d)
        assert ein.quadruple_positive(FORM2, b, c, d, a)


class TestLoops:
    def test_constant_loop_positive(self):
        assert ein.loop_classify(constant_loop()) == "positive"

    def test_isometric_loop_invalid(self):
        k = 48
        thetas = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
        fibers = np.column_stack([np.cos(thetas), np.sin(thetas)])
        loop = ein.LipschitzLoop(thetas, fibers)
        assert ein.loop_classify(loop) == "invalid"

    def test_rigid_arc_semipositive(self):
        loop = rigid_arc_loop()
        assert ein.loop_classify(loop) == "semipositive"

    def test_positive_loop_has_no_photon_arc(self):
        assert ein.photon_arc(constant_loop()) == []

    def test_rigid_arc_detected(self):
        loop = rigid_arc_loop()
        arcs = ein.photon_arc(loop)
        assert len(arcs) == 1
        i0, i1 = arcs[0]
        lo = loop.thetas[i0]
        hi = loop.thetas[i1]
        assert lo == pytest.approx(0.0, abs=0.1)
        assert hi == pytest.approx(np.pi / 2.0, abs=0.1)

    def test_crown_loop_semipositive_with_four_arcs(self):
        crown = ein.barbot_crown_standard(1)
        loop = ein.crown_loop(crown)
        assert ein.loop_classify(loop) == "semipositive"
        arcs = ein.photon_arc(loop)
        assert len(arcs) == 4
        # arcs tile the circle: each arc ends where the next begins
        starts = sorted(a[0] for a in arcs)
        ends = sorted(a[1] for a in arcs)
        assert starts == ends

    def test_crown_loop_n2(self):
        crown = ein.barbot_crown_standard(2)
        loop = ein.crown_loop(crown)
        assert ein.loop_classify(loop) == "semipositive"
        assert len(ein.photon_arc(loop)) == 4


class TestCrown:
    def test_standard_crown_invariants(self):
        for n in (1, 2, 3):
            crown = ein.barbot_crown_standard(n)
            ein.validate_crown(BilinearForm(n), crown, atol=1e-14)

    def test_sum_of_reps_is_unit_timelike(self):
        crown = ein.barbot_crown_standard(2)
        x = crown.zreps.sum(axis=0)
        assert BilinearForm(2).q(x) == pytest.approx(-1.0, abs=1e-14)

    def test_seeded_crown_from_rigid_arc(self):
        loop = rigid_arc_loop()
        crown = ein.crown_seeded_from_arc(FORM1, loop)
        ein.validate_crown(FORM1, crown, atol=1e-8)

    def test_seeded_crown_from_crown_loop(self):
        std = ein.barbot_crown_standard(1)
        loop = ein.crown_loop(std)
        crown = ein.crown_seeded_from_arc(FORM1, loop)
        ein.validate_crown(FORM1, crown, atol=1e-8)

    def test_rejects_n_zero(self):
        with pytest.raises(ein.DegenerateCrownError):
            ein.barbot_crown_standard(0)


class TestLoopIO:
    def test_round_trip(self, tmp_path):
        loop = rigid_arc_loop()
        path = tmp_path / "loop.txt"
        ein.loop_save(loop, path)
        back = ein.loop_load(path)
        assert np.array_equal(back.thetas, loop.thetas)
        # the loader renormalises fibers onto the sphere, so equality is
        # up to one rounding step
        assert np.allclose(back.fibers, loop.fibers, atol=1e-14)

    def test_rejects_off_sphere_sample(self, tmp_path):
        text = "einstein-loop v1 n=1 samples=3\n0.0 1.0 0.0\n1.0 0.5 0.5\n2.0 1.0 0.0\n"
        with pytest.raises(ein.InvalidLoopError):
            ein.loop_loads(text)

    def test_renormalises_near_unit_samples(self):
        eps = 5e-7
        text = (
            "einstein-loop v1 n=1 samples=3\n"
            f"0.0 {1.0 + eps} 0.0\n1.0 0.0 1.0\n2.0 -1.0 0.0\n"
        )
        loop = ein.loop_loads(text)
        assert np.allclose(np.linalg.norm(loop.fibers, axis=1), 1.0, atol=1e-12)


class TestPhotonAndCircleTypes:
    def test_photon_through_crown_edge(self):
        crown = ein.barbot_crown_standard(1)
        v = crown.vertices(FORM1)
        ph = ein.photon_through(FORM1, v[0], v[1])
        assert ein.subspace_signature(FORM1, ph.basis).as_tuple() == (0, 0, 2)

    def test_photon_rejects_transverse_pair(self):
        crown = ein.barbot_crown_standard(1)
        v = crown.vertices(FORM1)
        with pytest.raises(ein.NonTransverseError):
            ein.photon_through(FORM1, v[0], v[2])

    def test_circle_through_triple_contains_it(self):
        circ = ein.standard_circle(FORM2)
        triple = [circ.point_at(t) for t in (0.4, 2.2, 4.3)]
        built = ein.circle_through_triple(FORM2, *triple)
        for p in triple:
            coeff, *_ = np.linalg.lstsq(built.basis.T, p.rep, rcond=None)
            assert np.max(np.abs(coeff @ built.basis - p.rep)) < 1e-9

    def test_chart_round_trip_bulk(self):
        rng = np.random.default_rng(0)
        from pseudoplateau.qcore import reference_triple
        ref = reference_triple(FORM2)
        a = ein.boundary_point(FORM2, ref[0])
        b = ein.boundary_point(FORM2, ref[1])
        chart = ein.minkowski_chart(FORM2, a, b)
        worst = 0.0
        for _ in range(1000):
            u = rng.normal(size=3) * rng.uniform(0.1, 3.0)
            x = ein.minkowski_chart_apply(FORM2, chart, u)
            back = ein.minkowski_chart_inverse(FORM2, chart, x)
            worst = max(worst, float(np.max(np.abs(back - u))))
        assert worst < 1e-10
