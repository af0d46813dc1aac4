import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conical import jm
from conical.energy import (
    DirectionScan,
    EnergyQuadrature,
    EnMeasure,
    JmMeasure,
    MassInterval,
    PolylineMeasure,
    ball_mass,
    carleson_statistic,
    conical_energy,
    direction_min_energy,
    energies_over_directions,
    fit_log_over_square,
    jm_ball_density_increments,
    jm_cone_ball_domination,
    jm_energy_deep,
    theta_grid,
)
from conical.geometry import Cone, Polyline, Similarity
from conical.energy import cone_mass
from conftest import default_suite, direction_ratios

ALPHA = math.pi / 4


def segment(a, b):
    return PolylineMeasure(Polyline.from_vertices([a, b]))


def circle(center, radius, n=4096):
    t = np.linspace(0, 2 * math.pi, n + 1)
    return PolylineMeasure(Polyline.from_vertices(
        np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])))


def _dist_to_segment(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    q = a + t[:, None] * ab
    return np.hypot(*(p - q).T)


def disc_bracket(centers, rad, apex, theta, alpha, R, weight):
    """Mass bracket from the distance of each disc to the cone's four boundary rays."""
    apex = np.asarray(apex, float)
    v = centers - apex
    d = np.hypot(*v.T)
    near = d - rad <= R
    c, d, v = centers[near], d[near], v[near]
    u = np.array([math.cos(theta), math.sin(theta)])
    n = np.array([-u[1], u[0]])
    centre_in = (np.abs(v @ n) < math.sin(alpha) * d) & (d <= R)
    rays = []
    for s in (1, -1):
        for a in (alpha, -alpha):
            e = s * np.array([math.cos(theta + a), math.sin(theta + a)])
            rays.append(_dist_to_segment(c, apex, apex + R * e))
    gap = np.min(rays, axis=0)
    full = centre_in & (gap > rad) & (d + rad <= R)
    miss = ~centre_in & (gap > rad)
    return full.sum() * weight, (len(c) - miss.sum()) * weight


class TestMassQueries:
    def test_segment_through_apex(self):
        m = segment((-1, 0), (1, 0))
        for r in (0.1, 0.5, 0.99):
            iv = cone_mass(m, Cone((0, 0), 0.0, 0.3, 0.0, r))
            assert iv.lo == iv.hi == pytest.approx(2 * r, rel=1e-15)

    def test_jm_cone_containing_everything(self, jmp):
        iv = cone_mass(JmMeasure(jmp, 5), Cone((-10, 0), 0.0, 0.3, 0.0, 20.0))
        assert iv.lo == iv.hi == 1.0

    def test_jm_brackets_materialised_oracle(self, jmp):
        rng = np.random.default_rng(5)
        centers, _, rad = jm.generation_arrays(jmp, 6)
        w = 1.0 / len(centers)
        m = JmMeasure(jmp, 9)
        for _ in range(25):
            apex = rng.uniform(-0.5, 0.5, 2)
            th, al = rng.uniform(0, math.pi), rng.uniform(0.05, 1.5)
            R = math.exp(rng.uniform(math.log(0.01), 0))
            olo, ohi = disc_bracket(centers, rad, apex, th, al, R, w)
            iv = cone_mass(m, Cone(apex, th, al, 0.0, R), tol=1e-3)
            assert iv.lo <= ohi + 1e-12 and iv.hi >= olo - 1e-12
            assert iv.lo <= iv.hi

    def test_ball_whole_and_segment(self, jmp):
        assert ball_mass(JmMeasure(jmp, 4), (0, 0), 2.0).lo == 1.0
        assert ball_mass(segment((-1, 0), (1, 0)), (0.2, 0), 0.3).mid == pytest.approx(0.6)

    def test_ball_at_tree_ball(self, jmp):
        a = jm.middle_address(jmp, 10)
        for k in (1, 2, 3):
            c = jm.point_at(jmp, a, k)
            iv = ball_mass(JmMeasure(jmp, 8), c, jm.radius(jmp, k), tol=1e-4)
            exact = math.exp(jm.log_mass(jmp, k))
            # the ball carries its own mass plus the parts of overlapping siblings
            assert iv.hi >= exact * (1 - 1e-12)
            assert iv.lo >= exact * (1 - 1e-4)

    def test_annular_cone_difference(self, jmp):
        m = JmMeasure(jmp, 6)
        c = Cone((0.1, 0.05), 0.4, 0.6, 0.05, 0.3)
        iv = cone_mass(m, c)
        outer = cone_mass(m, c.truncated(0.3))
        assert iv.hi <= outer.hi + 1e-15

    def test_untruncated_rejected(self):
        with pytest.raises(ValueError):
            cone_mass(segment((0, 0), (1, 0)), Cone((0, 0), 0.0, 0.3))

    def test_mass_interval(self):
        iv = MassInterval(1.0, 1.5)
        assert iv.mid == 1.25 and iv.width == 0.5 and iv.contains(1.2)


class TestMonotone:
    @settings(max_examples=30)
    @given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(0, math.pi),
           st.floats(0.1, 1.2), st.floats(0.05, 1.0))
    def test_jm_monotone_in_radius_and_aperture(self, x, y, th, al, r):
        m = JmMeasure(jm.JmParams(), 5)
        a = cone_mass(m, Cone((x, y), th, al, 0.0, r))
        b = cone_mass(m, Cone((x, y), th, al, 0.0, 1.5 * r))
        c = cone_mass(m, Cone((x, y), th, min(1.5, 1.2 * al), 0.0, r))
        # exact bounds of the same fixed expansion are monotone
        assert b.hi >= a.hi - 1e-12 and c.hi >= a.hi - 1e-12

    @settings(max_examples=30)
    @given(st.floats(-0.9, 0.9), st.floats(0, math.pi), st.floats(0.1, 1.2),
           st.floats(0.01, 1.0))
    def test_polyline_monotone(self, x, th, al, r):
        m = circle((0.1, 0.0), 0.5, 256)
        a = cone_mass(m, Cone((x, 0.0), th, al, 0.0, r)).lo
        assert cone_mass(m, Cone((x, 0.0), th, al, 0.0, 1.3 * r)).lo >= a - 1e-14
        assert cone_mass(m, Cone((x, 0.0), th, min(1.5, 1.2 * al), 0.0, r)).lo >= a - 1e-14


class TestEnergy:
    def test_diameter_energy(self):
        m = segment((-1, 0), (1, 0))
        q = EnergyQuadrature(1e-3, 1.0)
        e = conical_energy(m, (0, 0), 0.0, 0.3, 0.9, q)
        assert e.value == pytest.approx(2 * math.log(0.9 / 1e-3), rel=1e-12)
        assert e.lower <= e.value <= e.upper

    def test_divergence_as_r_min_shrinks(self):
        m = segment((-1, 0), (1, 0))
        vals = [conical_energy(m, (0, 0), 0.0, 0.3, 0.9, EnergyQuadrature(r, 1.0)).value
                for r in (1e-2, 1e-4, 1e-6)]
        assert vals[0] < vals[1] < vals[2]

    def test_outside_support(self):
        m = segment((5, 5), (6, 5))
        assert conical_energy(m, (0, 0), 0.0, 0.3, 1.0, EnergyQuadrature(1e-3)).value == 0.0

    def test_circle_is_direction_uniform(self):
        m = circle((0, 0), 0.5)
        q = EnergyQuadrature(1e-2, 1.0)
        s = direction_min_energy(m, (0, 0), ALPHA, 1.0, q)
        assert s.max - s.min <= 2 * s.errors.max() + 1e-9

    def test_segment_minimiser_orthogonal(self):
        m = segment((-1, 0), (1, 0))
        s = direction_min_energy(m, (0, 0), ALPHA, 0.9, EnergyQuadrature(1e-3))
        assert angle_dist(s.theta_star, math.pi / 2) <= ALPHA / 8

    def test_theta_step_checked(self):
        with pytest.raises(ValueError):
            direction_min_energy(segment((0, 0), (1, 0)), (0, 0), ALPHA, 1.0,
                                 EnergyQuadrature(1e-3), theta_step=ALPHA / 4)

    def test_grid_properties(self):
        q = EnergyQuadrature(1e-3, 2.0, 2.0)
        g = q.grid(1.0)
        assert g[0] == 1.0 and g[-1] == 1e-3 and np.all(np.diff(g) < 0)
        assert set(np.round(np.log2(g[:-1]), 9)) <= set(np.round(np.log2(q.refined().grid(1.0)), 9))
        with pytest.raises(ValueError):
            EnergyQuadrature(0.0)
        assert len(theta_grid(ALPHA / 16)) == 64

    def test_tie_resolves_to_middle_of_run(self):
        s = DirectionScan(np.arange(8.0), np.array([3, 1, 1, 1, 2, 2, 3, 3.0]), np.zeros(8))
        assert s.argmin == 2

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_similarity_equivariance(self, p):
        pts = np.array([[-1, 0.1], [-0.2, -0.3], [0.4, 0.2], [1.0, -0.1]])
        m = PolylineMeasure(Polyline.from_vertices(pts))
        g = Similarity(3, 0.37, (2.0, -1.0))
        x, th, R = np.array([0.05, -0.02]), 0.3, 1.2
        q = EnergyQuadrature(1e-4, p)
        a = conical_energy(m, x, th, 0.5, R, q).value
        gm = PolylineMeasure(g(m.polyline))
        b = conical_energy(gm, g.apply_point(x), th + 3 * math.pi / 4, 0.5, 0.37 * R,
                           EnergyQuadrature(0.37e-4, p)).value
        if p == 1.0:
            assert b == pytest.approx(a, rel=1e-10)
        else:
            # mass and radius both scale, so the integrand is unchanged
            assert b == pytest.approx(a, rel=1e-10)

    def test_refinement_within_error(self, en2):
        m = EnMeasure(en2)
        q = EnergyQuadrature(en2.default_r_min(), 1.0)
        th = theta_grid(ALPHA / 4)
        for p, _ in en2.bad_set_sample(3, 9):
            a = energies_over_directions(m, p, th, ALPHA, 1.0, q)
            b = energies_over_directions(m, p, th, ALPHA, 1.0, q.refined())
            for ea, eb in zip(a, b):
                assert abs(ea.value - eb.value) <= ea.err


def angle_dist(a, b):
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


class TestEnEnergy:
    def test_bad_point_energy_grows_with_N(self):
        from conical.suites import en_set

        means = []
        for N in (2, 3):
            en = en_set(3, N)
            q = EnergyQuadrature(en.default_r_min(), 1.0)
            vals = [direction_min_energy(EnMeasure(en), p, ALPHA, 1.0, q, ALPHA / 8).min
                    for p, _ in en.bad_set_sample(4, 1)]
            means.append(np.mean(vals))
        assert means[1] > means[0] > 0

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="a few sampled bad points exceed a 30% direction spread "
                                           "(median about 28%); the bounded ratio <= 3 holds")
    def test_bad_point_direction_spread_within_30_percent(self):
        ratios = direction_ratios(default_suite("en-energy"))
        wide = {k: r for k, r in ratios.items() if 1.0 / r < 0.7}
        print(f"bad points with min/max < 0.7: {len(wide)} of {len(ratios)}")
        assert not wide

    def test_carleson_covering_ball(self, en2):
        m = EnMeasure(en2)
        q = EnergyQuadrature(en2.default_r_min(), 1.0)
        res = carleson_statistic(m, (0, 0), 3.0, ALPHA, q, 4, seed=0, theta_step=ALPHA / 8)
        assert res.strata["bad"]["mass"] == pytest.approx(en2.bad_length)
        assert sum(s["mass"] for s in res.strata.values()) == pytest.approx(m.total_mass)
        assert res.value > 0 and res.strata["bad"]["mean"] > res.strata["rest"]["mean"]


class TestDeep:
    def test_divergent_blocks_positive(self, jmp):
        dep = jm_energy_deep(jmp, [0.0], ALPHA, 64, 1)
        assert np.all(dep.value[1:] > 0)
        lo, hi = dep.partial_bounds(64)
        assert lo[0] <= dep.partial(64)[0] <= hi[0]

    def test_good_index_contributions(self, jmp):
        # block 9 holds the first good indices for alpha = pi/4
        dep = jm_energy_deep(jmp, [0.0], ALPHA, 1023, 1, levels=4)
        ks = [k for k in range(512, 1024) if jm.is_good_index(k, 0.0, ALPHA)]
        assert len(ks) == jm.good_index_count(9, 0.0, ALPHA)
        vals = np.array([dep.value[k, 0] * k for k in ks])
        assert vals.min() > 0.01

    def test_exponent_two_increments(self, jmp):
        inc = jm_ball_density_increments(jmp, 256)
        v = inc.value[:, 0]
        assert np.all(np.diff(v[32:]) < 0)
        k = np.arange(33, 257)
        C, spread = fit_log_over_square(k, v[33:])
        assert C > 0 and spread <= 4

    def test_domination(self, jmp):
        assert jm_cone_ball_domination(jmp, [0.0, 1.0], ALPHA, 64) == 0

    def test_depth_cap(self):
        with pytest.raises(ValueError):
            jm_energy_deep(jm.JmParams(depth_cap=10), [0.0], ALPHA, 20)
