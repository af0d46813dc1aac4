import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conical import jm

ALPHA = math.pi / 4


class TestTree:
    def test_first_children(self, jmp):
        kids = jm.children(jmp, jm.root(jmp))
        assert len(kids) == 3
        assert 2 * kids[0].radius == pytest.approx(2 ** 0.75 / 3, rel=1e-14)

    @pytest.mark.parametrize("k", [0, 1, 5, 40, 1000])
    def test_extreme_child_tangency(self, jmp, k):
        assert jm.tangency_defect(jmp, k) <= 1e-12

    def test_children_explicit_tangency_and_mass(self, jmp):
        node = jm.root(jmp)
        for _ in range(4):
            kids = jm.children(jmp, node)
            far = max(math.hypot(c.center[0] - node.center[0], c.center[1] - node.center[1])
                      for c in kids)
            assert (far + kids[0].radius) / node.radius == pytest.approx(1.0, abs=1e-12)
            total = sum(math.exp(c.log_mass) for c in kids)
            assert total == pytest.approx(math.exp(node.log_mass), rel=1e-13)
            node = kids[1]

    @pytest.mark.parametrize("k", [1, 10, 500])
    def test_mass_conservation_log(self, jmp, k):
        assert jm.mass_conservation_defect(jmp, k) <= 1e-12
        assert jm.log_mass(jmp, k) == pytest.approx(-math.lgamma(k + 1) - k * math.log(3), rel=1e-12)

    def test_middle_point_centred(self, jmp):
        assert np.allclose(jm.point_at(jmp, jm.middle_address(jmp, 3), 1), 0.0)

    @given(st.lists(st.integers(0, 10 ** 6), min_size=12, max_size=12))
    def test_nesting(self, raw):
        P = jm.JmParams()
        a = tuple(r % (3 * (i + 1)) for i, r in enumerate(raw))
        for k in range(10):
            d = np.hypot(*(jm.point_at(P, a, k) - jm.point_at(P, a, k + 1)))
            assert d <= jm.radius(P, k) - jm.radius(P, k + 1) + 1e-15

    @pytest.mark.parametrize("k", [1, 2, 10, 100])
    def test_shrink_ratio(self, jmp, k):
        sig = ((k + 2) / (k + 1)) ** (1 - 0.5 / (k + 2))
        lhs = jm.log_radius(jmp, k + 1) - jm.log_radius(jmp, k)
        assert lhs == pytest.approx(math.log(sig / (3 * (k + 1))), rel=1e-13)

    def test_position_matches_address_limit(self, jmp):
        a = jm.middle_address(jmp, 30)
        x = jm.JmPoint(a).position(jmp)
        for k in (5, 10, 20):
            assert np.hypot(*(x - jm.point_at(jmp, a, k))) <= jm.radius(jmp, k) + 1e-16

    def test_invalid_address(self, jmp):
        with pytest.raises(ValueError):
            jm.validate_address(jmp, (3,))

    def test_depth_cap(self):
        P = jm.JmParams(depth_cap=1)
        kid = jm.children(P, jm.root(P))[0]
        with pytest.raises(ValueError):
            jm.children(P, kid)


class TestMassRatio:
    def test_first(self, jmp):
        assert jm.mass_ratio_bk(jmp, 1) == pytest.approx(2 ** -0.75, rel=1e-14)

    def test_decreasing(self, jmp):
        v = [jm.mass_ratio_bk(jmp, k) for k in range(1, 200)]
        assert all(a > b for a, b in zip(v, v[1:]))

    def test_lower_bound_exact(self, jmp):
        assert jm.mass_ratio_lower_bound_holds(jmp, 64)
        assert jm.mass_ratio_bk(jmp, 64) >= 1 / 65
        assert jm.BetaRule().exact(1) == Fraction(3, 4)


class TestGoodIndices:
    def test_boundary_counts(self):
        assert jm.is_good_index(64, 0.0, ALPHA)
        assert not jm.is_good_index(65, 0.0, ALPHA)

    @pytest.mark.parametrize("theta", [0.0, math.pi / 8, math.pi / 3, 2.0])
    def test_count_matches_enumeration(self, theta):
        n0 = jm.n0_for(ALPHA, 3)
        for N in range(n0, n0 + 4):
            c = jm.good_index_count(N, theta, ALPHA)
            assert c == jm.good_index_count_bruteforce(N, theta, ALPHA)
            assert c >= 1
            nxt = jm.good_index_count(N + 1, theta, ALPHA)
            assert abs(nxt - 2 * c) <= 2

    def test_block_below_start_rejected(self):
        with pytest.raises(ValueError):
            jm.good_index_count(3, 0.0, ALPHA)

    def test_n0(self):
        assert jm.n0_for(ALPHA, 3) == 9
        assert jm.n0_for(ALPHA / 2, 3) == 10

    @pytest.mark.parametrize("alpha", [0.1, 0.5, ALPHA, 1.5])
    def test_n0_conditions(self, alpha):
        n = jm.n0_for(alpha, 3)
        k = 2 ** n
        sig = ((k + 2) / (k + 1)) ** (1 - 0.5 / (k + 2))
        assert math.pi / 2 ** n < alpha / 100
        assert sig / (3 * (k + 1)) <= math.sin(alpha / 50) / 2
        assert not math.pi / 2 ** (n - 1) < alpha / 100 or \
            ((k / 2 + 2) / (k / 2 + 1)) ** (1 - 0.5 / (k / 2 + 2)) / (3 * (k / 2 + 1)) > \
            math.sin(alpha / 50) / 2


class TestMaterialised:
    def test_generation_size(self, jmp):
        c, parent, r = jm.generation_arrays(jmp, 4)
        assert len(c) == 3 * 6 * 9 * 12 and len(parent) == len(c)
        assert r == pytest.approx(jm.radius(jmp, 4), rel=1e-13)

    def test_no_cross_parent_overlap(self, jmp):
        assert len(jm.disjointness_audit(jmp, 5)) == 0

    def test_sibling_spacing(self, jmp):
        # siblings sit on a line with the least possible overlap
        from scipy.spatial.distance import pdist

        c, _, r = jm.generation_arrays(jmp, 3)
        r2 = jm.radius(jmp, 2)
        sig = (4 / 3) ** (1 - 0.5 / 4)
        assert pdist(c).min() == pytest.approx(r2 * 2 * (1 - sig / 9) / 8, rel=1e-12)

    def test_export(self, jmp, tmp_path):
        jm.export_generation_csv(jmp, 2, tmp_path / "g.csv")
        assert len((tmp_path / "g.csv").read_text().splitlines()) == 1 + 3 * 6


class TestFrames:
    def test_local_frame_units(self, jmp):
        a = jm.middle_address(jmp, 40)
        vecs = jm.apex_vectors(jmp, a, 20)
        fr = jm.local_frame(jmp, 10, 4, vecs)
        assert fr.rad[1] == pytest.approx(1.0) and fr.mass[1] == pytest.approx(1.0)
        assert fr.density == pytest.approx(2 / math.exp(sum(
            math.log(jm.sigma_factor(jmp, i)) for i in range(1, 11))), rel=1e-12)

    def test_frame_profile_total_mass(self, jmp):
        fr = jm.global_frame(jmp, 4)
        lo, hi, flags, _ = jm.frame_profile(fr, np.array([3.0, 0.0]), [0.0], 1.2, False,
                                            np.array([10.0]), 1e-3)
        assert lo[0, 0] == hi[0, 0] == 1.0
