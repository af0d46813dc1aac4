import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conical.graph import (
    BudgetError,
    DyadicInterval,
    GraphParams,
    build_graph,
    f_component,
    triangle_wave,
)

PAIRS = [(3, 2), (3, 3), (4, 2)]


@pytest.fixture(scope="module", params=PAIRS, ids=lambda p: f"M{p[0]}N{p[1]}")
def gf(request):
    return build_graph(GraphParams(*request.param))


def g_by_components(t, p):
    """Independent evaluation: sum of the waves, shifted so that g(1) = 0."""
    return sum(f_component(j, t, p) - f_component(j, 1.0, p) for j in range(1, p.M + 1))


class TestWaves:
    def test_triangle_values(self):
        assert triangle_wave(0.0) == 1.0
        assert triangle_wave(2.0) == -1.0
        # -5 = 3 mod 4, |3 - 2| - 1 = 0
        assert triangle_wave(-5.0) == 0.0

    def test_first_component_at_zero(self):
        assert f_component(1, 0.0, GraphParams(3, 2)) == pytest.approx(1 / 12, rel=1e-15)

    @pytest.mark.parametrize("j", [1, 2, 3])
    def test_zero_crossing(self, j):
        p = GraphParams(3, 2)
        assert f_component(j, 1.0 / 2 ** (j * p.N), p) == 0.0

    @pytest.mark.parametrize("j", [1, 2, 3])
    def test_component_slopes(self, j):
        p = GraphParams(3, 2)
        n = 2 ** (j * p.N)
        mids = (np.arange(-n, n) + 0.5) / n
        eps = 0.25 / n
        slope = (f_component(j, mids + eps, p) - f_component(j, mids - eps, p)) / (2 * eps)
        assert np.allclose(np.abs(slope), 1 / p.M, rtol=1e-9)
        assert np.sum(slope > 0) == np.sum(slope < 0)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            GraphParams(2, 2)
        with pytest.raises(ValueError):
            GraphParams(3, 0)
        with pytest.raises(ValueError):
            f_component(4, 0.0, GraphParams(3, 2))


class TestProperties:
    def test_endpoints_vanish_exactly(self, gf):
        assert gf.check_p1()
        assert gf.g_exact(Fraction(1)) == 0 and gf.g_exact(Fraction(-1)) == 0
        assert abs(g_by_components(-1.0, gf.params)) < 1e-12

    def test_unit_slope_on_slots(self, gf):
        assert gf.check_p2()
        h = 0.25 / 2 ** gf.slot_level
        m = gf.slot_midpoints
        slope = (gf.g(m + h) - gf.g(m - h)) / (2 * h)
        assert np.allclose(slope, 1.0, rtol=1e-12)
        ind = (g_by_components(m + h, gf.params) - g_by_components(m - h, gf.params)) / (2 * h)
        assert np.allclose(ind, 1.0, rtol=1e-9)

    def test_counts(self, gf):
        M, N = gf.M, gf.N
        assert gf.check_p3()
        assert gf.n_slots == 2 ** ((M + 1) * N - M)
        for j in range(1, M + 1):
            assert len(gf.family(j)) == 2 ** (j * N - j)

    def test_families_nested(self, gf):
        for j in range(2, gf.M + 1):
            parents = set(int(q) >> gf.N for q in gf.family_signed(j))
            assert parents <= set(int(q) for q in gf.family_signed(j - 1))

    def test_lipschitz(self, gf):
        assert gf.is_one_lipschitz()
        assert np.max(np.abs(gf.numerators)) / gf.denominator <= gf.sup_norm_bound

    def test_matches_component_sum(self, gf):
        t = np.linspace(-1, 1, 1001)
        assert np.allclose(gf.g(t), g_by_components(t, gf.params), atol=1e-13)


class TestInstances:
    def test_counts_32_and_2(self):
        gf = build_graph(GraphParams(3, 2))
        assert gf.n_slots == 32
        assert len(gf.family(1)) == 2

    def test_tangent_on_slot(self):
        gf = build_graph(GraphParams(3, 2))
        t = float(gf.slot_midpoints[5])
        assert gf.tangent_direction(3, t).theta == pytest.approx(math.pi / 4)

    def test_tangent_on_first_family(self):
        gf = build_graph(GraphParams(3, 2))
        iv = gf.family(1)[0]
        t = float(iv.midpoint)
        assert gf.tangent_direction(1, t).theta == pytest.approx(math.atan(1 / 3))

    def test_tangent_at_breakpoint_raises(self):
        gf = build_graph(GraphParams(3, 2))
        with pytest.raises(ValueError):
            gf.tangent_direction(1, 0.25)

    def test_polyline_shape(self):
        gf = build_graph(GraphParams(3, 2))
        poly = gf.polyline()
        assert len(poly) == 128
        assert gf.arclength >= 2.0
        assert poly.arclength == pytest.approx(gf.arclength, rel=1e-12)

    def test_arclength_on_slot(self):
        gf = build_graph(GraphParams(3, 2))
        for iv in gf.slots[:8]:
            a, b = float(iv.left), float(iv.right)
            L = math.hypot(b - a, gf.g(b) - gf.g(a))
            assert L == pytest.approx(math.sqrt(2) * float(iv.length), rel=1e-12)

    def test_budget(self):
        with pytest.raises(BudgetError):
            build_graph(GraphParams(3, 5), budget=1000)

    def test_export(self, tmp_path):
        gf = build_graph(GraphParams(3, 2))
        gf.export_csv(tmp_path / "g.csv")
        rows = (tmp_path / "g.csv").read_text().splitlines()
        assert rows[0] == "t,g" and len(rows) == 2 * gf.scale + 2


@given(st.integers(1, 6), st.integers(-40, 40))
def test_dyadic_interval_round_trip(level, q):
    q = max(-(1 << (level - 1)) if level else 0, min(q, (1 << (level - 1)) - 1))
    iv = DyadicInterval.from_signed(level, q)
    assert iv.signed == q
    assert iv.length == Fraction(1, 2 ** level)
    assert iv.contains(float(iv.midpoint))


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_g_one_lipschitz_pointwise(s, t):
    gf = build_graph(GraphParams(3, 2))
    assert abs(gf.g(s) - gf.g(t)) <= abs(s - t) + 1e-15


@given(st.integers(-2 ** 20, 2 ** 20))
def test_exact_and_float_agree(n):
    gf = build_graph(GraphParams(3, 2))
    t = Fraction(n, 2 ** 20)
    assert float(gf.g_exact(t)) == pytest.approx(gf.g(float(t)), abs=1e-15)
