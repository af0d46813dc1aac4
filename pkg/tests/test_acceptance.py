"""One test per acceptance criterion, each run at the default configuration."""

import pytest

from conftest import default_suite


def verdict(number, title, records, runtime):
    """Print a one-line pass/fail verdict and return whether all ``records`` passed."""
    ok = bool(records) and all(r.status == "pass" for r in records)
    detail = "; ".join(f"{r.tag} {r.measured}" for r in records if r.status != "pass")
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({runtime:.1f}s) {detail}")
    return ok


def hard(res, pred=lambda tag: True):
    return [r for r in res.records if r.hard and pred(r.tag)]


def test_criterion_1_graph_properties_exact():
    res = default_suite("p-props")
    recs = hard(res)
    assert {r.tag.split("/")[0] for r in recs} == {"M3N2", "M3N3", "M4N2"}
    assert verdict(1, "graph endpoint, slope and counting properties", recs, res.runtime)


@pytest.mark.slow
def test_criterion_2_energy_trend_and_direction_uniformity():
    res = default_suite("en-energy")
    recs = hard(res)
    tags = {r.tag for r in recs}
    assert {"energy-increases-with-N", "energy-ratio-last-first"} <= tags
    assert {f"N{n}/direction-uniformity" for n in (2, 3, 4, 5)} <= tags
    assert verdict(2, "energy grows with N, ratio >= 2, max/min over directions <= 3", recs,
                   res.runtime)


def test_criterion_3_replacement_displacements():
    res = default_suite("gamma-maps")
    recs = hard(res)
    assert any(r.tag.startswith("replacement-") for r in recs)
    assert any(r.tag.startswith("composition-") for r in recs)
    assert verdict(3, "sampled sup displacements within 2r_k/M and 6r_(k+1)/M", recs,
                   res.runtime)


@pytest.mark.slow
def test_criterion_4_stability_constants():
    adr, bplg = default_suite("adr"), default_suite("bplg")
    recs = hard(adr) + hard(bplg)
    tags = {r.tag for r in recs}
    assert {"bilipschitz_c-stable-across-N", "adr_C-stable-across-N",
            "bplg_kappa-stable-across-N"} <= tags
    for r in recs:
        assert r.measured["spread"] < 0.25 or r.status == "fail"
    assert verdict(4, "bilipschitz, regularity and big-piece constants vary < 25%", recs,
                   adr.runtime + bplg.runtime)


def test_criterion_5_cone_inclusion():
    res = default_suite("cone-lemma")
    recs = hard(res)
    assert recs[0].measured["checked"] == 100_000
    assert verdict(5, "zero cone-inclusion violations", recs, res.runtime)


def test_criterion_6_ball_tree_structure():
    res = default_suite("jm-structure")
    recs = hard(res, lambda t: "/" not in t or t.endswith("explicit-tangency"))
    audit = [r for r in res.records if r.tag == "cross-parent-overlaps"]
    assert audit and audit[0].measured["depth"] == 6
    print(f"cross-parent overlaps to generation 6: {audit[0].measured['count']}")
    assert verdict(6, "mass conservation, tangency and mass-ratio bound", recs, res.runtime)


def test_criterion_7_good_index_counts():
    res = default_suite("jm-structure")
    recs = hard(res, lambda t: t.startswith("theta"))
    assert len(recs) == 9
    assert verdict(7, "good-index counts, stable constant, block ratios in [1.5, 2.5]", recs,
                   res.runtime)


@pytest.mark.slow
def test_criterion_8_exponent_one_partial_sums_diverge():
    res = default_suite("jm-diverge")
    recs = hard(res, lambda t: t.endswith(("partial-sums-increase", "increments-comparable")))
    assert len(recs) == 6
    assert verdict(8, "partial sums increase with increments within 50%", recs, res.runtime)


@pytest.mark.slow
def test_criterion_9_exponent_two_partial_sums_bounded():
    res = default_suite("jm-bounded")
    recs = hard(res, lambda t: t in ("increments-decrease-beyond-32", "fit-log-over-square",
                                     "cone-below-ball"))
    assert len(recs) == 3
    assert verdict(9, "decreasing increments, log k / k^2 fit within x4, cone below ball", recs,
                   res.runtime)


@pytest.mark.slow
def test_criterion_10_engine_soundness():
    res = default_suite("engine")
    recs = hard(res)
    assert {"fixed-depth-matches-oracle", "deep-interval-meets-oracle",
            "polyline-clip-vs-subdivision", "quadrature-refinement-within-error"} <= {
        r.tag for r in recs}
    assert verdict(10, "certified intervals, polyline clip and quadrature refinement", recs,
                   res.runtime)
