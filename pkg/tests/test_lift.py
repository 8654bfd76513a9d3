from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profinite_lab.counterexample import lift
from profinite_lab.freeab import EQUAL, DepthOracle, FormalSum, collect_like_terms, precompose
from profinite_lab.tower import INF, TowerError, TowerMorphism, identity_morphism, surjective_to_depth

DEPTH = 8


def iso_instance():
    """``T = S x N_inf`` with one letter: ``p`` is an isomorphism."""
    return lift.LiftInstance(1, (0,), 1, ((0,),), (0,), (((0,),),), ((),))


def doubled_instance():
    """Two points over ``S x {0}``, one point everywhere else."""
    return lift.LiftInstance(1, (0, 0), 1, ((0,),), (0,), (((0, 1),),), ((),))


def test_instance_tower_is_valid():
    prob = lift.build_problem(lift.concrete_instance())
    assert surjective_to_depth(prob.p, DEPTH).holds
    # T = N_inf + {pt}: one element over each finite label, two over inf
    level = prob.T.level(4)
    assert len(level) == len(prob.base.level(4)) + 1


def test_section_cover_of_iso():
    prob = lift.build_problem(iso_instance())
    sc = lift.section_cover(prob.S, prob.p, DEPTH)
    assert all(len(sc.S_tilde.level(n)) == len(prob.S.level(n)) for n in range(DEPTH + 1))
    assert lift.check_sections(sc, prob.p, DEPTH).holds


def test_section_cover_doubles():
    prob = lift.build_problem(doubled_instance())
    sc = lift.section_cover(prob.S, prob.p, DEPTH)
    assert [len(sc.S_tilde.level(n)) for n in range(4)] == [2, 2, 2, 2]
    assert surjective_to_depth(sc.cover, DEPTH).holds
    assert lift.check_sections(sc, prob.p, DEPTH).holds
    # the section over S x {0} picks the tautological coordinate
    t0 = sc.section(0)
    assert {t0.apply(1, x)[1] for x in sc.S_tilde.level(1)} == {0, 1}


def test_section_cover_needs_surjection():
    prob = lift.build_problem(iso_instance())
    inf_only = TowerMorphism(prob.T, prob.base, lambda j: {x: (x[0][0], INF) for x in prob.T.level(j)})
    with pytest.raises(TowerError):
        lift.section_cover(prob.S, inf_only, 4)


def test_shrink_removes_extra_copy():
    prob = lift.build_problem(doubled_instance())
    sc = lift.section_cover(prob.S, prob.p, DEPTH)
    bc = lift.base_change(prob.p, sc, 2 * DEPTH)
    shrunk, p_new = lift.shrink_to_iso(bc.p, bc.section, DEPTH, surjective_from=1)
    assert len(bc.T.level(3)) > len(shrunk.level(3))
    assert lift.bijective_over_finite(p_new, DEPTH).holds
    assert surjective_to_depth(p_new, DEPTH).holds


def test_shrink_of_iso_keeps_everything():
    prob = lift.build_problem(iso_instance())
    sc = lift.section_cover(prob.S, prob.p, DEPTH)
    bc = lift.base_change(prob.p, sc, 2 * DEPTH)
    shrunk, _ = lift.shrink_to_iso(bc.p, bc.section, DEPTH, surjective_from=1)
    assert all(len(shrunk.level(n)) == len(bc.T.level(n)) for n in range(DEPTH + 1))


def test_shrink_rejects_non_section():
    prob = lift.build_problem(iso_instance())
    sc = lift.section_cover(prob.S, prob.p, DEPTH)
    bc = lift.base_change(prob.p, sc, 2 * DEPTH)
    with pytest.raises(lift.SectionError):
        lift.shrink_to_iso(bc.p, lambda n: bc.section(n + 1), 4, surjective_from=1)


def test_alpha_for_iso_and_two_point_fibre():
    for inst in (iso_instance(), lift.concrete_instance()):
        res = lift.run_pipeline(inst, 6)
        assert lift.alpha_descent_check(res.p_tilde, 6, surjective_from=inst.horizon).holds


def test_assemble_with_identities_returns_g():
    prob = lift.build_problem(iso_instance())
    oracle = DepthOracle(DEPTH)
    ident = identity_morphism(prob.T)
    g = FormalSum.generator(prob.g, oracle)
    g_tilde, report = lift.assemble_lift(g, ident, ident, ident, ident, depth=DEPTH, oracle=oracle)
    assert collect_like_terms(g_tilde, g, oracle).kind == EQUAL
    assert report.kinds == {"section": EQUAL}


def test_concrete_scenario():
    res = lift.run_pipeline(lift.concrete_instance(), DEPTH)
    assert res.report.all_equal
    assert set(res.report.kinds) == {"section", "pushed", "descent"}
    assert all(v.holds for v in res.checks.values())
    # g~ agrees with g on T_inf
    oracle = DepthOracle(DEPTH)
    g_tilde = FormalSum(res.report.g_tilde.terms, oracle, res.T_tilde, res.problem.W)
    g = FormalSum.generator(res.g, oracle)
    on_inf = collect_like_terms(precompose(g_tilde, res.iota, oracle), precompose(g, res.iota, oracle), oracle)
    assert on_inf.kind == EQUAL
    assert res.report.to_json()["verdicts"]["descent"] == EQUAL


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6))
def test_random_instances(seed):
    inst = lift.random_lift_instance(random.Random(seed), seed)
    res = lift.run_pipeline(inst, 6)
    assert res.report.all_equal, res.report.kinds
    assert all(v.holds for v in res.checks.values())
