from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from profinite_lab.counterexample.space import build_X, point_stage, point_sum, section_oracle
from profinite_lab.freeab import (
    EQUAL,
    NOT_EQUAL,
    UNDETERMINED,
    DecidableOracle,
    DepthOracle,
    FormalSum,
    FreeAbError,
    brute_force_equal,
    collect_like_terms,
    malcev_combine,
    oracle_equivalence_sweep,
    precompose,
    push_forward,
    verify_section_equation,
    zero_like,
)
from profinite_lab.tower import INF, TowerMorphism, identity_morphism, nat_infinity, nat_label, singleton_tower, STAR

DEC = DecidableOracle()
terms = st.lists(st.tuples(st.integers(-3, 3), st.integers(0, 3)), max_size=5)


def nat_const(value, nat):
    pt = singleton_tower()
    return TowerMorphism(pt, nat, lambda j: {STAR: nat_label(value, j)}, name=str(value))


def test_canonical_form():
    s = FormalSum([(1, "b"), (0, "c"), (2, "a"), (-1, "b")])
    assert s.terms == ((2, "a"),)
    with pytest.raises(FreeAbError):
        FormalSum([(1.5, "a")])
    with pytest.raises(FreeAbError):
        FormalSum([(True, "a")])


def test_commutativity_witness():
    a = FormalSum([(1, "x"), (1, "y")], DEC, canonical=False)
    b = FormalSum([(1, "y"), (1, "x")], DEC, canonical=False)
    res = collect_like_terms(a, b)
    assert res.kind == EQUAL and len(res.witness.K) == 2
    assert res.witness.check(a.terms, b.terms, DEC)


def test_two_equals_one_plus_one():
    a = FormalSum([(2, "x")], DEC)
    b = FormalSum([(1, "x"), (1, "x")], DEC, canonical=False)
    res = collect_like_terms(a, b)
    assert res.kind == EQUAL and len(res.witness.K) == 1
    assert res.witness.check(a.terms, b.terms, DEC)


def test_unequal_generators():
    res = collect_like_terms(FormalSum([(1, "x")]), FormalSum([(1, "y")]))
    assert res.kind == NOT_EQUAL and res.term is not None


@given(terms, terms)
def test_agrees_with_brute_force(a, b):
    res = collect_like_terms(FormalSum(a, DEC, canonical=False), FormalSum(b, DEC, canonical=False))
    assert (res.kind == EQUAL) == brute_force_equal(a, b)
    assert res.kind in (EQUAL, NOT_EQUAL)
    if res.kind == EQUAL:
        assert res.witness.check(tuple(a), tuple(b), DEC)


def test_small_sweep():
    report = oracle_equivalence_sweep(3)
    assert report.agrees and report.pairs_checked > 0 and report.equal > 0


def test_depth_oracle_merges_equal_maps():
    nat = nat_infinity()
    oracle = DepthOracle(8)
    x, x2, y = nat_const(2, nat), nat_const(2, nat), nat_const(3, nat)
    s = FormalSum([(1, x), (1, x2), (1, y)], oracle, singleton_tower(), nat)
    assert sorted(c for c, _ in s.terms) == [1, 2]
    assert oracle.compare(x, y).kind == "Unequal"


def test_push_forward_examples():
    nat = nat_infinity()
    oracle = DepthOracle(8)
    x, y = nat_const(2, nat), nat_const(3, nat)
    s = FormalSum([(1, x), (1, y)], oracle, singleton_tower(), nat)
    same = push_forward(identity_morphism(nat), s, oracle)
    assert collect_like_terms(same, s, oracle).kind == EQUAL
    # n -> min(n, 2), continuous with inf -> 2
    collapse = TowerMorphism(nat, nat, lambda j: {v: nat_label(2 if v == INF else min(v, 2), j) for v in nat.level(j)})
    pushed = push_forward(collapse, s, oracle)
    assert len(pushed.terms) == 1 and pushed.terms[0][0] == 2
    with pytest.raises(FreeAbError):
        push_forward(identity_morphism(singleton_tower()), s, oracle)


def test_malcev_laws():
    x, z = FormalSum([(1, "x"), (2, "w")]), FormalSum([(-1, "z")])
    assert malcev_combine(x, z, z).terms == x.terms
    assert malcev_combine(x, x, z).terms == z.terms
    assert malcev_combine(x, zero_like(x), zero_like(x)).terms == x.terms


@given(terms, terms, terms)
def test_malcev_is_g_minus_u_plus_v(g, u, v):
    G, U, V = FormalSum(g), FormalSum(u), FormalSum(v)
    assert malcev_combine(G, U, V).terms == ((G - U) + V).terms


def test_group_laws():
    a, b = FormalSum([(1, "x"), (-2, "y")]), FormalSum([(3, "y")])
    assert (a + b).terms == (b + a).terms
    assert (a - a).is_zero()
    assert a.scale(3).terms == (a + a + a).terms
    assert (-a).terms == (zero_like(a) - a).terms


def test_precompose_identity():
    nat = nat_infinity()
    oracle = DepthOracle(6)
    s = FormalSum([(1, identity_morphism(nat))], oracle, nat, nat)
    again = precompose(s, identity_morphism(nat), oracle)
    assert collect_like_terms(again, s, oracle).kind == EQUAL


def _section(stage_value, a_terms, b_terms):
    X, _, _ = build_X()
    stage = point_stage(stage_value)
    oracle = section_oracle(8)
    a = point_sum(stage, a_terms, oracle)
    b = point_sum(stage, b_terms, oracle)
    return verify_section_equation({"i": a, "inf": b}, {"i": stage.i, "inf": stage.infinity}, X.pi_j, oracle, 8)


def test_section_equation_finite_stage():
    check = _section(3, [(1, 3, 1)], [(1, INF, 0)])
    assert check.kind == EQUAL


def test_section_equation_forces_infinity():
    check = _section(INF, [(1, INF, 1), (-1, INF, 0), (1, INF, 1)], [(1, INF, 0)])
    assert check.kind == UNDETERMINED
    assert "i = inf" in check.side_conditions()


def test_section_equation_wrong_coefficient():
    check = _section(3, [(2, 3, 1)], [(1, INF, 0)])
    assert check.kind == NOT_EQUAL


def test_json_shapes():
    res = collect_like_terms(FormalSum([(1, "x"), (1, "y")]), FormalSum([(1, "y"), (1, "x")]))
    data = res.to_json()
    assert data["kind"] == EQUAL
