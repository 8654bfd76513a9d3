from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profinite_lab.finset import FinSet
from profinite_lab.tower import (
    EXACT,
    INF,
    LOWER_BOUND,
    ClosedConstraint,
    NormalizationUndecided,
    Point,
    Tower,
    TowerError,
    TowerMorphism,
    closed_subtower,
    compose_morphisms,
    constant_tower,
    countable_slice_product,
    disjoint_union,
    eventual_image,
    factor_projection,
    identity_morphism,
    morphism_eq,
    nat_infinity,
    nat_label,
    nat_point,
    normalize,
    pair_morphism,
    product_tower,
    pullback_tower,
    singleton_tower,
    surjective_to_depth,
    terminal_morphism,
    validate_tower,
)


@st.composite
def explicit_towers(draw, max_size=5, max_levels=6):
    """Explicit towers whose transitions need not be surjective; certified from the last level."""
    n_levels = draw(st.integers(1, max_levels))
    sizes = [draw(st.integers(1, max_size)) for _ in range(n_levels)]
    transitions = []
    for n in range(n_levels - 1):
        transitions.append({x: draw(st.integers(0, sizes[n] - 1)) for x in range(sizes[n + 1])})
    levels = [list(range(k)) for k in sizes]
    return Tower.explicit(levels, transitions, surjective_from=n_levels - 1)


def test_nat_infinity_levels():
    nat = nat_infinity()
    assert nat.level(0) == FinSet([INF])
    assert nat.level(2) == FinSet([0, 1, INF])
    assert nat.transition(1).mapping == {0: 0, 1: INF, INF: INF}
    report = validate_tower(nat, 10)
    assert report.surjective_from == 0
    assert all(report.surjective_levels)
    assert report.level_sizes == list(range(1, 12))


def test_nat_label():
    assert nat_label(3, 2) == INF
    assert nat_label(3, 4) == 3
    assert nat_label(INF, 7) == INF


def test_constant_singleton_valid():
    validate_tower(singleton_tower(), 20)


def test_codomain_mismatch_names_depth():
    def transition(n):
        if n == 3:
            return {x: "missing" for x in range(2)}
        return {x: x for x in range(2)}

    t = Tower(lambda n: range(2), transition)
    with pytest.raises(TowerError) as exc:
        validate_tower(t, 6)
    assert exc.value.depth == 3


def test_certificate_violation_detected():
    t = Tower(lambda n: range(2), lambda n: {0: 0, 1: 0}, surjective_from=1)
    with pytest.raises(TowerError) as exc:
        validate_tower(t, 4)
    assert exc.value.depth == 1


def test_eventual_image_constant_to_a():
    uncertified = Tower(lambda n: ["a", "b"], lambda n: {"a": "a", "b": "a"})
    image, status = eventual_image(uncertified, 0, 5)
    assert image == {"a"} and status == LOWER_BOUND
    certified = Tower(lambda n: ["a", "b"], lambda n: {"a": "a", "b": "a"}, stable_from=0)
    image, status = eventual_image(certified, 0, 1)
    assert image == {"a"} and status == EXACT
    norm = normalize(certified, 6)
    assert all(norm.level(n) == FinSet(["a"]) for n in range(7))
    with pytest.raises(NormalizationUndecided):
        normalize(uncertified, 6)


def test_eventual_image_surjective_and_empty():
    nat = nat_infinity()
    assert eventual_image(nat, 3, 3) == (nat.level(3).members, EXACT)
    empty = Tower(lambda n: [] if n >= 2 else [0], lambda n: {0: 0} if n == 0 else {})
    assert eventual_image(empty, 0, 2) == (frozenset(), EXACT)


def test_normalize_surjective_is_identity():
    nat = nat_infinity()
    assert normalize(nat, 5) is nat


@settings(max_examples=60, deadline=None)
@given(explicit_towers())
def test_normalize_idempotent_and_surjective(t):
    norm = normalize(t, 8)
    report = validate_tower(norm, 8)
    assert all(report.surjective_levels)
    again = normalize(norm, 8)
    assert all(again.level(n) == norm.level(n) for n in range(9))


def test_product_examples():
    nat = nat_infinity()
    prod, p1, p2 = product_tower(nat, nat)
    assert len(prod.level(1)) == 4
    assert set(prod.level(1)) == {(a, b) for a in (0, INF) for b in (0, INF)}
    for m in (p1, p2):
        assert m.check_naturality(8).holds
    unit, q1, _ = product_tower(nat, singleton_tower())
    assert all(len(unit.level(n)) == len(nat.level(n)) for n in range(8))
    back = pair_morphism(identity_morphism(nat), terminal_morphism(nat), unit)
    assert morphism_eq(compose_morphisms(q1, back), identity_morphism(nat), 8).holds


def test_pullback_examples():
    nat = nat_infinity()
    ident = identity_morphism(nat)
    diag, q1, q2 = pullback_tower(ident, ident, surjective_from=0)
    assert all(set(diag.level(n)) == {(x, x) for x in nat.level(n)} for n in range(8))
    union, inl, inr = disjoint_union(nat, nat)
    empty, _, _ = pullback_tower(inl, inr, surjective_from=0)
    assert all(len(empty.level(n)) == 0 for n in range(8))


def test_pullback_universal_property():
    nat = nat_infinity()
    prod, p1, p2 = product_tower(nat, nat)
    pb, q1, q2 = pullback_tower(p1, p1, surjective_from=0)
    # the pair (id, id) of prod factors uniquely through the pullback
    diag = TowerMorphism(prod, pb, lambda j: {x: (x, x) for x in prod.level(j)})
    assert diag.check_naturality(6).holds
    assert morphism_eq(compose_morphisms(q1, diag), identity_morphism(prod), 6).holds
    assert morphism_eq(compose_morphisms(q2, diag), identity_morphism(prod), 6).holds


def test_closed_subtower_examples():
    nat = nat_infinity()
    whole, _ = closed_subtower(ClosedConstraint(nat))
    assert all(whole.level(n) == nat.level(n) for n in range(6))
    # the clopen condition "image at depth 1 is inf" keeps inf and every n >= 1
    tail, _ = closed_subtower(ClosedConstraint(nat, ((1, {INF}),)))
    assert set(tail.level(3)) == {1, 2, INF}
    point, _ = closed_subtower(ClosedConstraint(nat, predicate=lambda n, x: x == INF), surjective_from=0)
    assert all(point.level(n) == FinSet([INF]) for n in range(6))
    with pytest.raises(TowerError):
        closed_subtower(ClosedConstraint(nat, ((1, {"nope"}),)))


def test_morphism_eq_examples():
    nat = nat_infinity()
    union, inl, inr = disjoint_union(nat, nat)
    assert morphism_eq(inl, inl, 10).holds
    verdict = morphism_eq(inl, inr, 10)
    assert verdict.fails and verdict.depth == 0
    with pytest.raises(TowerError):
        morphism_eq(inl, identity_morphism(nat), 3)


def test_surjective_examples():
    nat = nat_infinity()
    assert surjective_to_depth(identity_morphism(nat), 12).holds
    inf = nat_point(INF, nat).as_morphism()
    verdict = surjective_to_depth(inf, 5)
    assert verdict.fails and verdict.depth == 1 and verdict.witness["missed"] == 0


def test_points():
    nat = nat_infinity()
    assert nat_point(3, nat).check(10).holds
    bad = Point(nat, lambda n: 0)
    assert bad.check(3).fails


def test_slice_product_identity_family():
    nat = nat_infinity()
    prod, proj = countable_slice_product(nat, lambda k: (nat, identity_morphism(nat)), surjective_from=0)
    assert all(len(prod.level(n)) == len(nat.level(n)) for n in range(8))
    assert surjective_to_depth(proj, 6).holds


def test_slice_product_single_factor():
    base = singleton_tower()
    t0 = constant_tower(["a", "b", "c"])

    def family(k):
        t = t0 if k == 0 else singleton_tower()
        return t, terminal_morphism(t)

    prod, _ = countable_slice_product(base, family, surjective_from=0)
    assert all(len(prod.level(n)) == 3 for n in range(6))
    f0 = factor_projection(prod, 0)
    assert surjective_to_depth(f0, 5).holds


def test_slice_product_staged_entry():
    base = singleton_tower()
    two = constant_tower([0, 1])

    def family(k):
        t = two if k < 2 else singleton_tower()
        return t, terminal_morphism(t)

    prod, _ = countable_slice_product(base, family, surjective_from=0)
    assert [len(prod.level(n)) for n in range(5)] == [2, 4, 4, 4, 4]
