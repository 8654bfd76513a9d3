from __future__ import annotations

import json

import pytest

from profinite_lab.serialize import (
    morphism_from_json,
    morphism_to_json,
    point_from_json,
    point_to_json,
    tower_from_json,
    tower_to_json,
)
from profinite_lab.tower import (
    INF,
    ClosedConstraint,
    Tower,
    TowerError,
    closed_subtower,
    constant_tower,
    disjoint_union,
    identity_morphism,
    morphism_eq,
    nat_infinity,
    nat_point,
    product_tower,
    pullback_tower,
)


def through_json(data):
    return json.loads(json.dumps(data))


def same_levels(a: Tower, b: Tower, depth: int) -> bool:
    return all(a.level(n) == b.level(n) for n in range(depth + 1)) and all(
        a.transition(n).mapping == b.transition(n).mapping for n in range(depth)
    )


@pytest.mark.parametrize(
    "build",
    [
        nat_infinity,
        lambda: constant_tower(["a", (1, 2)]),
        lambda: product_tower(nat_infinity(), constant_tower([0, 1]))[0],
        lambda: disjoint_union(nat_infinity(), nat_infinity())[0],
        lambda: closed_subtower(ClosedConstraint(nat_infinity(), ((2, {1, INF}),)))[0],
    ],
)
def test_rebuildable_rules(build):
    t = build()
    data = through_json(tower_to_json(t, 6))
    assert data["kind"] == "rule" and data["rule"]["rebuildable"]
    back = tower_from_json(data)
    assert same_levels(t, back, 10)


def test_explicit_round_trip():
    t = Tower.explicit([[0], [0, 1]], [{0: 0, 1: 0}], surjective_from=0, name="two")
    back = tower_from_json(through_json(tower_to_json(t, 3)))
    assert back.rule[0] == "explicit" and same_levels(t, back, 5)


def test_unregistered_rule_falls_back_to_levels():
    nat = nat_infinity()
    ident = identity_morphism(nat)
    pb, _, _ = pullback_tower(ident, ident, surjective_from=0)
    data = through_json(tower_to_json(pb, 5))
    assert not data["rule"]["rebuildable"]
    back = tower_from_json(data)
    assert same_levels(pb, back, 5) and back.valid_to == 5


def test_missing_levels_rejected():
    with pytest.raises(TowerError):
        tower_from_json({"kind": "rule", "rule": {"name": "pullback", "params": None}})
    with pytest.raises(TowerError):
        tower_from_json({"kind": "mystery"})


def test_morphism_round_trip():
    nat = nat_infinity()
    m = identity_morphism(nat)
    data = through_json(morphism_to_json(m, 6, with_towers=True))
    back = morphism_from_json(data, nat, nat)
    assert morphism_eq(back, m, 6).holds
    with pytest.raises(TowerError):
        back.level_map(9)


def test_point_round_trip():
    nat = nat_infinity()
    p = nat_point(4, nat)
    back = point_from_json(through_json(point_to_json(p, 8)), nat)
    assert [back.coords(n) for n in range(12)] == [p.coords(n) for n in range(12)]
    inf = point_from_json({"nat": "inf"}, nat)
    assert inf.coords(20) == INF
    with pytest.raises(TowerError):
        point_from_json({"coords": []}, nat)
