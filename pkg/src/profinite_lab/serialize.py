"""JSON encodings of towers, morphisms and points.

Towers whose rule is registered and parameter-free up to sub-towers
(``nat_infinity``, ``constant``, ``product``, ``disjoint_union`` and
``closed_subtower`` with clopen constraints) round-trip to an equivalent
lazy tower.  Every other tower is written with its levels materialized to
the requested depth and is read back as an explicit tower.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from .finset import FinMap, FinSet, label_from_json, label_to_json, sort_labels
from .tower import (
    INF,
    ClosedConstraint,
    Point,
    Tower,
    TowerError,
    TowerMorphism,
    closed_subtower,
    constant_tower,
    disjoint_union,
    nat_infinity,
    nat_label,
    product_tower,
)

REGISTERED_RULES = ("nat_infinity", "product", "pullback", "closed_subtower", "slice_product", "disjoint_union", "constant")


def tower_ref(t: Optional[Tower]) -> Optional[dict]:
    if t is None:
        return None
    return {"name": t.name, "rule": t.rule[0] if t.rule else None}


def _materialized(t: Tower, depth: int) -> dict:
    return {
        "levels": [t.level(n).to_json()["elements"] for n in range(depth + 1)],
        "transitions": [
            [[label_to_json(x), label_to_json(y)] for x, y in t.transition(n).items()] for n in range(depth)
        ],
    }


def _rule_params(t: Tower, depth: int) -> Optional[dict]:
    """Parameters from which the rule can be rebuilt, or ``None``."""
    name, params = t.rule
    if name == "nat_infinity":
        return {}
    if name == "constant":
        return {"elements": [label_to_json(x) for x in params["elements"]]}
    if name in ("product", "disjoint_union"):
        return {"left": tower_to_json(params["left"], depth), "right": tower_to_json(params["right"], depth)}
    if name == "closed_subtower":
        c: ClosedConstraint = params["constraint"]
        if c.predicate is not None:
            return None
        return {
            "ambient": tower_to_json(c.tower, depth),
            "constraints": [[n, [label_to_json(x) for x in sort_labels(sub)]] for n, sub in c.constraints],
        }
    return None


def tower_to_json(t: Tower, depth: int) -> dict:
    """Encode ``t``; the materialized levels ``0..depth`` are always included."""
    out: Dict[str, Any] = {"name": t.name, "surjective_from": t.surjective_from}
    rule = t.rule[0] if t.rule else None
    if rule == "explicit":
        levels, transitions = t.explicit_data
        out["kind"] = "explicit"
        out["levels"] = [lv.to_json()["elements"] for lv in levels]
        out["transitions"] = [[[label_to_json(x), label_to_json(y)] for x, y in fm.items()] for fm in transitions]
        return out
    out["kind"] = "rule"
    params = _rule_params(t, depth) if rule in REGISTERED_RULES else None
    out["rule"] = {"name": rule, "params": params, "rebuildable": params is not None}
    out["depth"] = depth
    out.update(_materialized(t, depth))
    return out


def _explicit_from(data: dict) -> Tower:
    levels = [FinSet(label_from_json(x) for x in lv) for lv in data["levels"]]
    transitions = [
        FinMap(levels[i + 1], levels[i], {label_from_json(x): label_from_json(y) for x, y in pairs})
        for i, pairs in enumerate(data["transitions"])
    ]
    t = Tower.explicit(levels, transitions, surjective_from=data.get("surjective_from"), name=data.get("name", ""))
    if data.get("kind") == "rule":
        t.valid_to = data.get("depth")
    return t


def tower_from_json(data: dict) -> Tower:
    if data.get("kind") == "explicit":
        return _explicit_from(data)
    if data.get("kind") != "rule":
        raise TowerError(f"unknown tower kind {data.get('kind')!r}")
    rule = data.get("rule") or {}
    name, params = rule.get("name"), rule.get("params")
    if params is not None:
        if name == "nat_infinity":
            return nat_infinity()
        if name == "constant":
            return constant_tower([label_from_json(x) for x in params["elements"]], name=data.get("name", ""))
        if name == "product":
            return product_tower(tower_from_json(params["left"]), tower_from_json(params["right"]))[0]
        if name == "disjoint_union":
            return disjoint_union(tower_from_json(params["left"]), tower_from_json(params["right"]))[0]
        if name == "closed_subtower":
            amb = tower_from_json(params["ambient"])
            constraints = tuple((n, frozenset(label_from_json(x) for x in sub)) for n, sub in params["constraints"])
            return closed_subtower(ClosedConstraint(amb, constraints, name=data.get("name", "")))[0]
    if "levels" not in data:
        raise TowerError(f"rule {name!r} cannot be rebuilt and no levels were serialized")
    return _explicit_from(data)


def _stable_after(t: Tower) -> Optional[int]:
    """Depth after which ``t`` is constant with identity transitions, when known."""
    if t.rule and t.rule[0] == "explicit":
        return len(t.explicit_data[0]) - 1
    if t.rule and t.rule[0] == "constant":
        return 0
    return None


def morphism_to_json(m: TowerMorphism, depth: int, with_towers: bool = False) -> dict:
    out: Dict[str, Any] = {
        "name": m.name,
        "depth": depth,
        "reindex": [m.reindex(j) for j in range(depth + 1)],
        "level_maps": [[[label_to_json(x), label_to_json(y)] for x, y in m.level_map(j).items()] for j in range(depth + 1)],
    }
    if with_towers:
        src_depth = max(out["reindex"])
        out["source"] = tower_to_json(m.source, src_depth)
        out["target"] = tower_to_json(m.target, depth)
    else:
        out["source"] = tower_ref(m.source)
        out["target"] = tower_ref(m.target)
    return out


def morphism_from_json(data: dict, source: Optional[Tower] = None, target: Optional[Tower] = None) -> TowerMorphism:
    """Rebuild a morphism; beyond the serialized depth it is extended only when the target is known to be stable."""
    source = source or tower_from_json(data["source"])
    target = target or tower_from_json(data["target"])
    depth = data["depth"]
    reindex: List[int] = list(data["reindex"])
    maps = [{label_from_json(x): label_from_json(y) for x, y in pairs} for pairs in data["level_maps"]]
    stable = _stable_after(target)

    def clamp(j: int) -> int:
        if j <= depth:
            return j
        if stable is not None and stable <= depth:
            return depth
        raise TowerError("morphism evaluated beyond its serialized depth", j)

    identity = all(r == j for j, r in enumerate(reindex)) and (stable is None or stable > depth)
    m = TowerMorphism(
        source,
        target,
        lambda j: maps[clamp(j)],
        None if identity else (lambda j: reindex[clamp(j)]),
        name=data.get("name", ""),
    )
    m.valid_to = depth if stable is None or stable > depth else None
    return m


def point_to_json(p: Point, depth: int) -> dict:
    return {"tower": tower_ref(p.tower), "coords": [label_to_json(p.coords(n)) for n in range(depth + 1)]}


def point_from_json(data: dict, tower: Tower) -> Point:
    """Accepts ``{"nat": k}`` for points of N_inf or an explicit ``coords`` list.

    A coordinate list is extended past its end by repeating the last entry,
    which is correct for stable explicit towers and for the point at infinity.
    """
    if "nat" in data:
        value = data["nat"]
        value = INF if value in (INF, None) else int(value)
        return Point(tower, lambda n: nat_label(value, n), name=str(value))
    coords = [label_from_json(x) for x in data["coords"]]
    if not coords:
        raise TowerError("a point needs at least one coordinate")
    return Point(tower, lambda n: coords[min(n, len(coords) - 1)], name=data.get("name", "pt"))
