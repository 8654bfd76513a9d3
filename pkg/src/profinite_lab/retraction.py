"""Retractions onto pointed closed subspaces.

Given an embedding ``iota : S -> T`` and a point of ``S``, a retraction
``r : T -> S`` is built one level at a time.  Each step is a lifting problem
against a surjection of finite sets ``A_{i+1} -> A_i``; it is solved fibrewise,
by halving each fibre and separating the two halves with a clopen subset of
``T``.  Clopen separation is a search over levels (compactness guarantees
success at *some* level, with no computable bound), so every entry point takes
a ``max_depth``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .finset import FinMap, FinSet, Label, halve, sort_labels
from .tower import (
    STAR,
    ClosedConstraint,
    Point,
    Tower,
    TowerMorphism,
    closed_subtower,
    compose_morphisms,
    constant_tower,
    eventual_image,
    exact_probe_depth,
    inclusion_morphism,
    morphism_eq,
    normalize,
    truncated_normalize,
)
from .verdict import Verdict


class RetractionError(ValueError):
    pass


class DepthExhausted(RetractionError):
    def __init__(self, max_depth: int, traces: Tuple[frozenset, frozenset]):
        super().__init__(f"no separating level found up to depth {max_depth}")
        self.max_depth = max_depth
        self.traces = traces


class NotDisjoint(RetractionError):
    def __init__(self, point: Point, depth: int):
        super().__init__("the two closed sets share a point")
        self.point = point
        self.depth = depth


@dataclass(frozen=True)
class SeparationResult:
    """``C`` is the preimage of ``clopen`` under the projection to ``level``."""

    level: int
    clopen: frozenset

    def to_json(self) -> dict:
        from .finset import label_to_json

        return {"level": self.level, "clopen": [label_to_json(x) for x in sort_labels(self.clopen)]}


class ConstraintTraces:
    """Traces of a :class:`ClosedConstraint` at each level, read off its subtower."""

    def __init__(self, c: ClosedConstraint, probe_depth: int):
        self.constraint = c
        self.tower = c.tower
        self.sub, _ = closed_subtower(c)
        self.probe_depth = probe_depth

    def trace(self, n: int) -> frozenset:
        return eventual_image(self.sub, n, max(n, self.probe_depth))[0]


def _as_traces(x, probe_depth: int):
    if isinstance(x, ClosedConstraint):
        return ConstraintTraces(x, probe_depth)
    return x


def separate_closed(a, b, max_depth: int, start: int = 0) -> SeparationResult:
    """Find a level ``n <= max_depth`` and a clopen containing ``a`` and missing ``b``.

    ``a`` and ``b`` are :class:`ClosedConstraint` values on one tower (or any
    object with ``tower`` and ``trace(n)``, a superset of the image at level
    ``n``).  Disjoint supersets certify the separation exactly.
    """
    ta_obj, tb_obj = _as_traces(a, max_depth), _as_traces(b, max_depth)
    if ta_obj.tower is not tb_obj.tower:
        raise RetractionError("closed sets live in different towers")
    ta = tb = frozenset()
    for n in range(start, max_depth + 1):
        ta, tb = ta_obj.trace(n), tb_obj.trace(n)
        if ta.isdisjoint(tb):
            return SeparationResult(n, ta)
    common = _common_point(ta_obj, tb_obj, max_depth)
    if common is not None:
        raise NotDisjoint(common, max_depth)
    raise DepthExhausted(max_depth, (ta, tb))


def _common_point(a, b, depth: int) -> Optional[Point]:
    if not isinstance(a, ConstraintTraces) or not isinstance(b, ConstraintTraces):
        return None
    ca, cb = a.constraint, b.constraint
    if ca is cb or (ca.constraints == cb.constraints and ca.predicate is cb.predicate):
        sub = a.sub
    else:
        if ca.predicate is not None and cb.predicate is not None:
            return None
        clopen, other = (ca, b) if ca.predicate is None else (cb, a)
        if other.sub.surjective_from is None:
            return None
        pa, pb = ca.predicate, cb.predicate
        pred = pa or pb
        merged = ClosedConstraint(ca.tower, ca.constraints + cb.constraints, pred)
        cert = max(clopen.max_constraint_depth, other.sub.surjective_from, 0)
        sub, _ = closed_subtower(merged, surjective_from=cert)
    if exact_probe_depth(sub, 0) is None:
        return None
    norm = normalize(sub, depth)
    if not len(norm.level(0)):
        return None
    return canonical_point(norm)


def canonical_point(norm: Tower) -> Point:
    """The point of a surjective tower choosing the least lift at every level."""
    coords: List[Label] = []

    def coords_fn(n: int) -> Label:
        while len(coords) <= n:
            k = len(coords)
            if k == 0:
                coords.append(norm.level(0).elements[0])
            else:
                step = norm.transition(k - 1).mapping
                coords.append(next(x for x in norm.level(k) if step[x] == coords[k - 1]))
        return coords[n]

    return Point(norm, coords_fn, name="canonical")


# --------------------------------------------------------------------------
# diagonal fillers


def _constant_set(t: Tower) -> FinSet:
    a = getattr(t, "constant_set", None)
    if a is None:
        raise RetractionError("expected a constant (finite discrete) tower")
    return a


def morphism_to_finite(source: Tower, a: FinSet, level: int, mapping: Dict[Label, Label], name: str = "") -> TowerMorphism:
    """The map ``source -> a`` factoring through ``source.level(level)``."""
    target = constant_tower(a)
    fm = FinMap(source.level(level), a, mapping)
    m = TowerMorphism(source, target, lambda j: fm, lambda j: level, name=name)
    m.decision = (level, fm)
    return m


def _decision(m: TowerMorphism) -> Tuple[int, Dict[Label, Label]]:
    return m.reindex(0), m.level_map(0).mapping


class _LabelTraces:
    """For ``x`` in a finite set, traces in ``T`` of ``iota({s : top(s) = x})``."""

    def __init__(self, iota: TowerMorphism, top_level: int, top_map: Dict[Label, Label], probe_depth: int):
        self.iota = iota
        self.top_level = top_level
        self.top_map = top_map
        self.probe_depth = probe_depth
        self._cache: Dict[int, Dict[Label, frozenset]] = {}

    def by_label(self, j: int) -> Dict[Label, frozenset]:
        found = self._cache.get(j)
        if found is not None:
            return found
        s = self.iota.source
        n = self.iota.reindex(j)
        deep = max(n, self.top_level)
        probe = max(deep, self.probe_depth)
        # elements of S at the deep level that survive to the probe depth
        alive = frozenset(s.projection(probe, deep).values())
        to_top = s.projection(deep, self.top_level)
        to_n = s.projection(deep, n)
        imap = self.iota.level_map(j).mapping
        out: Dict[Label, set] = {}
        for a in alive:
            out.setdefault(self.top_map[to_top[a]], set()).add(imap[to_n[a]])
        result = {x: frozenset(v) for x, v in out.items()}
        self._cache[j] = result
        return result


class _SubsetImage:
    def __init__(self, index: _LabelTraces, labels: Sequence[Label]):
        self.index = index
        self.labels = tuple(labels)
        self.tower = index.iota.target

    def trace(self, j: int) -> frozenset:
        table = self.index.by_label(j)
        out = frozenset()
        for x in self.labels:
            out |= table.get(x, frozenset())
        return out


def diagonal_filler(
    top: TowerMorphism,
    iota: TowerMorphism,
    right: FinMap,
    bottom: TowerMorphism,
    max_depth: int,
) -> TowerMorphism:
    """Solve the lifting problem ``S -> A1``, ``iota : S -> T``, ``A1 ->> A0``, ``T -> A0``.

    ``top`` and ``bottom`` map into constant towers on ``A1`` and ``A0``.
    Works separately over each element of ``A0`` (canonical order); within a
    fibre, the ordered labels are halved and the halves separated by
    :func:`separate_closed`.  The result factors through one level of ``T``.
    """
    a1 = _constant_set(top.target)
    a0 = _constant_set(bottom.target)
    if right.dom != a1 or right.cod != a0:
        raise RetractionError("right-hand map does not match the corners of the square")
    if iota.target is not bottom.source or iota.source is not top.source:
        raise RetractionError("the square's morphisms do not share corners")
    if not right.is_surjective():
        raise RetractionError("right-hand map is not surjective")
    s = iota.source
    top_level, top_map = _decision(top)
    bot_level, bot_map = _decision(bottom)

    # the square must commute on the part of S that survives to max_depth
    check_j = bot_level
    n_iota = iota.reindex(check_j)
    deep = max(top_level, n_iota)
    alive = frozenset(s.projection(max(deep, max_depth), deep).values())
    imap = iota.level_map(check_j).mapping
    for a in alive:
        u = imap[s.down(a, deep, n_iota)]
        lhs = right(top_map[s.down(a, deep, top_level)])
        rhs = bot_map[bottom.source.down(u, check_j, bot_level)]
        if lhs != rhs:
            raise RetractionError(f"the square does not commute at element {a!r}")

    index = _LabelTraces(iota, top_level, top_map, max_depth)
    _, fibres = _fibres(right)
    trees: Dict[Label, object] = {}
    level = bot_level
    for c in a0:
        tree, deepest = _split_tree(sort_labels(fibres[c]), index, max_depth)
        trees[c] = tree
        level = max(level, deepest)

    t = bottom.source
    proj = t.projection(level, bot_level)
    mapping = {}
    for u in t.level(level):
        node = trees[bot_map[proj[u]]]
        while not isinstance(node, _Leaf):
            sep_level, clopen, left, right_node = node
            node = left if t.down(u, level, sep_level) in clopen else right_node
        mapping[u] = node.label
    filler = morphism_to_finite(t, a1, level, mapping, name="filler")
    filler.trees = trees
    return filler


@dataclass(frozen=True)
class _Leaf:
    label: Label


def _fibres(f: FinMap):
    from .finset import image_and_fibres

    return image_and_fibres(f)


def _split_tree(labels: Tuple[Label, ...], index: _LabelTraces, max_depth: int):
    if len(labels) == 1:
        return _Leaf(labels[0]), 0
    first, second = halve(labels)
    sep = separate_closed(_SubsetImage(index, first), _SubsetImage(index, second), max_depth)
    left, dl = _split_tree(first, index, max_depth)
    right, dr = _split_tree(second, index, max_depth)
    return (sep.level, sep.clopen, left, right), max(sep.level, dl, dr)


# --------------------------------------------------------------------------
# retraction synthesis


def synthesize_retraction(
    iota: TowerMorphism,
    pt: Optional[Point],
    max_depth: int,
    depth: Optional[int] = None,
) -> TowerMorphism:
    """A retraction ``r : T -> S`` of the embedding ``iota : S -> T``.

    ``S`` is first replaced by its eventual images (exactly when it carries a
    certificate, otherwise truncated at ``max_depth``), which makes every
    transition surjective.  Level ``i`` of ``r`` is the diagonal filler of the
    square over ``A_i -> A_{i-1}``, starting from the one-point set below
    ``A_0``.  Levels ``0..depth`` are built eagerly; deeper ones on demand.
    """
    s, t = iota.source, iota.target
    if pt is None:
        raise RetractionError("S has no point; no retraction exists")
    if pt.tower is not s:
        raise RetractionError("the point does not lie on the source of the embedding")
    if depth is None:
        depth = max_depth
    check = pt.check(min(depth, max_depth))
    if not check.holds:
        raise RetractionError(f"the given point is not a point of S: {check.detail}")

    certified = exact_probe_depth(s, 0) is not None
    norm = normalize(s, depth) if certified else truncated_normalize(s, max_depth)
    iota_n = compose_morphisms(iota, inclusion_morphism(norm, s)) if norm is not s else iota
    one = FinSet([STAR])
    fillers: List[TowerMorphism] = []

    def filler(i: int) -> TowerMorphism:
        while len(fillers) <= i:
            k = len(fillers)
            a_k = norm.level(k)
            top = TowerMorphism(norm, constant_tower(a_k), lambda j, k=k: FinMap.identity(norm.level(k)), lambda j, k=k: k, name=f"top{k}")
            if k == 0:
                right = FinMap.constant(a_k, one, STAR)
                bottom = morphism_to_finite(t, one, 0, {u: STAR for u in t.level(0)})
            else:
                right = FinMap(a_k, norm.level(k - 1), norm.transition(k - 1).mapping, check=False)
                bottom = fillers[k - 1]
            fillers.append(diagonal_filler(top, iota_n, right, bottom, max_depth))
        return fillers[i]

    def level_map(i: int) -> FinMap:
        lvl, fm = filler(i).decision
        return FinMap(t.level(lvl), s.level(i), fm.mapping, check=False)

    r = TowerMorphism(t, s, level_map, lambda i: filler(i).reindex(0), name="r")
    for i in range(depth + 1):
        r.level_map(i)
    r.fillers = fillers
    r.valid_to = None if certified else max_depth
    return r


def retraction_check(r: TowerMorphism, iota: TowerMorphism, depth: int) -> Verdict:
    """``r . iota = id_S`` to the given depth.

    Maps out of ``S`` are compared on the points of ``S``: when ``S`` carries
    a certificate the comparison runs over its eventual images, so elements
    that die in the limit are ignored.
    """
    from .tower import identity_morphism

    s = iota.source
    if exact_probe_depth(s, 0) is None:
        return morphism_eq(compose_morphisms(r, iota), identity_morphism(s), depth)
    norm = normalize(s, depth)
    if norm is s:
        return morphism_eq(compose_morphisms(r, iota), identity_morphism(s), depth)
    incl = inclusion_morphism(norm, s)
    return morphism_eq(compose_morphisms(compose_morphisms(r, iota), incl), incl, depth)


# --------------------------------------------------------------------------
# randomized corpus


@dataclass
class RetractionCase:
    iota: TowerMorphism
    point: Point
    depth: int
    seed: Optional[int] = None


def random_retraction_case(rng, max_level: int = 8, max_depth: int = 10, seed: Optional[int] = None) -> RetractionCase:
    """A random explicit tower ``T`` with surjective transitions and a closed ``S`` inside it.

    ``S`` is the downward closure of a nonempty subset of the last level of
    ``T`` plus, below the last level, some elements with no preimage in ``S``
    (so the transitions of ``S`` need not be surjective).
    """
    from .tower import Point, Tower

    depth = rng.randint(1, max_depth)
    last = rng.randint(0, depth)
    sizes = [rng.randint(1, max_level)]
    for _ in range(last):
        sizes.append(rng.randint(sizes[-1], max_level))
    levels = [list(range(n)) for n in sizes]
    transitions = []
    for n in range(last):
        lower, upper = levels[n], levels[n + 1]
        images = list(lower) + [rng.choice(lower) for _ in range(len(upper) - len(lower))]
        rng.shuffle(images)
        transitions.append(dict(zip(upper, images)))
    T = Tower.explicit(levels, transitions, surjective_from=0, name="T")
    top = rng.sample(levels[last], rng.randint(1, len(levels[last])))
    s_levels: List[set] = [set() for _ in range(last + 1)]
    s_levels[last] = set(top)
    for n in range(last - 1, -1, -1):
        s_levels[n] = {transitions[n][x] for x in s_levels[n + 1]}
        s_levels[n] |= {x for x in levels[n] if rng.random() < 0.25}
    s_trans = [{x: transitions[n][x] for x in s_levels[n + 1]} for n in range(last)]
    S = Tower.explicit([sorted(lv) for lv in s_levels], s_trans, surjective_from=last, name="S")
    iota = TowerMorphism(S, T, lambda j: {x: x for x in S.level(j)}, name="iota")
    u = rng.choice(sorted(top))
    coords = [u]
    for n in range(last - 1, -1, -1):
        coords.append(transitions[n][coords[-1]])
    coords.reverse()
    point = Point(S, lambda n: coords[min(n, last)], name="pt")
    return RetractionCase(iota, point, depth, seed)


def retraction_corpus(seed: int, count: int = 200, max_level: int = 8, max_depth: int = 10) -> List[RetractionCase]:
    import random

    rng = random.Random(seed)
    return [random_retraction_case(rng, max_level, max_depth, seed) for _ in range(count)]
