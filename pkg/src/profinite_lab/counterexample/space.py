"""The space X over N_inf x N_inf, its fibres, and the section dichotomy.

``X`` is the closed subset of ``N_inf x N_inf x {0,1}`` of triples ``(i, j, e)``
such that ``e = 1`` exactly when ``i = j`` whenever ``i`` or ``j`` is finite.
Over ``(inf, inf)`` both values of ``e`` survive; every other fibre of the
projection to ``N_inf x N_inf`` is a single point.

Elements of ``Z[X_i]`` at a stage ``(I, i)`` are formal sums of maps
``x : I -> X`` with ``pi1 . x = i``; they are pushed to ``Z[N_inf]`` along the
second coordinate ``j``.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from ..finset import Label
from ..freeab import (
    EQUAL,
    NOT_EQUAL,
    UNDETERMINED,
    FibreOracle,
    FormalSum,
    PushedTerm,
    as_map,
    collect_like_terms,
    push_forward,
    verify_section_equation,
)
from ..tower import (
    INF,
    STAR,
    Point,
    Tower,
    TowerMorphism,
    compose_morphisms,
    fibre_subtower,
    identity_morphism,
    morphism_eq,
    morphism_from_labels,
    nat_infinity,
    nat_label,
    points_to_depth,
    product_tower,
    singleton_tower,
    subtower,
    validate_tower,
)
from ..verdict import Verdict

IS_INFINITY = "IsInfinity"
NOT_INFINITY = "NotInfinity"
INCONSISTENT = "Inconsistent"

NatValue = Union[int, str]


def _allowed(i: Label, j: Label, e: int) -> bool:
    if i == INF and j == INF:
        return True
    return (e == 1) == (i == j)


@functools.lru_cache(maxsize=None)
def build_X() -> Tuple[Tower, TowerMorphism, TowerMorphism]:
    """``(X, pi : X -> N_inf x N_inf, pi1 : X -> N_inf)``; cached so every caller shares the towers.

    The surjectivity certificate is attached because every transition is a
    componentwise collapse of ``n`` to ``inf`` that keeps ``e``; the tests
    re-check it levelwise.
    """
    nat = nat_infinity()
    base, pr1, pr2 = product_tower(nat, nat)

    def level_fn(n: int) -> List[Label]:
        labels = nat.level(n).elements
        return [(i, j, e) for i in labels for j in labels for e in (0, 1) if _allowed(i, j, e)]

    def transition_fn(n: int) -> Dict[Label, Label]:
        step = nat.transition(n).mapping
        return {(i, j, e): (step[i], step[j], e) for i, j, e in X.level(n + 1)}

    X = Tower(level_fn, transition_fn, surjective_from=0, rule=("space_X", {}), name="X")
    X.nat = nat
    X.base = base
    pi = TowerMorphism(X, base, lambda j: {x: (x[0], x[1]) for x in X.level(j)}, name="pi")
    pi1 = TowerMorphism(X, nat, lambda j: {x: x[0] for x in X.level(j)}, name="pi1")
    pi_j = TowerMorphism(X, nat, lambda j: {x: x[1] for x in X.level(j)}, name="pi2")
    X.pi_j = pi_j
    X.pr = (pr1, pr2)
    return X, pi, pi1


def x_level_size(n: int) -> int:
    return (n + 1) ** 2 + 1


def validate_X(depth: int) -> Verdict:
    """Levelwise check of the constraint, the level sizes and surjectivity of the transitions."""
    X, _, _ = build_X()
    report = validate_tower(X, depth)
    for n, size in enumerate(report.level_sizes):
        if size != x_level_size(n):
            return Verdict.failure(n, {"size": size}, "unexpected level size")
        for i, j, e in X.level(n):
            if not _allowed(i, j, e):
                return Verdict.failure(n, {"element": (i, j, e)}, "element violates the constraint")
    for n in range(depth):
        if not all(report.surjective_levels[n:n + 1]):
            return Verdict.failure(n, None, "transition is not surjective")
    return Verdict.ok(depth, level_sizes=report.level_sizes[-1:])


def base_point(i: NatValue, j: NatValue) -> Point:
    X, _, _ = build_X()
    return Point(X.base, lambda n: (nat_label(i, n), nat_label(j, n)), name=f"({i},{j})")


def fibre_points(i: NatValue, j: NatValue, depth: int) -> List[Tuple[Label, ...]]:
    """Points of the fibre of ``pi`` over ``(i, j)``, as coordinate tuples to ``depth``."""
    _, pi, _ = build_X()
    fibre, _ = fibre_subtower(pi, base_point(i, j))
    return points_to_depth(fibre, depth)


def fibre_over_infinity(depth: int) -> List[Tuple[Label, ...]]:
    return fibre_points(INF, INF, depth)


def iso_away_check(bound: int, depth: int) -> Verdict:
    """Every fibre over ``(i, j) != (inf, inf)`` with ``i, j`` in ``range(bound)`` or ``inf`` is a singleton.

    Each fibre is probed at ``depth`` or one level past its finite coordinates,
    whichever is deeper; the deepest probe is reported.
    """
    values: List[NatValue] = list(range(bound)) + [INF]
    checked = 0
    deepest = depth
    for i in values:
        for j in values:
            if i == INF and j == INF:
                continue
            # a natural k only has its own label from level k + 1 on
            probe = max([depth] + [v + 1 for v in (i, j) if v != INF])
            deepest = max(deepest, probe)
            pts = fibre_points(i, j, probe)
            checked += 1
            if len(pts) != 1:
                return Verdict.failure(probe, {"base": (i, j), "points": len(pts)}, "fibre is not a singleton")
    return Verdict.ok(depth, fibres=checked, deepest_probe=deepest)


# --------------------------------------------------------------------------
# stages


@dataclass(eq=False)
class Stage:
    """A map ``i : I -> N_inf`` at which sections are evaluated.

    ``locus`` is the inclusion of the part of ``I`` where ``i = inf``, given
    exactly (levels that die out in the limit are not kept), and ``horizon``
    is the least depth at which finite values of ``i`` are visible.
    """

    name: str
    tower: Tower
    i: TowerMorphism
    locus: TowerMorphism
    value: Optional[NatValue] = None  # set for one-point stages
    horizon: int = 0

    @property
    def infinity(self) -> TowerMorphism:
        """The constant map ``I -> N_inf`` at ``inf``."""
        if not hasattr(self, "_infinity"):
            t = self.tower
            self._infinity = morphism_from_labels(t, self.i.target, lambda j, x: INF, name="inf")
        return self._infinity


def point_stage(value: NatValue) -> Stage:
    X, _, _ = build_X()
    pt = singleton_tower()
    i = TowerMorphism(pt, X.nat, lambda j: {STAR: nat_label(value, j)}, name=f"i={value}")
    if value == INF:
        locus = identity_morphism(pt)
        horizon = 0
    else:
        _, locus = subtower(pt, lambda n: [], surjective_from=0, name="empty")
        horizon = int(value) + 1
    return Stage(f"i={value}", pt, i, locus, value, horizon)


def generic_stage() -> Stage:
    X, _, _ = build_X()
    nat = X.nat
    _, locus = subtower(nat, lambda n: [INF], surjective_from=0, name="{inf}")
    return Stage("generic", nat, identity_morphism(nat), locus)


def point_term(stage: Stage, j: NatValue, e: int) -> TowerMorphism:
    """The map ``* -> X`` picking ``(i, j, e)`` at a one-point stage."""
    if stage.value is None:
        raise ValueError("point_term needs a one-point stage")
    X, _, _ = build_X()
    i = stage.value
    if not (i == INF and j == INF) and (e == 1) != (i == j):
        raise ValueError(f"({i}, {j}, {e}) is not a point of X")
    return TowerMorphism(stage.tower, X, lambda n: {STAR: (nat_label(i, n), nat_label(j, n), e)}, name=f"({i},{j},{e})")


def term_is_valid(stage: Stage, x: TowerMorphism, depth: int) -> Verdict:
    """``x`` is a map of towers into X lying over ``i``."""
    X, _, pi1 = build_X()
    for n in range(depth + 1):
        for label in x.level_map(n).mapping.values():
            if label not in X.level(n).members:
                return Verdict.failure(n, {"label": label}, "term leaves X")
    nat = x.check_naturality(depth)
    if not nat.holds:
        return nat
    over = morphism_eq(compose_morphisms(pi1, x), stage.i, depth)
    if not over.holds:
        return Verdict.failure(over.depth, over.witness, "term does not lie over i")
    return Verdict.ok(depth)


def canonical_section(stage: Stage) -> Tuple[TowerMorphism, TowerMorphism]:
    """``x = (i, 1)`` and ``y = (inf, 0)``; a section exactly when ``i`` is finite."""
    return point_term(stage, stage.value, 1), point_term(stage, INF, 0)


def infinity_explain(x: Any, y: Any, witness: Any) -> str:
    return "i = inf"


def section_oracle(depth: int) -> FibreOracle:
    return FibreOracle(depth, infinity_explain)


# --------------------------------------------------------------------------
# the dichotomy


@dataclass
class DichotomyVerdict:
    kind: str
    case: str
    evidence: Dict[str, Any] = field(default_factory=dict)
    inputs: Any = field(default=None, repr=False, compare=False)

    def replay(self) -> "DichotomyVerdict":
        stage, a, b, oracle, depth = self.inputs
        return section_dichotomy(stage, a, b, oracle, depth)

    def to_json(self) -> dict:
        from ..verdict import _jsonable
        from ..finset import label_to_json

        return {"kind": self.kind, "case": self.case, "evidence": _jsonable(self.evidence, label_to_json)}


def _second_components(stage: Stage, x: TowerMorphism, depth: int) -> frozenset:
    return frozenset(label[2] for label in x.level_map(depth).mapping.values())


def section_dichotomy(stage: Stage, a: FormalSum, b: FormalSum, oracle: Optional[FibreOracle] = None, depth: int = 6) -> DichotomyVerdict:
    """Decide ``i = inf`` or ``i != inf`` from a candidate section ``a = s([i])``, ``b = s([inf])``.

    Raises ``ValueError`` when the stage straddles both outcomes (the
    second component of the reduced term is not constant on the stage).
    """
    X, _, _ = build_X()
    depth = max(depth, stage.horizon)
    oracle = oracle or section_oracle(depth)
    inputs = (stage, a, b, oracle, depth)
    for name, s in (("a", a), ("b", b)):
        for _, g in s.terms:
            v = term_is_valid(stage, as_map(g), depth)
            if not v.holds:
                return DichotomyVerdict(INCONSISTENT, "invalid-term", {"sum": name, "term": as_map(g).name, "reason": v.detail, "depth": v.depth}, inputs)
    check = verify_section_equation({"i": a, "inf": b}, {"i": stage.i, "inf": stage.infinity}, X.pi_j, oracle, depth, locus=stage.locus)
    if check.kind == NOT_EQUAL:
        return DichotomyVerdict(INCONSISTENT, "section-equation", {"equations": check.to_json()}, inputs)
    if check.kind == UNDETERMINED:
        return DichotomyVerdict(IS_INFINITY, "collecting-forces-infinity", {"side_conditions": list(check.side_conditions())}, inputs)
    # collecting like terms succeeded inside Z[X_i]: both sums are single generators
    if len(a.terms) != 1 or len(b.terms) != 1 or a.terms[0][0] != 1 or b.terms[0][0] != 1:
        return DichotomyVerdict(INCONSISTENT, "not-a-single-generator", {"a_terms": len(a.terms), "b_terms": len(b.terms)}, inputs)
    x, y = as_map(a.terms[0][1]), as_map(b.terms[0][1])
    ex, ey = _second_components(stage, x, depth), _second_components(stage, y, depth)
    if len(ex) != 1 or len(ey) != 1:
        raise ValueError("the stage straddles both cases of the dichotomy; refine it by a cover first")
    (ex,), (ey,) = ex, ey
    if ex == 0:
        return DichotomyVerdict(IS_INFINITY, "x-second-component-0", {"x": x.name}, inputs)
    if ey == 1:
        return DichotomyVerdict(IS_INFINITY, "y-second-component-1", {"y": y.name}, inputs)
    return DichotomyVerdict(NOT_INFINITY, "x=(i,1),y=(inf,0)", {"x": x.name, "y": y.name}, inputs)


def point_sum(stage: Stage, terms: Iterable[Tuple[int, NatValue, int]], oracle: FibreOracle) -> FormalSum:
    """``sum c [(i, j, e)]`` at a one-point stage."""
    X, _, _ = build_X()
    return FormalSum([(c, point_term(stage, j, e)) for c, j, e in terms], oracle, stage.tower, X)


# --------------------------------------------------------------------------
# bounded search at the generic stage


@dataclass(frozen=True)
class JShape:
    """The second coordinate of a pool map ``N_inf -> X`` over the identity.

    ``kind`` is ``identity``, ``const`` (value ``c``), ``cut`` (identity below
    ``k`` then ``inf``) or ``late`` (``inf`` below ``k`` then identity).
    """

    kind: str
    k: NatValue = 0

    @property
    def name(self) -> str:
        return self.kind if self.kind == "identity" else f"{self.kind}({self.k})"

    def value(self, n: int) -> NatValue:
        """``j`` at the finite point ``n``."""
        if self.kind == "identity":
            return n
        if self.kind == "const":
            return self.k
        if self.kind == "cut":
            return n if n < self.k else INF
        return INF if n < self.k else n

    def tail_start(self) -> int:
        """From this point on ``e = [n == j(n)]`` is constant."""
        if self.kind == "const":
            return 0 if self.k == INF else self.k + 1
        if self.kind in ("cut", "late"):
            return int(self.k)
        return 0

    def tail_e(self) -> int:
        return 1 if self.kind in ("identity", "late") else 0


def pool_morphism(shape: JShape) -> TowerMorphism:
    """The unique continuous map ``N_inf -> X`` over the identity with second coordinate ``shape``."""
    X, _, _ = build_X()
    nat = X.nat
    start = shape.tail_start()

    def reindex(j: int) -> int:
        return max(j, start)

    def level_map(j: int) -> Dict[Label, Label]:
        n = reindex(j)
        out = {}
        for y in nat.level(n):
            if y == INF:
                out[y] = (INF, _j_label_inf(shape, j), shape.tail_e())
            else:
                jv = shape.value(y)
                out[y] = (nat_label(y, j), nat_label(jv, j), 1 if jv == y else 0)
        return out

    return TowerMorphism(X.nat, X, level_map, None if start == 0 else reindex, name=shape.name)


def _j_label_inf(shape: JShape, j: int) -> Label:
    """Level-``j`` label of ``shape`` on the points ``>= max(j, tail)`` (all with ``i`` label ``inf``)."""
    if shape.kind == "const":
        return nat_label(shape.k, j)
    return INF


def morphism_pool(max_k: int = 6) -> List[JShape]:
    """The depth-``max_k`` pool: identity, constants ``0..max_k-1`` and ``inf``, and the two cut families."""
    shapes = [JShape("identity")]
    shapes += [JShape("const", c) for c in range(max_k)] + [JShape("const", INF)]
    shapes += [JShape("cut", k) for k in range(1, max_k + 1)]
    shapes += [JShape("late", k) for k in range(1, max_k + 1)]
    return shapes


@dataclass
class SearchReport:
    pool_size: int
    oracle_depth: int
    max_terms: int
    coefficients: Tuple[int, ...]
    a_candidates: int
    b_candidates: int
    a_passing: List[str]
    b_passing: List[str]
    pairs_checked: int
    equal_sections: List[Tuple[str, str]]
    restriction: str = "generic stage only; sums drawn from the bounded pool"

    def to_json(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "oracle_depth": self.oracle_depth,
            "max_terms": self.max_terms,
            "coefficients": list(self.coefficients),
            "a_candidates": self.a_candidates,
            "b_candidates": self.b_candidates,
            "a_passing": self.a_passing,
            "b_passing": self.b_passing,
            "pairs_checked": self.pairs_checked,
            "equal_sections": [list(p) for p in self.equal_sections],
            "restriction": self.restriction,
        }


def _candidate_sums(pool: Sequence[TowerMorphism], max_terms: int, coefficients: Sequence[int]):
    for size in range(1, max_terms + 1):
        for combo in itertools.combinations(range(len(pool)), size):
            for coeffs in itertools.product(coefficients, repeat=size):
                yield [(c, pool[k]) for c, k in zip(coeffs, combo)]


def _describe(s: FormalSum) -> str:
    return repr(s)


def generic_section_search(
    max_terms: int = 3,
    coefficients: Sequence[int] = (-2, -1, 1, 2),
    pool_depth: int = 6,
    pool_shapes: Optional[Sequence[JShape]] = None,
    depth: Optional[int] = None,
) -> SearchReport:
    """Look for ``(a, b)`` passing every section equation at the generic stage.

    Candidates for ``a`` and ``b`` are filtered by their own push equation
    first; surviving pairs are then checked jointly, including agreement on
    the locus ``i = inf``.  Pool maps differ from each other only at points
    up to ``pool_depth``, so the oracle probes to ``pool_depth + 2`` unless
    told otherwise.
    """
    X, _, _ = build_X()
    stage = generic_stage()
    depth = pool_depth + 2 if depth is None else depth
    oracle = section_oracle(depth)
    shapes = list(pool_shapes) if pool_shapes is not None else morphism_pool(pool_depth)
    pool = [pool_morphism(s) for s in shapes]
    cache: Dict[int, PushedTerm] = {}
    target_i = FormalSum.generator(stage.i, oracle)
    target_inf = FormalSum.generator(stage.infinity, oracle)
    a_pass: List[FormalSum] = []
    b_pass: List[FormalSum] = []
    seen_a = seen_b = 0
    for terms in _candidate_sums(pool, max_terms, coefficients):
        s = FormalSum(terms, oracle, stage.tower, X)
        if s.is_zero():
            continue
        pushed = push_forward(X.pi_j, s, oracle, cache)
        seen_a += 1
        seen_b += 1
        if collect_like_terms(pushed, target_i, oracle).kind != NOT_EQUAL:
            a_pass.append(s)
        if collect_like_terms(pushed, target_inf, oracle).kind != NOT_EQUAL:
            b_pass.append(s)
    equal_sections = []
    pairs = 0
    for a in a_pass:
        for b in b_pass:
            pairs += 1
            check = verify_section_equation({"i": a, "inf": b}, {"i": stage.i, "inf": stage.infinity}, X.pi_j, oracle, depth, locus=stage.locus)
            if check.kind == EQUAL:
                equal_sections.append((_describe(a), _describe(b)))
    return SearchReport(
        len(pool),
        depth,
        max_terms,
        tuple(coefficients),
        seen_a,
        seen_b,
        sorted({_describe(a) for a in a_pass}),
        sorted({_describe(b) for b in b_pass}),
        pairs,
        equal_sections,
    )
