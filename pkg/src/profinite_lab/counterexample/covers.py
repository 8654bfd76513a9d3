"""Families of maps into N_inf that cannot be jointly surjective, and slice retractions that cannot exist.

A map from a light profinite set into ``N`` has finite image, so finitely
many such maps together with maps onto ``{inf}`` always miss a natural
number.  The same bookkeeping shows that no retraction of
``N_inf ⊔ N_inf -> N_inf ⊔ {inf}`` can commute with the maps down to ``N_inf``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from ..finset import Label, sort_labels
from ..tower import (
    INF,
    STAR,
    Tower,
    TowerError,
    TowerMorphism,
    compose_morphisms,
    constant_tower,
    disjoint_union,
    exact_eventual_image,
    identity_morphism,
    morphism_eq,
    nat_infinity,
    nat_label,
    singleton_tower,
)
from ..verdict import Verdict

FACTORS_THROUGH_N = "N"
FACTORS_THROUGH_INF = "inf"


class TagError(TowerError):
    """A member of a tagged family does not factor as its tag claims."""

    def __init__(self, member: int, depth: int, message: str):
        super().__init__(f"member {member}: {message}", depth)
        self.member = member


@dataclass
class CoverFamily:
    target: Tower
    members: List[TowerMorphism] = field(default_factory=list)

    def __post_init__(self):
        for k, m in enumerate(self.members):
            if m.target is not self.target:
                raise TowerError(f"member {k} does not map into the common target")


@dataclass
class OmittedWitness:
    omitted: int
    depth: int
    images: List[List[Label]]
    tags: List[str]

    def to_json(self) -> dict:
        return {"omitted": self.omitted, "depth": self.depth, "images": self.images, "tags": self.tags}


def member_image(m: TowerMorphism, j: int) -> frozenset:
    """Exact image of ``m`` at target depth ``j`` (eventual image of the source pushed forward)."""
    n = m.reindex(j)
    src = exact_eventual_image(m.source, n)
    mapping = m.level_map(j).mapping
    return frozenset(mapping[x] for x in src)


def non_joint_cover_witness(family: CoverFamily, tags: Sequence[str], depth: int) -> OmittedWitness:
    """The least natural number missed by every member of ``family``.

    Members tagged ``N`` must have no ``inf`` label in their image at ``depth``
    (so their image is a finite set of naturals); members tagged ``inf`` must
    hit only ``inf`` at every depth up to ``depth``.
    """
    if len(tags) != len(family.members):
        raise ValueError("one tag per member is required")
    covered: set = set()
    images: List[List[Label]] = []
    for k, (m, tag) in enumerate(zip(family.members, tags)):
        if tag == FACTORS_THROUGH_N:
            image = member_image(m, depth)
            if INF in image:
                raise TagError(k, depth, "image still meets inf, so it does not factor through N at this depth")
            covered |= image
        elif tag == FACTORS_THROUGH_INF:
            for j in range(depth + 1):
                image = member_image(m, j)
                if image - {INF}:
                    raise TagError(k, j, "image contains a natural number")
        else:
            raise ValueError(f"unknown tag {tag!r}")
        images.append(sort_labels(image))
    omitted = 0
    while omitted in covered:
        omitted += 1
    return OmittedWitness(omitted, depth, images, list(tags))


def reverify_omitted(family: CoverFamily, witness: OmittedWitness) -> Verdict:
    """Recompute every image at depth ``omitted + 1``, where ``omitted`` has its own label."""
    n = witness.omitted
    j = max(n + 1, witness.depth)
    for k, m in enumerate(family.members):
        image = member_image(m, j)
        if n in image:
            return Verdict.failure(j, {"member": k}, "the omitted number is hit")
    return Verdict.ok(j)


# --------------------------------------------------------------------------
# sample members


def finite_inclusion(target: Tower, values: Sequence[int], name: str = "") -> TowerMorphism:
    """A finite discrete set of naturals mapped into N_inf."""
    src = constant_tower(sorted(set(values)), name=name or f"{{{','.join(map(str, sorted(set(values))))}}}")
    return TowerMorphism(src, target, lambda j: {x: nat_label(x, j) for x in src.level(j)}, name=src.name)


def infinity_point(target: Tower) -> TowerMorphism:
    pt = singleton_tower()
    return TowerMorphism(pt, target, lambda j: {STAR: INF}, name="inf")


def clamp_map(target: Tower, c: int) -> TowerMorphism:
    """``N_inf -> N_inf``, ``n -> min(n, c)``; its image is ``{0, ..., c}``."""
    src = nat_infinity()

    def level_map(j: int) -> Dict[Label, Label]:
        n = max(j, c + 1)
        return {y: nat_label(c if y == INF else min(y, c), j) for y in src.level(n)}

    return TowerMorphism(src, target, level_map, lambda j: max(j, c + 1), name=f"clamp{c}")


def constant_infinity_map(target: Tower) -> TowerMorphism:
    src = nat_infinity()
    return TowerMorphism(src, target, lambda j: {y: INF for y in src.level(j)}, name="const_inf")


def sample_family(target: Optional[Tower] = None) -> Tuple[CoverFamily, List[str]]:
    target = target or nat_infinity()
    fam = CoverFamily(target, [finite_inclusion(target, [0, 1, 2]), infinity_point(target)])
    return fam, [FACTORS_THROUGH_N, FACTORS_THROUGH_INF]


def random_family(rng: random.Random, target: Tower, max_members: int = 6) -> Tuple[CoverFamily, List[str]]:
    members: List[TowerMorphism] = []
    tags: List[str] = []
    for _ in range(rng.randint(0, max_members)):
        kind = rng.choice(["finite", "clamp", "point", "const_inf"])
        if kind == "finite":
            members.append(finite_inclusion(target, rng.sample(range(8), rng.randint(1, 4))))
            tags.append(FACTORS_THROUGH_N)
        elif kind == "clamp":
            members.append(clamp_map(target, rng.randint(0, 5)))
            tags.append(FACTORS_THROUGH_N)
        elif kind == "point":
            members.append(infinity_point(target))
            tags.append(FACTORS_THROUGH_INF)
        else:
            members.append(constant_infinity_map(target))
            tags.append(FACTORS_THROUGH_INF)
    return CoverFamily(target, members), tags


def family_corpus(seed: int, count: int = 100) -> List[Tuple[CoverFamily, List[str]]]:
    rng = random.Random(seed)
    target = nat_infinity()
    corpus = [sample_family(target), (CoverFamily(target, []), []), (CoverFamily(target, [infinity_point(target)]), [FACTORS_THROUGH_INF])]
    while len(corpus) < count:
        corpus.append(random_family(rng, target))
    return corpus


# --------------------------------------------------------------------------
# slice retractions


@dataclass
class SliceSetup:
    """``iota : S = N_inf ⊔ {inf} -> T = N_inf ⊔ N_inf`` over ``N_inf``."""

    nat: Tower
    T: Tower
    S: Tower
    iota: TowerMorphism
    slice_T: TowerMorphism
    slice_S: TowerMorphism


def slice_setup() -> SliceSetup:
    nat = nat_infinity()
    T, _, _ = disjoint_union(nat, nat)
    S, _, _ = disjoint_union(nat, singleton_tower())
    iota = TowerMorphism(S, T, lambda j: {(s, x): (s, INF if s == 1 else x) for s, x in S.level(j)}, name="iota")
    slice_T = TowerMorphism(T, nat, lambda j: {(s, x): x for s, x in T.level(j)}, name="codiag")
    slice_S = TowerMorphism(S, nat, lambda j: {(s, x): INF if s == 1 else x for s, x in S.level(j)}, name="fold")
    return SliceSetup(nat, T, S, iota, slice_T, slice_S)


FIRST = "first"  # (0, y) for the identity-like value y
STAR_SUMMAND = "star"  # (1, *)


@dataclass(frozen=True)
class SummandRule:
    """Where the points of one summand of ``T`` go: a finite table below ``horizon``, a uniform tail after it.

    Table values are ``("first", v)`` for ``(0, v)`` or ``("star",)`` for ``(1, *)``;
    ``tail`` is ``"id"`` (``y -> (0, y)``), ``"star"`` or ``"inf"`` (``y -> (0, inf)``).
    """

    table: Tuple[Tuple[int, Tuple], ...]
    tail: str
    horizon: int

    def value(self, y: Union[int, str]) -> Tuple:
        if y != INF and y < self.horizon:
            return dict(self.table)[y]
        if self.tail == "id":
            return (FIRST, y)
        if self.tail == "inf":
            return (FIRST, INF)
        return (STAR_SUMMAND,)


def _s_label(value: Tuple, j: int) -> Label:
    if value[0] == STAR_SUMMAND:
        return (1, STAR)
    return (0, nat_label(value[1], j))


def summand_candidate(setup: SliceSetup, first: SummandRule, second: SummandRule, name: str = "") -> TowerMorphism:
    """A continuous map ``T -> S`` given by one rule per summand."""
    horizon = max(first.horizon, second.horizon)
    T = setup.T

    def level_map(j: int) -> Dict[Label, Label]:
        n = max(j, horizon)
        out = {}
        for s, y in T.level(n):
            rule = first if s == 0 else second
            out[(s, y)] = _s_label(rule.value(y), j)
        return out

    return TowerMorphism(T, setup.S, level_map, None if horizon == 0 else (lambda j: max(j, horizon)), name=name)


def table_rule(values: Dict[int, Tuple], tail: str) -> SummandRule:
    horizon = max(values, default=-1) + 1
    full = {y: values.get(y, SummandRule((), tail, 0).value(y)) for y in range(horizon)}
    return SummandRule(tuple(sorted(full.items())), tail, horizon)


IDENTITY_RULE = SummandRule((), "id", 0)


def prefix_candidate(setup: SliceSetup, k: int) -> TowerMorphism:
    """Second summand: ``0..k-1`` to the first summand over themselves, the rest to ``(1, *)``."""
    return summand_candidate(setup, IDENTITY_RULE, table_rule({y: (FIRST, y) for y in range(k)}, "star"), name=f"prefix{k}")


@dataclass
class SliceFailure:
    kind: str  # retraction-equation | slice | decomposition
    depth: int
    witness: Dict[str, Any]

    def to_json(self) -> dict:
        from ..finset import label_to_json
        from ..verdict import _jsonable

        return {"kind": self.kind, "depth": self.depth, "witness": _jsonable(self.witness, label_to_json)}


def _decomposition(setup: SliceSetup, r: TowerMorphism) -> Dict[str, Any]:
    """Read ``N_inf = C ⊔ C'`` off the second summand of ``r`` at its decision level.

    ``C`` is where ``r`` lands in ``(1, *)``; it contains ``inf``, so ``C'`` is a finite
    set of naturals, and the least natural outside ``C'`` is sent over ``inf``.
    """
    nat = setup.nat
    m0 = r.reindex(0)
    decide = r.level_map(0).mapping
    C, C_prime = [], []
    for y in nat.level(m0):
        (C if decide[(1, y)] == (1, STAR) else C_prime).append(y)
    family = CoverFamily(nat, [finite_inclusion(nat, C_prime, name="C'"), infinity_point(nat)])
    witness = non_joint_cover_witness(family, [FACTORS_THROUGH_N, FACTORS_THROUGH_INF], max(m0, 1))
    n = witness.omitted
    j = max(n + 1, r.reindex(0))
    over = setup.slice_S.level_map(j).mapping[r.apply_from(j, (1, n), max(r.reindex(j), n + 1))]
    return {
        "decision_level": m0,
        "C": sort_labels(C),
        "C_prime": sort_labels(C_prime),
        "misclassified": n,
        "lies_over": over,
        "should_lie_over": nat_label(n, j),
        "check_depth": j,
    }


def slice_retraction_failure(r: TowerMorphism, depth: int, setup: Optional[SliceSetup] = None) -> SliceFailure:
    """A concrete reason why ``r`` is not a retraction of ``iota`` over ``N_inf``."""
    setup = setup or r.slice_setup
    ret = morphism_eq(compose_morphisms(r, setup.iota), identity_morphism(setup.S), depth)
    if ret.fails:
        return SliceFailure("retraction-equation", ret.depth, dict(ret.witness))
    decomposition = _decomposition(setup, r)
    if decomposition["lies_over"] == decomposition["should_lie_over"]:
        raise AssertionError("decomposition extraction did not find a misclassified number")
    sl = morphism_eq(compose_morphisms(setup.slice_S, r), setup.slice_T, depth)
    if sl.fails:
        return SliceFailure("slice", sl.depth, {**dict(sl.witness), "decomposition": decomposition})
    return SliceFailure("decomposition", decomposition["check_depth"], decomposition)


def candidate_corpus(seed: int, count: int = 200) -> Tuple[SliceSetup, List[TowerMorphism]]:
    """Near-retractions of ``iota``; many pass every check to small depths."""
    setup = slice_setup()
    rng = random.Random(seed)
    out: List[TowerMorphism] = [
        summand_candidate(setup, IDENTITY_RULE, SummandRule((), "star", 0), name="collapse-second"),
    ]
    out += [prefix_candidate(setup, k) for k in range(0, 24)]
    while len(out) < count:
        kind = rng.choice(["subset", "shift", "glitch", "clamp", "prefix"])
        if kind == "subset":
            horizon = rng.randint(1, 16)
            values = {y: ((FIRST, y) if rng.random() < 0.8 else (STAR_SUMMAND,)) for y in range(horizon)}
            cand = summand_candidate(setup, IDENTITY_RULE, table_rule(values, "star"), name=f"subset{horizon}")
        elif kind == "shift":
            horizon = rng.randint(1, 10)
            values = {y: (FIRST, y + 1) for y in range(horizon)}
            cand = summand_candidate(setup, IDENTITY_RULE, table_rule(values, "star"), name=f"shift{horizon}")
        elif kind == "glitch":
            g = rng.randint(0, 20)
            first = table_rule({g: (STAR_SUMMAND,) if rng.random() < 0.5 else (FIRST, g + 1)}, "id")
            cand = summand_candidate(setup, first, table_rule({y: (FIRST, y) for y in range(rng.randint(0, 20))}, "star"), name=f"glitch{g}")
        elif kind == "clamp":
            c = rng.randint(0, 20)
            first = table_rule({y: (FIRST, y) for y in range(c + 1)} | {c + 1: (FIRST, c)}, "id")
            cand = summand_candidate(setup, first, prefix_rule(rng.randint(0, 20)), name=f"clamp{c}")
        else:
            cand = prefix_candidate(setup, rng.randint(24, 60))
        out.append(cand)
    for cand in out:
        cand.slice_setup = setup
    return setup, out


def prefix_rule(k: int) -> SummandRule:
    return table_rule({y: (FIRST, y) for y in range(k)}, "star")
