"""Lifting a map ``S x N_inf -> Y`` through an epimorphism of free abelian groups.

The pipeline follows the argument that ``Z[N_inf]`` is internally projective:

1. :func:`section_cover` passes to a cover ``S~ -> S`` over which the surjection
   ``p : T -> S x N_inf`` has a section over ``S~ x N``;
2. :func:`shrink_to_iso` cuts ``T`` down so that ``p`` is a bijection over ``S~ x N``;
3. a retraction ``r`` of ``T_inf -> T`` is synthesized;
4. :func:`assemble_lift` forms ``g - g.iota.r + g.iota.h.p_inf.r`` and checks it.

``X`` and ``Y`` are modelled as ``Z[W]`` and ``Z[V]`` with ``f = Z[phi]`` for a
surjection ``phi : W -> V`` of finite sets, so every map into them is a formal sum.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from ..finset import Label
from ..freeab import (
    EQUAL,
    DepthOracle,
    EqOracle,
    FormalSum,
    LikeTermsResult,
    collect_like_terms,
    combine_kinds,
    malcev_combine,
    precompose,
    push_forward,
)
from ..retraction import canonical_point, retraction_check, synthesize_retraction
from ..tower import (
    INF,
    ClosedConstraint,
    Tower,
    TowerError,
    TowerMorphism,
    closed_subtower,
    compose_morphisms,
    constant_tower,
    copair,
    countable_slice_product,
    disjoint_union,
    factor_projection,
    identity_morphism,
    morphism_eq,
    nat_infinity,
    nat_label,
    normalize,
    point_image,
    product_tower,
    pullback_tower,
    surjective_to_depth,
    validate_tower,
)
from ..verdict import Verdict


class SectionError(TowerError):
    """A claimed section is not one."""


def _levelwise(name: str, source: Tower, target: Tower, fn: Callable[[Label], Label]) -> TowerMorphism:
    return TowerMorphism(source, target, lambda j: {x: fn(x) for x in source.level(j)}, name=name)


def _normalized_with_inclusion(t: Tower, depth: int) -> Tuple[Tower, TowerMorphism]:
    norm = normalize(t, depth)
    if norm is t:
        return t, identity_morphism(t)
    return norm, norm.inclusion


# --------------------------------------------------------------------------
# step 1: a cover with sections over S~ x N


@dataclass
class SectionCover:
    S_tilde: Tower
    cover: TowerMorphism
    section: Callable[[int], TowerMorphism]  # n -> map S~ -> T over (cover, n)
    product: Tower


def section_cover(S: Tower, p: TowerMorphism, depth: int) -> SectionCover:
    """Countable slice product over ``S`` of the pullbacks ``T_n`` of ``p`` along ``S x {n}``.

    ``p`` must be levelwise with target ``product_tower(S, N_inf)`` and carry
    a surjectivity certificate on its source.  The product's eventual images
    stabilize one level after each factor enters, which is the attached
    ``stable_from`` certificate; it is re-checked to ``depth + 1``.
    """
    base = p.target
    if getattr(base, "factors", (None,))[0] is not S:
        raise TowerError("p must land in S x N_inf")
    if not p.identity_reindex:
        raise TowerError("section_cover needs a levelwise p")
    T = p.source
    if T.surjective_from is None:
        raise TowerError("section_cover needs a surjectivity certificate on the source of p")
    surj = surjective_to_depth(p, depth)
    if surj.fails:
        raise TowerError(f"p is not surjective: missed {surj.witness}", surj.depth)
    pullbacks: Dict[int, Tuple[Tower, TowerMorphism, TowerMorphism]] = {}

    def fibre(n: int):
        if n not in pullbacks:
            incl = TowerMorphism(S, base, lambda j, n=n: {s: (s, nat_label(n, j)) for s in S.level(j)}, name=f"at{n}")
            pullbacks[n] = pullback_tower(incl, p, surjective_from=max(n + 1, T.surjective_from))
        return pullbacks[n]

    prod, proj = countable_slice_product(S, lambda k: (fibre(k)[0], fibre(k)[1]), stable_from=T.surjective_from)
    validate_tower(prod, depth + 1)
    S_tilde, incl = _normalized_with_inclusion(prod, depth)
    cover = compose_morphisms(proj, incl) if S_tilde is not prod else proj
    cover.name = "cover"
    sections: Dict[int, TowerMorphism] = {}

    def section(n: int) -> TowerMorphism:
        if n not in sections:
            to_factor = compose_morphisms(factor_projection(prod, n), incl) if S_tilde is not prod else factor_projection(prod, n)
            sections[n] = compose_morphisms(fibre(n)[2], to_factor)
            sections[n].name = f"t{n}"
        return sections[n]

    return SectionCover(S_tilde, cover, section, prod)


def check_sections(sc: SectionCover, p: TowerMorphism, depth: int) -> Verdict:
    """``p . t_n = (cover, n)`` for ``n <= depth``, compared to ``depth``."""
    base = p.target
    for n in range(depth + 1):
        expected = TowerMorphism(
            sc.S_tilde, base, lambda j, n=n: {x: (sc.cover.apply(j, x), nat_label(n, j)) for x in sc.S_tilde.level(j)}
        )
        v = morphism_eq(compose_morphisms(p, sc.section(n)), expected, depth)
        if not v.holds:
            return Verdict.failure(v.depth, {"n": n, **dict(v.witness)}, "not a section over S x {n}")
    return Verdict.ok(depth)


@dataclass
class BaseChange:
    base: Tower  # S~ x N_inf
    T: Tower
    p: TowerMorphism
    to_original: TowerMorphism  # T' -> T
    section: Callable[[int], TowerMorphism]  # n -> S~ -> T'
    base_map: TowerMorphism  # S~ x N_inf -> S x N_inf


def base_change(p: TowerMorphism, sc: SectionCover, depth: int) -> BaseChange:
    """Pull ``p`` back along ``S~ x N_inf -> S x N_inf``; the sections become sections of ``p'``."""
    old_base = p.target
    nat = old_base.factors[1]
    new_base, _, _ = product_tower(sc.S_tilde, nat)
    cover = sc.cover
    base_map = _levelwise_indexed(new_base, old_base, lambda j, b: (cover.apply(j, b[0]), b[1]), "cover x id")
    T2, q1, q2 = pullback_tower(base_map, p, surjective_from=0)
    validate_tower(T2, depth + 1)
    lifted: Dict[int, TowerMorphism] = {}
    S_tilde = sc.S_tilde

    def section(n: int) -> TowerMorphism:
        if n not in lifted:
            t = sc.section(n)

            def level_map(j: int, t=t, n=n) -> Dict[Label, Label]:
                r = t.reindex(j)
                return {x: ((S_tilde.down(x, r, j), nat_label(n, j)), t.apply(j, x)) for x in S_tilde.level(r)}

            lifted[n] = TowerMorphism(S_tilde, T2, level_map, t.reindex, name=f"t'{n}")
        return lifted[n]

    return BaseChange(new_base, T2, q1, q2, section, base_map)


def _levelwise_indexed(source: Tower, target: Tower, fn: Callable[[int, Label], Label], name: str) -> TowerMorphism:
    return TowerMorphism(source, target, lambda j: {x: fn(j, x) for x in source.level(j)}, name=name)


# --------------------------------------------------------------------------
# step 2: make p a bijection over S~ x N


def shrink_to_iso(
    p: TowerMorphism,
    section: Callable[[int], TowerMorphism],
    depth: int,
    *,
    surjective_from: Optional[int] = None,
) -> Tuple[Tower, TowerMorphism]:
    """Keep, over each ``S~ x {n}``, only the image of the section ``t_n``.

    ``p`` is levelwise into ``S~ x N_inf``.  Elements over ``inf`` labels are
    unconstrained at that level; the closed set is the intersection of all
    the constraints.  ``surjective_from`` certifies the shrunk tower (the
    caller's horizon); it is re-checked to ``depth + 1`` before normalizing.
    Returns the normalized shrunk tower and ``p`` restricted to it.
    """
    T = p.source
    S_tilde = p.target.factors[0]
    for n in range(depth + 1):
        t = section(n)
        expected = TowerMorphism(S_tilde, p.target, lambda j, n=n: {x: (x, nat_label(n, j)) for x in S_tilde.level(j)})
        v = morphism_eq(compose_morphisms(p, t), expected, depth)
        if not v.holds:
            raise SectionError(f"t_{n} is not a section: {v.witness}", v.depth)

    def keep(n: int, x: Label) -> bool:
        s, y = p.apply(n, x)
        if y == INF:
            return True
        return section(y).apply(n, s) == x

    shrunk, incl = closed_subtower(ClosedConstraint(T, predicate=keep, name="shrunk"), surjective_from=surjective_from)
    validate_tower(shrunk, depth + 1)
    norm, incl2 = _normalized_with_inclusion(shrunk, depth)
    to_T = compose_morphisms(incl, incl2) if norm is not shrunk else incl
    p_new = compose_morphisms(p, to_T)
    p_new.name = "p~"
    norm.to_ambient = to_T
    return norm, p_new


def bijective_over_finite(p: TowerMorphism, depth: int) -> Verdict:
    """At every level ``<= depth``, each base element ``(s, n)`` with ``n`` finite has exactly one preimage."""
    for j in range(depth + 1):
        counts: Dict[Label, int] = {}
        for x, b in p.level_map(j).mapping.items():
            counts[b] = counts.get(b, 0) + 1
        for b in p.target.level(j):
            if b[1] != INF and counts.get(b, 0) != 1:
                return Verdict.failure(j, {"base": b, "preimages": counts.get(b, 0)}, "not a bijection over S x N")
    return Verdict.ok(depth)


def fibre_at_infinity(p: TowerMorphism, depth: int, *, surjective_from: Optional[int] = None) -> Tuple[Tower, TowerMorphism]:
    """``T_inf = T x_{N_inf} {inf}``, normalized, with its inclusion ``iota``."""
    T = p.source
    sub, incl = closed_subtower(
        ClosedConstraint(T, predicate=lambda n, x: p.apply(n, x)[1] == INF, name="T_inf"), surjective_from=surjective_from
    )
    validate_tower(sub, depth + 1)
    norm, incl2 = _normalized_with_inclusion(sub, depth)
    iota = compose_morphisms(incl, incl2) if norm is not sub else incl
    iota.name = "iota"
    return norm, iota


# --------------------------------------------------------------------------
# step 4: the lift and its checks


@dataclass
class DescentData:
    """``T_inf x_S T_inf`` with its projections, and the diagonal into ``T x_{S x N_inf} T``."""

    Q: Tower
    q1: TowerMorphism
    q2: TowerMorphism
    P: Tower
    P1: TowerMorphism
    P2: TowerMorphism
    diagonal: TowerMorphism


def descent_data(p: TowerMorphism, iota: TowerMorphism, p_inf: TowerMorphism, *, surjective_from: Optional[int] = None) -> DescentData:
    Q, q1, q2 = pullback_tower(p_inf, p_inf, surjective_from=surjective_from)
    P, P1, P2 = pullback_tower(p, p, surjective_from=surjective_from)
    T = p.source
    diagonal = TowerMorphism(T, P, lambda j: {x: (x, x) for x in T.level(j)}, name="diag")
    return DescentData(Q, q1, q2, P, P1, P2, diagonal)


def alpha_descent_check(
    p: TowerMorphism,
    depth: int,
    *,
    iota: Optional[TowerMorphism] = None,
    p_inf: Optional[TowerMorphism] = None,
    surjective_from: Optional[int] = None,
) -> Verdict:
    """``alpha : T ⊔ (T_inf x_S T_inf) -> T x_{S x N_inf} T`` is surjective at depths ``0..depth``.

    Pairs over a finite ``n`` are diagonal because ``p`` is a bijection there;
    pairs over ``inf`` come from the second summand.
    """
    if iota is None:
        _, iota = fibre_at_infinity(p, depth, surjective_from=surjective_from)
    if p_inf is None:
        T_inf = iota.source
        pi = compose_morphisms(p, iota)
        p_inf = TowerMorphism(T_inf, p.target.factors[0], lambda j: {x: pi.apply(j, x)[0] for x in T_inf.level(j)}, name="p_inf")
    dd = descent_data(p, iota, p_inf, surjective_from=surjective_from)
    validate_tower(dd.P, depth + 1)
    validate_tower(dd.Q, depth + 1)
    union, _, _ = disjoint_union(p.source, dd.Q)
    second = TowerMorphism(
        dd.Q, dd.P, lambda j: {(a, b): (iota.apply(j, a), iota.apply(j, b)) for a, b in dd.Q.level(j)}, name="iota x iota"
    )
    alpha = copair(dd.diagonal, second, union)
    return surjective_to_depth(alpha, depth)


@dataclass
class LiftReport:
    g_tilde: FormalSum
    results: Dict[str, Dict[str, LikeTermsResult]]
    kinds: Dict[str, str]

    @property
    def all_equal(self) -> bool:
        return all(k == EQUAL for k in self.kinds.values())

    def to_json(self) -> dict:
        return {
            "verdicts": dict(sorted(self.kinds.items())),
            "g_tilde_terms": len(self.g_tilde.terms),
            "equations": {
                name: {k: v.to_json() for k, v in sorted(eqs.items())} for name, eqs in sorted(self.results.items())
            },
        }


def assemble_lift(
    g: FormalSum,
    iota: TowerMorphism,
    r: TowerMorphism,
    h: TowerMorphism,
    p_inf: TowerMorphism,
    *,
    depth: int,
    f: Optional[TowerMorphism] = None,
    y_of_p: Optional[TowerMorphism] = None,
    descent: Optional[DescentData] = None,
    oracle: Optional[EqOracle] = None,
) -> Tuple[FormalSum, LiftReport]:
    """``g~ = g - g.iota.r + g.iota.h.p_inf.r`` with the three checks.

    * ``section``: ``r . iota = id`` and ``p_inf . h = id``;
    * ``pushed``: ``Z[f](g~) = [y . p]`` (needs ``f`` and ``y_of_p``);
    * ``descent``: ``g~`` agrees on both projections of the diagonal and of
      ``T_inf x_S T_inf`` (needs ``descent``).
    """
    oracle = oracle or DepthOracle(depth)
    T_inf = iota.source

    def single(m: TowerMorphism) -> FormalSum:
        return FormalSum.generator(m, oracle)

    results: Dict[str, Dict[str, LikeTermsResult]] = {}
    results["section"] = {
        "r.iota=id": collect_like_terms(single(compose_morphisms(r, iota)), single(identity_morphism(T_inf)), oracle),
        "p_inf.h=id": collect_like_terms(single(compose_morphisms(p_inf, h)), single(identity_morphism(h.source)), oracle),
    }
    if len(g.terms) != 1:
        raise ValueError("assemble_lift expects g to be a single generator [g]")
    g_map = g.terms[0][1]
    g_iota_r = compose_morphisms(compose_morphisms(g_map, iota), r)
    back = compose_morphisms(compose_morphisms(compose_morphisms(g_map, iota), h), compose_morphisms(p_inf, r))
    g_tilde = malcev_combine(single(g_map), single(g_iota_r), single(back))
    if f is not None and y_of_p is not None:
        results["pushed"] = {"f.g~=y.p": collect_like_terms(push_forward(f, g_tilde, oracle), single(y_of_p), oracle)}
    if descent is not None:
        d = descent
        on_diag = collect_like_terms(
            precompose(g_tilde, compose_morphisms(d.P1, d.diagonal), oracle),
            precompose(g_tilde, compose_morphisms(d.P2, d.diagonal), oracle),
            oracle,
        )
        on_pairs = collect_like_terms(
            precompose(g_tilde, compose_morphisms(iota, d.q1), oracle),
            precompose(g_tilde, compose_morphisms(iota, d.q2), oracle),
            oracle,
        )
        results["descent"] = {"diagonal": on_diag, "T_inf x_S T_inf": on_pairs}
    kinds = {name: combine_kinds(r.kind for r in eqs.values()) for name, eqs in results.items()}
    return g_tilde, LiftReport(g_tilde, results, kinds)


# --------------------------------------------------------------------------
# random instances


@dataclass
class LiftInstance:
    """A surjection ``p : T -> S x N_inf`` with ``g : T -> W`` over ``v : S x N_inf -> V``.

    ``T`` holds ``((s, n), w, 0)`` for ``w`` in ``choices[s][n]`` (a nonempty
    subset of ``phi^-1(v(s, n))``; from ``horizon`` on it is the single value
    ``sigma(v_inf[s])``) together with isolated extra points ``((s, inf), w, k)``,
    ``k >= 1``, over ``(s, inf)``.
    """

    n_s: int
    phi: Tuple[int, ...]  # phi[w] in V
    horizon: int
    v_table: Tuple[Tuple[int, ...], ...]  # v_table[s][n] for n < horizon
    v_inf: Tuple[int, ...]
    choices: Tuple[Tuple[Tuple[int, ...], ...], ...]  # choices[s][n] for n < horizon
    extras: Tuple[Tuple[int, ...], ...]  # extras[s] = w-values of the extra points over (s, inf)
    seed: Optional[int] = None

    @property
    def n_v(self) -> int:
        return max(self.phi) + 1

    def sigma(self, v: int) -> int:
        return min(w for w, x in enumerate(self.phi) if x == v)

    def v(self, s: int, n: Any) -> int:
        if n == INF or n >= self.horizon:
            return self.v_inf[s]
        return self.v_table[s][n]

    def allowed(self, s: int, y: Label, level: int) -> frozenset:
        """``w`` values of normal points inside the level-``level`` label ``y``."""
        if y != INF:
            return frozenset(self.choices[s][y]) if y < self.horizon else frozenset([self.sigma(self.v_inf[s])])
        out = {self.sigma(self.v_inf[s])}
        for m in range(level, self.horizon):
            out |= set(self.choices[s][m])
        return frozenset(out)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "S": self.n_s,
            "phi": list(self.phi),
            "horizon": self.horizon,
            "v_table": [list(r) for r in self.v_table],
            "v_inf": list(self.v_inf),
            "extras": [list(e) for e in self.extras],
        }


def random_lift_instance(rng: random.Random, seed: Optional[int] = None) -> LiftInstance:
    n_s = rng.randint(1, 3)
    n_v = rng.randint(1, 3)
    n_w = n_v + rng.randint(0, 2)
    phi = list(range(n_v)) + [rng.randrange(n_v) for _ in range(n_w - n_v)]
    horizon = rng.randint(1, 4)
    pre = {v: [w for w in range(n_w) if phi[w] == v] for v in range(n_v)}
    v_table, v_inf, choices, extras = [], [], [], []
    for _ in range(n_s):
        row = [rng.randrange(n_v) for _ in range(horizon)]
        v_table.append(tuple(row))
        vi = rng.randrange(n_v)
        v_inf.append(vi)
        choices.append(tuple(tuple(sorted(rng.sample(pre[v], rng.randint(1, min(2, len(pre[v])))))) for v in row))
        extras.append(tuple(rng.choice(pre[vi]) for _ in range(rng.randint(0, 2))))
    return LiftInstance(n_s, tuple(phi), horizon, tuple(v_table), tuple(v_inf), tuple(choices), tuple(extras), seed)


def concrete_instance() -> LiftInstance:
    """``S`` a point, ``T = N_inf ⊔ {pt}`` over ``N_inf``, one letter in ``W`` and ``V``."""
    return LiftInstance(1, (0,), 1, ((0,),), (0,), (((0,),),), ((0,),))


@dataclass
class LiftProblem:
    inst: LiftInstance
    S: Tower
    nat: Tower
    base: Tower
    T: Tower
    p: TowerMorphism
    g: TowerMorphism  # T -> W
    W: Tower
    V: Tower
    f: TowerMorphism  # W -> V
    v: TowerMorphism  # S x N_inf -> V


def build_problem(inst: LiftInstance) -> LiftProblem:
    S = constant_tower(range(inst.n_s), name="S")
    nat = nat_infinity()
    base, _, _ = product_tower(S, nat)
    W = constant_tower(range(len(inst.phi)), name="W")
    V = constant_tower(range(inst.n_v), name="V")

    def level_fn(n: int) -> List[Label]:
        out = []
        for s, y in base.level(n):
            for w in sorted(inst.allowed(s, y, n)):
                out.append(((s, y), w, 0))
            if y == INF:
                out.extend(((s, INF), w, k + 1) for k, w in enumerate(inst.extras[s]))
        return out

    def transition_fn(n: int) -> Dict[Label, Label]:
        step = base.transition(n).mapping
        return {(b, w, k): (step[b], w, k) for b, w, k in T.level(n + 1)}

    T = Tower(level_fn, transition_fn, surjective_from=0, rule=("lift_instance", {}), name="T")
    p = _levelwise("p", T, base, lambda x: x[0])
    g = _levelwise("g", T, W, lambda x: x[1])
    f = _levelwise("phi", W, V, lambda w: inst.phi[w])
    K = inst.horizon

    def v_level(j: int) -> Dict[Label, Label]:
        n = max(j, K)
        return {(s, y): inst.v(s, y) for s, y in base.level(n)}

    v = TowerMorphism(base, V, v_level, lambda j: max(j, K), name="v")
    return LiftProblem(inst, S, nat, base, T, p, g, W, V, f, v)


@dataclass
class PipelineResult:
    problem: LiftProblem
    depth: int
    cover: SectionCover
    T_tilde: Tower
    p_tilde: TowerMorphism
    iota: TowerMorphism
    r: TowerMorphism
    h: TowerMorphism
    p_inf: TowerMorphism
    report: LiftReport
    checks: Dict[str, Verdict] = field(default_factory=dict)
    g: Optional[TowerMorphism] = None  # T~ -> W

    def to_json(self) -> dict:
        return {
            "instance": self.problem.inst.to_json(),
            "depth": self.depth,
            "report": self.report.to_json(),
            "checks": {k: v.to_json() for k, v in sorted(self.checks.items())},
        }


def run_pipeline(inst: LiftInstance, depth: int = 10) -> PipelineResult:
    """section_cover -> base change -> shrink_to_iso -> retraction -> assemble_lift.

    The horizon of the instance certifies the shrunk tower, ``T_inf`` and the
    descent pullbacks: from that level on every element over an ``inf`` label
    lies on a point over ``inf``.  Each certificate is validated to the depths used.
    """
    prob = build_problem(inst)
    K = inst.horizon
    checks: Dict[str, Verdict] = {}
    sc = section_cover(prob.S, prob.p, depth)
    checks["sections"] = check_sections(sc, prob.p, depth)
    bc = base_change(prob.p, sc, 3 * depth)
    T_tilde, p_tilde = shrink_to_iso(bc.p, bc.section, depth, surjective_from=K)
    validate_tower(T_tilde, 3 * depth + 1)
    checks["bijective_over_N"] = bijective_over_finite(p_tilde, depth)
    checks["p~_surjective"] = surjective_to_depth(p_tilde, depth)
    T_inf, iota = fibre_at_infinity(p_tilde, 3 * depth, surjective_from=K)
    S_tilde = sc.S_tilde

    p_inf = TowerMorphism(T_inf, S_tilde, lambda j: {x: x[0][0] for x in T_inf.level(j)}, name="p_inf")
    cover = sc.cover

    def h_level(j: int) -> Dict[Label, Label]:
        out = {}
        for x in S_tilde.level(j):
            s = cover.apply(j, x)
            out[x] = ((x, INF), ((s, INF), inst.sigma(inst.v_inf[s]), 0))
        return out

    h = TowerMorphism(S_tilde, T_inf, h_level, name="h")
    pt = point_image(h, canonical_point(S_tilde))
    r = synthesize_retraction(iota, pt, 3 * depth, depth)
    checks["retraction"] = retraction_check(r, iota, depth)
    checks["alpha_surjective"] = alpha_descent_check(p_tilde, depth, iota=iota, p_inf=p_inf, surjective_from=K)

    oracle = DepthOracle(depth)
    to_T = compose_morphisms(bc.to_original, T_tilde.to_ambient)
    g_map = compose_morphisms(prob.g, to_T)
    g_map.name = "g"
    y_of_p = compose_morphisms(prob.v, compose_morphisms(bc.base_map, p_tilde))
    descent = descent_data(p_tilde, iota, p_inf, surjective_from=K)
    _, report = assemble_lift(
        FormalSum.generator(g_map, oracle),
        iota,
        r,
        h,
        p_inf,
        depth=depth,
        f=prob.f,
        y_of_p=y_of_p,
        descent=descent,
        oracle=oracle,
    )
    return PipelineResult(prob, depth, sc, T_tilde, p_tilde, iota, r, h, p_inf, report, checks, g_map)


def instance_corpus(seed: int, count: int = 50) -> List[LiftInstance]:
    rng = random.Random(seed)
    return [random_lift_instance(rng, seed) for _ in range(count)]
