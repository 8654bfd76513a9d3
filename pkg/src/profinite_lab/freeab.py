"""Free abelian groups as formal sums, and equality by collecting like terms.

An element of ``Z[S]`` at a stage ``T`` is a finite sum ``sum n_k [x_k]`` of
generators ``x_k`` (usually morphisms ``T -> S``).  Whether two generators are
equal is asked of an :class:`EqOracle`, which may answer ``Undetermined``
together with the side condition an answer would force.  Two sums are equal
exactly when a like-terms witness ``(K, f, g)`` exists.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple

from .finset import FinSet, label_key, label_to_json
from .tower import Tower, TowerMorphism, compose_morphisms, morphism_eq

EQUAL = "Equal"
UNEQUAL = "Unequal"
UNDETERMINED = "Undetermined"
NOT_EQUAL = "NotEqual"


class FreeAbError(ValueError):
    pass


@dataclass(frozen=True)
class OracleAnswer:
    kind: str
    side_condition: Optional[str] = None
    depth: Optional[int] = None
    witness: Any = None


@dataclass(frozen=True, eq=False)
class PushedTerm:
    """``along . origin``, remembering the generator it came from."""

    map: TowerMorphism
    origin: Any


def as_map(gen: Any) -> Any:
    return gen.map if isinstance(gen, PushedTerm) else gen


class EqOracle:
    """Three-valued equality of generators; must be effect-free."""

    def compare(self, x: Any, y: Any) -> OracleAnswer:
        raise NotImplementedError

    def key(self, x: Any) -> tuple:
        raise NotImplementedError


class DecidableOracle(EqOracle):
    """Generators are plain labels with decidable equality."""

    def compare(self, x, y):
        return OracleAnswer(EQUAL if x == y else UNEQUAL)

    def key(self, x):
        return label_key(x)


class DepthOracle(EqOracle):
    """Morphisms are equal when their level maps agree to ``depth``; unequal with a witness otherwise."""

    def __init__(self, depth: int):
        self.depth = depth
        self._memo: Dict[Any, Any] = {}
        self._keys: Dict[int, Tuple[Any, tuple]] = {}

    def compare_maps(self, f: TowerMorphism, g: TowerMorphism) -> OracleAnswer:
        if f is g:
            return OracleAnswer(EQUAL, depth=self.depth)
        memo_key = (id(f), id(g))
        found = self._memo.get(memo_key)
        if found is not None:
            return found
        if f.source is not g.source or f.target is not g.target:
            answer = OracleAnswer(UNEQUAL, depth=0, witness="different source or target")
        elif f.fingerprint(self.depth) == g.fingerprint(self.depth):
            answer = OracleAnswer(EQUAL, depth=self.depth)
        else:
            v = morphism_eq(f, g, self.depth)
            answer = OracleAnswer(EQUAL, depth=self.depth) if v.holds else OracleAnswer(UNEQUAL, depth=v.depth, witness=v.witness)
        self._memo[memo_key] = answer
        # keep both objects alive so their ids stay unique while memoized
        self._memo.setdefault(("keep", id(f)), f)
        self._memo.setdefault(("keep", id(g)), g)
        return answer

    def compare(self, x, y):
        return self.compare_maps(as_map(x), as_map(y))

    def key(self, x):
        found = self._keys.get(id(x))
        if found is not None and found[0] is x:
            return found[1]
        m = as_map(x)
        base = label_key(m.fingerprint(self.depth))
        if isinstance(x, PushedTerm) and isinstance(x.origin, TowerMorphism):
            k = (base, label_key(x.origin.fingerprint(self.depth)))
        else:
            k = (base, ())
        self._keys[id(x)] = (x, k)
        return k


class FibreOracle(DepthOracle):
    """Depth oracle that refuses to identify pushed terms whose origins differ.

    When ``along . x`` and ``along . y`` agree but ``x`` and ``y`` do not, the
    answer is ``Undetermined`` with the side condition returned by
    ``explain(x, y, witness)``; identifying the two terms would force it.
    """

    def __init__(self, depth: int, explain: Callable[[Any, Any, Any], str]):
        super().__init__(depth)
        self.explain = explain

    def compare(self, x, y):
        pushed = self.compare_maps(as_map(x), as_map(y))
        if pushed.kind != EQUAL:
            return pushed
        if isinstance(x, PushedTerm) and isinstance(y, PushedTerm):
            lifted = self.compare_maps(x.origin, y.origin)
            if lifted.kind != EQUAL:
                return OracleAnswer(UNDETERMINED, self.explain(x.origin, y.origin, lifted.witness), lifted.depth, lifted.witness)
        return pushed


def canonical_terms(terms: Iterable[Tuple[int, Any]], oracle: EqOracle) -> Tuple[Tuple[int, Any], ...]:
    """Merge terms the oracle proves equal, drop zeros, order by the oracle's key."""
    items = sorted(((int(c), g) for c, g in terms), key=lambda t: oracle.key(t[1]))
    classes: List[List[Any]] = []
    for c, g in items:
        for cl in classes:
            if oracle.compare(cl[0], g).kind == EQUAL:
                cl[1] += c
                break
        else:
            classes.append([g, c])
    return tuple((c, g) for g, c in classes if c != 0)


class FormalSum:
    """A finite integer combination of generators, kept in canonical form."""

    def __init__(
        self,
        terms: Iterable[Tuple[int, Any]] = (),
        oracle: Optional[EqOracle] = None,
        stage: Optional[Tower] = None,
        target: Optional[Tower] = None,
        canonical: bool = True,
    ):
        self.oracle = oracle or DecidableOracle()
        self.stage = stage
        self.target = target
        terms = tuple(terms)
        for c, g in terms:
            if isinstance(c, bool) or not isinstance(c, int):
                raise FreeAbError(f"coefficients must be integers, got {c!r}")
            m = as_map(g)
            if isinstance(m, TowerMorphism):
                if stage is not None and m.source is not stage:
                    raise FreeAbError("a term does not start at the stage of the sum")
                if target is not None and m.target is not target:
                    raise FreeAbError("a term does not land in the target of the sum")
        self.terms = canonical_terms(terms, self.oracle) if canonical else terms

    @classmethod
    def generator(cls, gen: Any, oracle: Optional[EqOracle] = None, coeff: int = 1) -> "FormalSum":
        m = as_map(gen)
        if isinstance(m, TowerMorphism):
            return cls([(coeff, gen)], oracle, m.source, m.target)
        return cls([(coeff, gen)], oracle)

    def like(self, terms: Iterable[Tuple[int, Any]]) -> "FormalSum":
        return FormalSum(terms, self.oracle, self.stage, self.target)

    def _check_compatible(self, other: "FormalSum") -> None:
        if self.stage is not other.stage or self.target is not other.target:
            raise FreeAbError("formal sums live over different stages or targets")

    def __add__(self, other: "FormalSum") -> "FormalSum":
        self._check_compatible(other)
        return self.like(self.terms + other.terms)

    def __neg__(self) -> "FormalSum":
        return self.like((-c, g) for c, g in self.terms)

    def __sub__(self, other: "FormalSum") -> "FormalSum":
        return self + (-other)

    def scale(self, n: int) -> "FormalSum":
        return self.like((n * c, g) for c, g in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(f"{c}[{getattr(as_map(g), 'name', g)}]" for c, g in self.terms)

    def to_json(self, depth: Optional[int] = None) -> dict:
        from .serialize import morphism_to_json, tower_ref

        def gen_json(g):
            m = as_map(g)
            if isinstance(m, TowerMorphism):
                d = depth if depth is not None else getattr(self.oracle, "depth", 6)
                return morphism_to_json(m, d)
            return label_to_json(g)

        return {
            "stage": tower_ref(self.stage),
            "target": tower_ref(self.target),
            "terms": [{"coeff": c, "map": gen_json(g)} for c, g in self.terms],
        }


def zero_like(a: FormalSum) -> FormalSum:
    return a.like(())


# --------------------------------------------------------------------------
# collecting like terms


@dataclass
class LikeTermsWitness:
    """``left[i] = assign[f[i]]``, ``right[j] = assign[g[j]]`` and coefficient totals agree per ``k``."""

    K: FinSet
    assign: Dict[int, Any]
    f: Dict[int, int]
    g: Dict[int, int]

    def check(self, left: Sequence[Tuple[int, Any]], right: Sequence[Tuple[int, Any]], oracle: EqOracle) -> bool:
        if set(self.f) != set(range(len(left))) or set(self.g) != set(range(len(right))):
            return False
        totals = {k: 0 for k in self.K}
        for i, (c, x) in enumerate(left):
            if oracle.compare(x, self.assign[self.f[i]]).kind != EQUAL:
                return False
            totals[self.f[i]] += c
        for j, (c, y) in enumerate(right):
            if oracle.compare(y, self.assign[self.g[j]]).kind != EQUAL:
                return False
            totals[self.g[j]] -= c
        return all(v == 0 for v in totals.values())

    def to_json(self) -> dict:
        return {
            "K": list(self.K.elements),
            "f": [self.f[i] for i in sorted(self.f)],
            "g": [self.g[j] for j in sorted(self.g)],
        }


@dataclass
class LikeTermsResult:
    kind: str
    witness: Optional[LikeTermsWitness] = None
    term: Any = None
    side_conditions: Tuple[str, ...] = ()
    detail: str = ""
    answers: List[OracleAnswer] = field(default_factory=list)

    @property
    def equal(self) -> bool:
        return self.kind == EQUAL

    def to_json(self) -> dict:
        out: Dict[str, Any] = {"kind": self.kind}
        if self.witness is not None:
            out["witness"] = self.witness.to_json()
        if self.side_conditions:
            out["side_conditions"] = list(self.side_conditions)
        if self.detail:
            out["detail"] = self.detail
        return out


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def collect_like_terms(a: FormalSum, b: FormalSum, oracle: Optional[EqOracle] = None) -> LikeTermsResult:
    """Decide ``a = b`` by grouping terms the oracle proves equal.

    ``NotEqual`` is returned only when no identification of undetermined
    pairs could balance the coefficients; otherwise the side conditions of
    the undetermined comparisons are reported.
    """
    if a.stage is not b.stage or a.target is not b.target:
        raise FreeAbError("formal sums live over different stages or targets")
    oracle = oracle or a.oracle
    left, right = a.terms, b.terms
    entries = [(c, g) for c, g in left] + [(-c, g) for c, g in right]
    n = len(entries)
    equal = _UnionFind(n)
    maybe = _UnionFind(n)
    answers_by_pair: Dict[Tuple[int, int], OracleAnswer] = {}
    for p in range(n):
        for q in range(p + 1, n):
            answers_by_pair[(p, q)] = oracle.compare(entries[p][1], entries[q][1])
    undetermined: List[Tuple[int, int, OracleAnswer]] = [
        (p, q, ans) for (p, q), ans in answers_by_pair.items() if ans.kind == UNDETERMINED
    ]
    for p, q, _ in undetermined:
        maybe.union(p, q)
    for (p, q), ans in answers_by_pair.items():
        if ans.kind != EQUAL or equal.find(p) == equal.find(q):
            continue
        maybe.union(p, q)
        # an Equal chain must not identify two terms the oracle left undetermined
        blocking = [
            (u, v, answers_by_pair[(min(u, v), max(u, v))])
            for u in range(n) if equal.find(u) == equal.find(p)
            for v in range(n) if equal.find(v) == equal.find(q)
            if answers_by_pair[(min(u, v), max(u, v))].kind == UNDETERMINED
        ]
        if blocking:
            undetermined.append((p, q, blocking[0][2]))
        else:
            equal.union(p, q)

    roots = sorted({equal.find(p) for p in range(n)})
    totals = {r: 0 for r in roots}
    for p, (c, _) in enumerate(entries):
        totals[equal.find(p)] += c
    if all(v == 0 for v in totals.values()):
        index = {r: k for k, r in enumerate(roots)}
        witness = LikeTermsWitness(
            FinSet(range(len(roots))),
            {index[r]: entries[r][1] for r in roots},
            {i: index[equal.find(i)] for i in range(len(left))},
            {j: index[equal.find(len(left) + j)] for j in range(len(right))},
        )
        return LikeTermsResult(EQUAL, witness=witness)

    component_totals: Dict[int, int] = {}
    for r in roots:
        m = maybe.find(r)
        component_totals[m] = component_totals.get(m, 0) + totals[r]
    for r in roots:
        if totals[r] != 0 and component_totals[maybe.find(r)] != 0:
            return LikeTermsResult(
                NOT_EQUAL,
                term=entries[r][1],
                detail=f"coefficient totals differ by {component_totals[maybe.find(r)]} on every grouping",
            )
    unbalanced = {maybe.find(r) for r in roots if totals[r] != 0}
    conditions = []
    answers = []
    for p, q, ans in undetermined:
        if maybe.find(p) in unbalanced:
            answers.append(ans)
            if ans.side_condition and ans.side_condition not in conditions:
                conditions.append(ans.side_condition)
    return LikeTermsResult(UNDETERMINED, side_conditions=tuple(conditions), answers=answers, detail="balancing needs undetermined identifications")


def brute_force_equal(a: Sequence[Tuple[int, Hashable]], b: Sequence[Tuple[int, Hashable]]) -> bool:
    """Reference check for decidable generators: coefficient totals per generator agree."""
    totals: Dict[Hashable, int] = {}
    for c, x in a:
        totals[x] = totals.get(x, 0) + c
    for c, y in b:
        totals[y] = totals.get(y, 0) - c
    return all(v == 0 for v in totals.values())


# --------------------------------------------------------------------------
# functoriality and the Malcev operation


def push_forward(
    pi: TowerMorphism,
    a: FormalSum,
    oracle: Optional[EqOracle] = None,
    cache: Optional[Dict[int, PushedTerm]] = None,
) -> FormalSum:
    """``Z[pi](a)``: postcompose every term with ``pi`` and re-canonicalize.

    ``cache`` (keyed by generator identity) lets repeated pushes of the same
    generators reuse one composite, which keeps oracle memoization effective.
    """
    if a.target is not pi.source:
        raise FreeAbError("push_forward: the sum does not live over the source of the map")
    oracle = oracle or a.oracle

    def pushed(g: Any) -> PushedTerm:
        if cache is None:
            return PushedTerm(compose_morphisms(pi, as_map(g)), g)
        found = cache.get(id(g))
        if found is None or found.origin is not g:
            found = cache[id(g)] = PushedTerm(compose_morphisms(pi, as_map(g)), g)
        return found

    terms = [(c, pushed(g)) for c, g in a.terms]
    return FormalSum(terms, oracle, a.stage, pi.target)


def precompose(a: FormalSum, h: TowerMorphism, oracle: Optional[EqOracle] = None) -> FormalSum:
    """Restrict ``a`` along a change of stage ``h : T' -> T``."""
    if h.target is not a.stage:
        raise FreeAbError("precompose: the map does not land in the stage of the sum")
    oracle = oracle or a.oracle
    terms = [(c, compose_morphisms(as_map(g), h)) for c, g in a.terms]
    return FormalSum(terms, oracle, h.source, a.target)


def malcev_combine(g: FormalSum, u: FormalSum, v: FormalSum) -> FormalSum:
    """``g - u + v``."""
    g._check_compatible(u)
    g._check_compatible(v)
    return g.like(g.terms + tuple((-c, x) for c, x in u.terms) + v.terms)


# --------------------------------------------------------------------------
# section equations


@dataclass
class SectionCheck:
    kind: str
    results: Dict[str, LikeTermsResult]

    def side_conditions(self) -> Tuple[str, ...]:
        out: List[str] = []
        for r in self.results.values():
            for c in r.side_conditions:
                if c not in out:
                    out.append(c)
        return tuple(out)

    def to_json(self) -> dict:
        return {"kind": self.kind, "equations": {k: v.to_json() for k, v in sorted(self.results.items())}}


def combine_kinds(kinds: Iterable[str]) -> str:
    kinds = list(kinds)
    if any(k == NOT_EQUAL for k in kinds):
        return NOT_EQUAL
    if any(k == UNDETERMINED for k in kinds):
        return UNDETERMINED
    return EQUAL


def verify_section_equation(
    s: Mapping[str, FormalSum],
    generators: Mapping[str, TowerMorphism],
    pi: TowerMorphism,
    oracle: EqOracle,
    depth: int,
    locus: Optional[TowerMorphism] = None,
) -> SectionCheck:
    """Check ``Z[pi](s[name]) = [generators[name]]`` for every named generator.

    When ``locus`` (the inclusion of the part of the stage where the two
    generators coincide) is given, the values of ``s`` on the generators must
    also agree there.
    """
    results: Dict[str, LikeTermsResult] = {}
    for name in sorted(generators):
        pushed = push_forward(pi, s[name], oracle)
        expected = FormalSum.generator(generators[name], oracle)
        results[name] = collect_like_terms(pushed, expected, oracle)
    if locus is not None and len(generators) >= 2:
        names = sorted(generators)
        first = precompose(s[names[0]], locus, oracle)
        for other in names[1:]:
            results[f"agree:{names[0]}={other}"] = collect_like_terms(first, precompose(s[other], locus, oracle), oracle)
    return SectionCheck(combine_kinds(r.kind for r in results.values()), results)


# --------------------------------------------------------------------------
# exhaustive comparison against the reference grouping


@dataclass
class SweepReport:
    max_terms: int
    labels: Tuple[Hashable, ...]
    coefficients: Tuple[int, ...]
    pairs_checked: int
    equal: int
    disagreements: List[dict]

    @property
    def agrees(self) -> bool:
        return not self.disagreements

    def to_json(self) -> dict:
        return {
            "max_terms": self.max_terms,
            "labels": [label_to_json(x) for x in self.labels],
            "coefficients": list(self.coefficients),
            "pairs_checked": self.pairs_checked,
            "equal": self.equal,
            "disagreements": self.disagreements[:10],
        }


def oracle_equivalence_sweep(
    max_terms: int = 5,
    labels: Sequence[Hashable] = (0, 1, 2, 3),
    coefficients: Sequence[int] = tuple(range(-3, 4)),
) -> SweepReport:
    """Every multiset of at most ``max_terms`` raw terms, compared with ``collect_like_terms``.

    Sums are built without canonicalization so the grouping step does the
    work.  Each multiset is compared against the empty sum and, split in the
    middle, left half against right half; both answers must match
    :func:`brute_force_equal`.
    """
    oracle = DecidableOracle()
    alphabet = [(c, x) for x in labels for c in coefficients]
    checked = equal = 0
    bad: List[dict] = []
    for k in range(max_terms + 1):
        for combo in itertools.combinations_with_replacement(alphabet, k):
            half = k // 2
            for a, b in ((combo, ()), (combo[:half], combo[half:])):
                got = collect_like_terms(FormalSum(a, oracle, canonical=False), FormalSum(b, oracle, canonical=False), oracle)
                want = brute_force_equal(a, b)
                checked += 1
                equal += want
                if got.kind != (EQUAL if want else NOT_EQUAL):
                    bad.append({"a": [list(t) for t in a], "b": [list(t) for t in b], "got": got.kind})
    return SweepReport(max_terms, tuple(labels), tuple(coefficients), checked, equal, bad)
