"""Light profinite sets presented as towers of finite sets.

A :class:`Tower` is a sequence of finite levels ``level(0) <- level(1) <- ...``
whose levels are generated on demand and memoized.  Properties that quantify
over all levels are only ever checked up to an explicit depth; the answers are
:class:`~profinite_lab.verdict.Verdict` values.

Two optional certificates let eventual images be computed exactly:

``surjective_from = k``
    every transition ``level(n+1) -> level(n)`` with ``n >= k`` is surjective.
``stable_from = k``
    for ``n >= k`` the transition ``n`` maps the image of transition ``n+1``
    onto the image of transition ``n`` (weaker; implied by the first).

Certificates are attached by builders, never inferred, and
:func:`validate_tower` re-checks them on every materialized level.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .finset import FinMap, FinSet, FinSetError, Label, compose, label_key, sort_labels
from .verdict import Verdict

INF = "inf"
STAR = "*"

# hard cap on any single operation's depth
DEPTH_CAP = 4096

LevelMapLike = Union[FinMap, Mapping[Label, Label]]


class TowerError(ValueError):
    def __init__(self, message: str, depth: Optional[int] = None):
        super().__init__(message if depth is None else f"{message} (depth {depth})")
        self.depth = depth


class NormalizationUndecided(TowerError):
    pass


def _as_finmap(value: LevelMapLike, dom: FinSet, cod: FinSet) -> FinMap:
    if isinstance(value, FinMap):
        if value.dom != dom or value.cod != cod:
            raise FinSetError("level map has the wrong domain or codomain")
        return value
    return FinMap(dom, cod, value)


class Tower:
    """A countable inverse system of finite sets, materialized lazily."""

    def __init__(
        self,
        level_fn: Callable[[int], Iterable[Label]],
        transition_fn: Callable[[int], LevelMapLike],
        *,
        surjective_from: Optional[int] = None,
        stable_from: Optional[int] = None,
        rule: Optional[Tuple[str, dict]] = None,
        name: str = "",
    ):
        self._level_fn = level_fn
        self._transition_fn = transition_fn
        self.surjective_from = surjective_from
        if stable_from is None:
            stable_from = surjective_from
        elif surjective_from is not None:
            stable_from = min(stable_from, surjective_from)
        self.stable_from = stable_from
        self.rule = rule
        self.name = name
        self._levels: Dict[int, FinSet] = {}
        self._transitions: Dict[int, FinMap] = {}
        self._projections: Dict[Tuple[int, int], Dict[Label, Label]] = {}
        self._lock = threading.RLock()

    def __repr__(self) -> str:
        return f"Tower({self.name or (self.rule[0] if self.rule else '?')})"

    @property
    def max_materialized_depth(self) -> int:
        return max(self._levels, default=-1)

    def level(self, n: int) -> FinSet:
        if n < 0:
            raise TowerError("negative depth", n)
        if n > DEPTH_CAP:
            raise TowerError("depth exceeds the global cap", n)
        found = self._levels.get(n)
        if found is not None:
            return found
        value = self._level_fn(n)
        if not isinstance(value, FinSet):
            value = FinSet(value)
        with self._lock:
            # idempotent fill: a concurrent writer produced an equal value
            return self._levels.setdefault(n, value)

    def transition(self, n: int) -> FinMap:
        found = self._transitions.get(n)
        if found is not None:
            return found
        raw = self._transition_fn(n)
        try:
            fm = _as_finmap(raw, self.level(n + 1), self.level(n))
        except FinSetError as exc:
            raise TowerError(f"malformed transition: {exc}", n) from exc
        with self._lock:
            return self._transitions.setdefault(n, fm)

    def projection(self, n: int, m: int) -> Dict[Label, Label]:
        """The composite ``level(n) -> level(m)`` as a dict (``m <= n``)."""
        if m > n:
            raise TowerError(f"cannot project from depth {n} up to {m}")
        if m == n:
            return {x: x for x in self.level(n)}
        found = self._projections.get((n, m))
        if found is not None:
            return found
        if m == n - 1:
            result = self.transition(m).mapping
        else:
            upper = self.projection(n, m + 1)
            step = self.transition(m).mapping
            result = {x: step[y] for x, y in upper.items()}
        with self._lock:
            return self._projections.setdefault((n, m), result)

    def down(self, x: Label, n: int, m: int) -> Label:
        if m == n:
            return x
        return self.projection(n, m)[x]

    def projection_map(self, n: int, m: int) -> FinMap:
        return FinMap(self.level(n), self.level(m), self.projection(n, m), check=False)

    @classmethod
    def explicit(
        cls,
        levels: Sequence[Iterable[Label]],
        transitions: Sequence[LevelMapLike],
        *,
        surjective_from: Optional[int] = None,
        stable_from: Optional[int] = None,
        name: str = "",
    ) -> "Tower":
        """A tower given by finitely many levels; the last level repeats with identity transitions."""
        levels = [lv if isinstance(lv, FinSet) else FinSet(lv) for lv in levels]
        if not levels:
            raise TowerError("an explicit tower needs at least one level")
        if len(transitions) != len(levels) - 1:
            raise TowerError("an explicit tower needs one transition per consecutive pair of levels")
        last = len(levels) - 1
        transitions = list(transitions)

        def level_fn(n: int) -> FinSet:
            return levels[min(n, last)]

        def transition_fn(n: int) -> LevelMapLike:
            if n < last:
                return transitions[n]
            return FinMap.identity(levels[last])

        tower = cls(
            level_fn,
            transition_fn,
            surjective_from=surjective_from,
            stable_from=stable_from,
            rule=("explicit", {}),
            name=name or "explicit",
        )
        tower.explicit_data = (levels, [t if isinstance(t, FinMap) else FinMap(levels[i + 1], levels[i], t) for i, t in enumerate(transitions)])
        return tower


def constant_tower(a: Iterable[Label], name: str = "") -> Tower:
    """The finite discrete space ``a`` as a tower with identity transitions."""
    a = a if isinstance(a, FinSet) else FinSet(a)
    tower = Tower(
        lambda n: a,
        lambda n: FinMap.identity(a),
        surjective_from=0,
        rule=("constant", {"elements": list(a.elements)}),
        name=name or f"const{len(a)}",
    )
    tower.constant_set = a
    return tower


_SINGLETON: Optional[Tower] = None


def singleton_tower() -> Tower:
    global _SINGLETON
    if _SINGLETON is None:
        _SINGLETON = constant_tower(FinSet([STAR]), name="point")
    return _SINGLETON


def empty_tower() -> Tower:
    return constant_tower(FinSet(), name="empty")


def nat_infinity() -> Tower:
    """The one-point compactification of the naturals.

    ``level(n) = {0, ..., n-1, inf}``; the transition into ``level(n)`` sends
    ``n`` to ``inf`` and fixes everything else.
    """

    def level_fn(n: int) -> FinSet:
        return FinSet(list(range(n)) + [INF])

    def transition_fn(n: int) -> Dict[Label, Label]:
        mapping: Dict[Label, Label] = {k: k for k in range(n)}
        mapping[n] = INF
        mapping[INF] = INF
        return mapping

    return Tower(level_fn, transition_fn, surjective_from=0, rule=("nat_infinity", {}), name="N_inf")


def nat_label(value: Union[int, str], n: int) -> Label:
    """The level-``n`` coordinate of the point ``value`` of N_inf."""
    if value == INF or value >= n:
        return INF
    return value


# --------------------------------------------------------------------------
# morphisms and points


def _identity_reindex(j: int) -> int:
    return j


class TowerMorphism:
    """A continuous map ``source -> target``.

    ``level_map(j)`` is a finite map ``source.level(reindex(j)) -> target.level(j)``;
    ``reindex`` is monotone.
    """

    def __init__(
        self,
        source: Tower,
        target: Tower,
        level_map_fn: Callable[[int], LevelMapLike],
        reindex: Optional[Callable[[int], int]] = None,
        name: str = "",
        rule: Optional[Tuple[str, dict]] = None,
    ):
        self.source = source
        self.target = target
        self._level_map_fn = level_map_fn
        self._reindex = reindex or _identity_reindex
        self.identity_reindex = reindex is None
        self.name = name
        self.rule = rule
        self._maps: Dict[int, FinMap] = {}
        self._fingerprints: Dict[int, tuple] = {}
        self._lock = threading.RLock()

    def __repr__(self) -> str:
        return f"TowerMorphism({self.name or '?'}: {self.source!r} -> {self.target!r})"

    def reindex(self, j: int) -> int:
        return j if self.identity_reindex else self._reindex(j)

    def level_map(self, j: int) -> FinMap:
        found = self._maps.get(j)
        if found is not None:
            return found
        n = self.reindex(j)
        raw = self._level_map_fn(j)
        try:
            fm = _as_finmap(raw, self.source.level(n), self.target.level(j))
        except FinSetError as exc:
            raise TowerError(f"malformed level map of {self.name or 'morphism'}: {exc}", j) from exc
        with self._lock:
            return self._maps.setdefault(j, fm)

    def apply(self, j: int, x: Label) -> Label:
        """Image at target depth ``j`` of an element ``x`` of ``source.level(reindex(j))``."""
        return self.level_map(j).mapping[x]

    def apply_from(self, j: int, x: Label, n: int) -> Label:
        """Image at target depth ``j`` of ``x`` in ``source.level(n)``, ``n >= reindex(j)``."""
        return self.level_map(j).mapping[self.source.down(x, n, self.reindex(j))]

    def fingerprint(self, depth: int) -> tuple:
        found = self._fingerprints.get(depth)
        if found is not None:
            return found
        fp = tuple(
            (self.reindex(j), tuple(sorted(self.level_map(j).mapping.items(), key=lambda kv: label_key(kv[0]))))
            for j in range(depth + 1)
        )
        self._fingerprints[depth] = fp
        return fp

    def check_naturality(self, depth: int) -> Verdict:
        prev = self.reindex(0)
        for j in range(depth):
            n0, n1 = self.reindex(j), self.reindex(j + 1)
            if n1 < n0 or n0 < prev:
                return Verdict.failure(j, {"reindex": (n0, n1)}, "reindexing is not monotone")
            prev = n0
            upper = self.level_map(j + 1).mapping
            lower = self.level_map(j).mapping
            step = self.target.transition(j).mapping
            proj = self.source.projection(n1, n0)
            for x in self.source.level(n1):
                if step[upper[x]] != lower[proj[x]]:
                    return Verdict.failure(j, {"element": x}, "naturality square does not commute")
        return Verdict.ok(depth)


def morphism_from_labels(
    source: Tower,
    target: Tower,
    fn: Callable[[int, Label], Label],
    reindex: Optional[Callable[[int], int]] = None,
    name: str = "",
) -> TowerMorphism:
    """Build a morphism from an elementwise rule ``fn(j, x)`` with ``x`` in ``source.level(reindex(j))``."""
    r = reindex or _identity_reindex

    def level_map(j: int) -> Dict[Label, Label]:
        return {x: fn(j, x) for x in source.level(r(j))}

    return TowerMorphism(source, target, level_map, reindex, name=name)


def identity_morphism(t: Tower) -> TowerMorphism:
    return TowerMorphism(t, t, lambda j: FinMap.identity(t.level(j)), name="id", rule=("identity", {}))


def compose_morphisms(g: TowerMorphism, f: TowerMorphism) -> TowerMorphism:
    """``g . f``; ``f`` is applied first."""
    if f.target is not g.source:
        raise TowerError("cannot compose morphisms: target and source towers differ")

    def level_map(j: int) -> FinMap:
        return compose(g.level_map(j), f.level_map(g.reindex(j)))

    if f.identity_reindex and g.identity_reindex:
        reindex = None
    else:
        def reindex(j: int) -> int:
            return f.reindex(g.reindex(j))

    h = TowerMorphism(f.source, g.target, level_map, reindex, name=f"{g.name or '?'}.{f.name or '?'}")
    h.parts = (g, f)
    return h


def terminal_morphism(t: Tower) -> TowerMorphism:
    pt = singleton_tower()
    return TowerMorphism(t, pt, lambda j: {x: STAR for x in t.level(j)}, name="!")


class Point:
    """A compatible family of coordinates ``coords(n) in level(n)``."""

    def __init__(self, tower: Tower, coords_fn: Callable[[int], Label], name: str = ""):
        self.tower = tower
        self._coords_fn = coords_fn
        self._coords: Dict[int, Label] = {}
        self.name = name

    def __repr__(self) -> str:
        return f"Point({self.name or '?'})"

    def coords(self, n: int) -> Label:
        found = self._coords.get(n, self)
        if found is self:
            found = self._coords_fn(n)
            self._coords[n] = found
        return found

    def check(self, depth: int) -> Verdict:
        for n in range(depth + 1):
            if self.coords(n) not in self.tower.level(n):
                return Verdict.failure(n, {"coord": self.coords(n)}, "coordinate not in level")
            if n < depth and self.tower.transition(n)(self.coords(n + 1)) != self.coords(n):
                return Verdict.failure(n, {"coord": self.coords(n + 1)}, "coordinates are not compatible")
        return Verdict.ok(depth)

    def as_morphism(self) -> TowerMorphism:
        m = TowerMorphism(singleton_tower(), self.tower, lambda j: {STAR: self.coords(j)}, name=self.name or "pt")
        m.point = self
        return m


def point_of_morphism(m: TowerMorphism, source_coords: Optional[Callable[[int], Label]] = None) -> Point:
    """Image of a point under ``m``; the source point defaults to the unique point of the singleton tower."""
    if source_coords is None:
        source_coords = lambda n: STAR
    return Point(m.target, lambda j: m.apply(j, source_coords(m.reindex(j))))


def nat_point(value: Union[int, str], tower: Optional[Tower] = None) -> Point:
    tower = tower or nat_infinity()
    return Point(tower, lambda n: nat_label(value, n), name=str(value))


def point_image(m: TowerMorphism, p: Point) -> Point:
    return Point(m.target, lambda j: m.apply(j, p.coords(m.reindex(j))))


# --------------------------------------------------------------------------
# validation and eventual images


@dataclass
class ValidationReport:
    depth: int
    level_sizes: List[int]
    surjective_from: Optional[int]
    stable_from: Optional[int]
    surjective_levels: List[bool] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return True

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "level_sizes": self.level_sizes,
            "surjective_from": self.surjective_from,
            "stable_from": self.stable_from,
        }


def validate_tower(t: Tower, depth: int) -> ValidationReport:
    """Materialize levels ``0..depth`` and check shapes and certificates.

    Raises :class:`TowerError` naming the offending depth.
    """
    if depth < 0:
        raise TowerError("depth must be non-negative")
    sizes = [len(t.level(n)) for n in range(depth + 1)]
    surj = []
    for n in range(depth):
        fm = t.transition(n)
        surj.append(fm.is_surjective())
        if t.surjective_from is not None and n >= t.surjective_from and not surj[-1]:
            raise TowerError("surjectivity certificate violated", n)
    if t.stable_from is not None:
        for n in range(t.stable_from, depth - 1):
            lower = t.transition(n)
            upper_image = t.transition(n + 1).image()
            if frozenset(lower(x) for x in upper_image) != lower.image():
                raise TowerError("stable-image certificate violated", n)
    return ValidationReport(depth, sizes, t.surjective_from, t.stable_from, surj)


EXACT = "exact"
LOWER_BOUND = "lower-bound"


def exact_probe_depth(t: Tower, i: int) -> Optional[int]:
    """Smallest probe depth at which the eventual image at ``i`` is certified, if any."""
    candidates = []
    if t.surjective_from is not None:
        candidates.append(max(i, t.surjective_from))
    if t.stable_from is not None:
        candidates.append(max(i, t.stable_from) + 1)
    return min(candidates) if candidates else None


def eventual_image(t: Tower, at_depth: int, probe_depth: int) -> Tuple[frozenset, str]:
    """Image of ``level(probe_depth)`` in ``level(at_depth)``.

    The chain of images is decreasing in the probe depth, so the result always
    contains the true eventual image; ``status`` is ``exact`` when a certificate
    (or emptiness) shows the chain has stabilized.
    """
    if at_depth > probe_depth:
        raise TowerError(f"probe depth {probe_depth} is below the requested depth", at_depth)
    image = frozenset(t.projection(probe_depth, at_depth).values())
    if not image:
        return image, EXACT
    needed = exact_probe_depth(t, at_depth)
    status = EXACT if needed is not None and needed <= probe_depth else LOWER_BOUND
    return image, status


def exact_eventual_image(t: Tower, i: int) -> frozenset:
    needed = exact_probe_depth(t, i)
    if needed is None:
        raise NormalizationUndecided(f"no certificate on {t!r}; eventual image is undecided", i)
    return eventual_image(t, i, needed)[0]


def subtower(
    ambient: Tower,
    level_fn: Callable[[int], Iterable[Label]],
    *,
    surjective_from: Optional[int] = None,
    stable_from: Optional[int] = None,
    rule: Optional[Tuple[str, dict]] = None,
    name: str = "",
) -> Tuple[Tower, TowerMorphism]:
    """The subtower with the given levels (each a subset of the ambient level) and its inclusion."""

    def checked_level(n: int) -> FinSet:
        lv = FinSet(level_fn(n))
        if not lv.issubset(ambient.level(n)):
            raise TowerError("subtower level is not contained in the ambient level", n)
        return lv

    def transition_fn(n: int) -> Dict[Label, Label]:
        step = ambient.transition(n).mapping
        lower = sub.level(n)
        mapping = {}
        for x in sub.level(n + 1):
            y = step[x]
            if y not in lower:
                raise TowerError("subtower is not closed under transitions", n)
            mapping[x] = y
        return mapping

    sub = Tower(
        checked_level,
        transition_fn,
        surjective_from=surjective_from,
        stable_from=stable_from,
        rule=rule,
        name=name,
    )
    sub.ambient = ambient
    incl = TowerMorphism(sub, ambient, lambda j: {x: x for x in sub.level(j)}, name="incl")
    return sub, incl


def normalize(t: Tower, depth: int) -> Tower:
    """Replace each level by its eventual image, making every transition surjective.

    Requires a certificate; the exact eventual images at depths ``0..depth``
    are computed eagerly so a missing certificate fails here rather than later.
    """
    for i in range(depth + 1):
        if exact_probe_depth(t, i) is None:
            image, _ = eventual_image(t, i, max(i, depth))
            if image:
                raise NormalizationUndecided(f"eventual image of {t!r} is not certified", max(i, depth))
    if t.surjective_from == 0:
        return t

    def level_fn(n: int) -> frozenset:
        needed = exact_probe_depth(t, n)
        if needed is None:
            image, status = eventual_image(t, n, max(n, depth))
            if status != EXACT:
                raise NormalizationUndecided("eventual image is not certified", max(n, depth))
            return image
        return eventual_image(t, n, needed)[0]

    norm, incl = subtower(t, level_fn, surjective_from=0, rule=("normalize", {}), name=f"norm({t.name})")
    norm.inclusion = incl
    return norm


def truncated_normalize(t: Tower, probe_depth: int) -> Tower:
    """Levels ``0..probe_depth`` replaced by their images from ``probe_depth``.

    Without a certificate this is the best available approximation: all
    transitions up to ``probe_depth`` are surjective, deeper levels are refused.
    """
    if exact_probe_depth(t, 0) is not None:
        return normalize(t, probe_depth)

    def level_fn(n: int) -> frozenset:
        if n > probe_depth:
            raise NormalizationUndecided("level beyond the truncation depth of an uncertified tower", n)
        return eventual_image(t, n, probe_depth)[0]

    norm, incl = subtower(t, level_fn, surjective_from=0, rule=("normalize", {"probe": probe_depth}), name=f"trunc({t.name})")
    norm.inclusion = incl
    norm.valid_to = probe_depth
    return norm


def inclusion_morphism(sub: Tower, ambient: Tower) -> TowerMorphism:
    return TowerMorphism(sub, ambient, lambda j: {x: x for x in sub.level(j)}, name="incl")


# --------------------------------------------------------------------------
# limits


def _max_cert(*values: Optional[int]) -> Optional[int]:
    if any(v is None for v in values):
        return None
    return max(values, default=0)


def product_tower(s: Tower, t: Tower) -> Tuple[Tower, TowerMorphism, TowerMorphism]:
    def level_fn(n: int) -> List[Label]:
        return [(a, b) for a in s.level(n) for b in t.level(n)]

    def transition_fn(n: int) -> Dict[Label, Label]:
        fs, ft = s.transition(n).mapping, t.transition(n).mapping
        return {(a, b): (fs[a], ft[b]) for a in s.level(n + 1) for b in t.level(n + 1)}

    prod = Tower(
        level_fn,
        transition_fn,
        surjective_from=_max_cert(s.surjective_from, t.surjective_from),
        rule=("product", {"left": s, "right": t}),
        name=f"({s.name} x {t.name})",
    )
    p1 = TowerMorphism(prod, s, lambda j: {x: x[0] for x in prod.level(j)}, name="pr1")
    p2 = TowerMorphism(prod, t, lambda j: {x: x[1] for x in prod.level(j)}, name="pr2")
    prod.factors = (s, t)
    return prod, p1, p2


def pair_morphism(f: TowerMorphism, g: TowerMorphism, product: Tower) -> TowerMorphism:
    """``(f, g)`` into ``product = product_tower(f.target, g.target)[0]``."""
    if f.source is not g.source:
        raise TowerError("paired morphisms need a common source")

    def reindex(j: int) -> int:
        return max(f.reindex(j), g.reindex(j))

    src = f.source

    def level_map(j: int) -> Dict[Label, Label]:
        n = reindex(j)
        return {x: (f.apply_from(j, x, n), g.apply_from(j, x, n)) for x in src.level(n)}

    same = f.identity_reindex and g.identity_reindex
    return TowerMorphism(src, product, level_map, None if same else reindex, name=f"({f.name},{g.name})")


def disjoint_union(s: Tower, t: Tower) -> Tuple[Tower, TowerMorphism, TowerMorphism]:
    def level_fn(n: int) -> List[Label]:
        return [(0, a) for a in s.level(n)] + [(1, b) for b in t.level(n)]

    def transition_fn(n: int) -> Dict[Label, Label]:
        fs, ft = s.transition(n).mapping, t.transition(n).mapping
        out = {(0, a): (0, fs[a]) for a in s.level(n + 1)}
        out.update({(1, b): (1, ft[b]) for b in t.level(n + 1)})
        return out

    union = Tower(
        level_fn,
        transition_fn,
        surjective_from=_max_cert(s.surjective_from, t.surjective_from),
        rule=("disjoint_union", {"left": s, "right": t}),
        name=f"({s.name} + {t.name})",
    )
    in1 = TowerMorphism(s, union, lambda j: {a: (0, a) for a in s.level(j)}, name="in1")
    in2 = TowerMorphism(t, union, lambda j: {b: (1, b) for b in t.level(j)}, name="in2")
    union.summands = (s, t)
    return union, in1, in2


def copair(f: TowerMorphism, g: TowerMorphism, union: Tower) -> TowerMorphism:
    """``[f, g]`` out of ``union = disjoint_union(f.source, g.source)[0]``."""
    if f.target is not g.target:
        raise TowerError("copaired morphisms need a common target")

    def reindex(j: int) -> int:
        return max(f.reindex(j), g.reindex(j))

    s, t = union.summands

    def level_map(j: int) -> Dict[Label, Label]:
        n = reindex(j)
        out = {}
        for tag, x in union.level(n):
            h = f if tag == 0 else g
            out[(tag, x)] = h.apply_from(j, x, n)
        return out

    same = f.identity_reindex and g.identity_reindex
    return TowerMorphism(union, f.target, level_map, None if same else reindex, name=f"[{f.name},{g.name}]")


def realign(f: TowerMorphism) -> Tuple[Tower, TowerMorphism, TowerMorphism]:
    """Re-present ``f.source`` so that ``f`` needs no reindexing.

    Returns ``(S', f', back)`` with ``S'.level(n) = S.level(reindex(n))``,
    ``f'`` levelwise, and ``back : S' -> S`` the canonical isomorphism.
    """
    if f.identity_reindex:
        return f.source, f, identity_morphism(f.source)
    s = f.source
    r = f.reindex

    aligned = Tower(
        lambda n: s.level(r(n)),
        lambda n: s.projection(r(n + 1), r(n)),
        surjective_from=None if s.surjective_from is None else _first_at_least(r, s.surjective_from),
        rule=("realign", {}),
        name=f"re({s.name})",
    )
    f2 = TowerMorphism(aligned, f.target, lambda j: f.level_map(j).mapping, name=f.name)

    def back_reindex(j: int) -> int:
        return _first_at_least(r, j)

    back = TowerMorphism(
        aligned,
        s,
        lambda j: {x: s.down(x, r(back_reindex(j)), j) for x in aligned.level(back_reindex(j))},
        back_reindex,
        name="realign",
    )
    return aligned, f2, back


def _first_at_least(r: Callable[[int], int], j: int) -> int:
    for m in range(DEPTH_CAP + 1):
        if r(m) >= j:
            return m
    raise TowerError("reindexing is bounded; the morphism is not cofinal", j)


def pullback_tower(
    f: TowerMorphism,
    g: TowerMorphism,
    *,
    surjective_from: Optional[int] = None,
) -> Tuple[Tower, TowerMorphism, TowerMorphism]:
    """Fibre product of ``f : S -> U`` and ``g : T -> U``.

    ``level(n)`` holds the pairs agreeing in ``U.level(n)`` after reindexing.
    Surjectivity is not inherited in general, so the certificate is whatever
    the caller supplies (checked by :func:`validate_tower`).
    """
    if f.target is not g.target:
        raise TowerError("pullback needs a common target")
    s_al, f_al, s_back = realign(f)
    t_al, g_al, t_back = realign(g)
    fm = f_al
    gm = g_al

    def level_fn(n: int) -> List[Label]:
        fmap, gmap = fm.level_map(n).mapping, gm.level_map(n).mapping
        by_value: Dict[Label, List[Label]] = {}
        for b in t_al.level(n):
            by_value.setdefault(gmap[b], []).append(b)
        return [(a, b) for a in s_al.level(n) for b in by_value.get(fmap[a], ())]

    def transition_fn(n: int) -> Dict[Label, Label]:
        fs, ft = s_al.transition(n).mapping, t_al.transition(n).mapping
        return {(a, b): (fs[a], ft[b]) for a, b in pb.level(n + 1)}

    pb = Tower(level_fn, transition_fn, surjective_from=surjective_from, rule=("pullback", {"left": f, "right": g}), name=f"({f.source.name} x_U {g.source.name})")
    q1 = TowerMorphism(pb, s_al, lambda j: {x: x[0] for x in pb.level(j)}, name="q1")
    q2 = TowerMorphism(pb, t_al, lambda j: {x: x[1] for x in pb.level(j)}, name="q2")
    if not f.identity_reindex:
        q1 = compose_morphisms(s_back, q1)
    if not g.identity_reindex:
        q2 = compose_morphisms(t_back, q2)
    return pb, q1, q2


@dataclass
class ClosedConstraint:
    """A closed subset of ``tower``.

    ``constraints`` is a finite list of ``(depth, subset)`` clopen conditions;
    ``predicate(n, x)``, when given, is a levelwise condition whose survivors
    must be closed under transitions.  The closed set is the intersection.
    """

    tower: Tower
    constraints: Tuple[Tuple[int, frozenset], ...] = ()
    predicate: Optional[Callable[[int, Label], bool]] = None
    name: str = ""
    surjective_from: Optional[int] = None

    def __post_init__(self):
        self.constraints = tuple((int(n), frozenset(sub)) for n, sub in self.constraints)

    @property
    def max_constraint_depth(self) -> int:
        return max((n for n, _ in self.constraints), default=-1)


def closed_subtower(
    c: ClosedConstraint,
    depth: Optional[int] = None,
    *,
    surjective_from: Optional[int] = None,
) -> Tuple[Tower, TowerMorphism]:
    """Elements of each ambient level whose images satisfy every condition at depths ``<= n``.

    For purely clopen constraints the certificate ``max(constraint depth, ambient certificate)``
    is attached; predicate constraints need a caller-supplied certificate.
    """
    amb = c.tower
    if depth is not None and c.max_constraint_depth > depth:
        raise TowerError("constraint refers to a depth beyond the requested one", c.max_constraint_depth)
    by_depth: Dict[int, frozenset] = {}
    for n, sub in c.constraints:
        if not sub <= amb.level(n).members:
            raise TowerError("constraint subset is not contained in its level", n)
        by_depth[n] = by_depth.get(n, sub) & sub

    def level_fn(n: int) -> List[Label]:
        allowed = by_depth.get(n)
        pred = c.predicate
        if n == 0:
            parent_ok = None
        else:
            parent_ok = sub.level(n - 1).members
            step = amb.transition(n - 1).mapping
        out = []
        for x in amb.level(n):
            if allowed is not None and x not in allowed:
                continue
            if parent_ok is not None and step[x] not in parent_ok:
                continue
            if pred is not None and not pred(n, x):
                continue
            out.append(x)
        return out

    cert = surjective_from if surjective_from is not None else c.surjective_from
    if cert is None and c.predicate is None and amb.surjective_from is not None:
        cert = max(c.max_constraint_depth, amb.surjective_from, 0)
    sub, incl = subtower(amb, level_fn, surjective_from=cert, rule=("closed_subtower", {"constraint": c}), name=c.name or f"closed({amb.name})")
    return sub, incl


def fibre_subtower(f: TowerMorphism, point: Point, *, surjective_from: Optional[int] = None) -> Tuple[Tower, TowerMorphism]:
    """Preimage of a point under ``f`` as a closed subtower of ``f.source``."""
    src = f.source

    checks: Dict[int, List[int]] = {}

    def new_checks(n: int) -> List[int]:
        # target depths first visible at level n; older ones were checked on the parent
        if n not in checks:
            checks[n] = [j for j in range(n + 1) if f.reindex(j) <= n and (j == n or f.reindex(j) == n)]
        return checks[n]

    def pred(n: int, x: Label) -> bool:
        return all(f.apply_from(j, x, n) == point.coords(j) for j in new_checks(n))

    return closed_subtower(ClosedConstraint(src, predicate=pred, name="fibre"), surjective_from=surjective_from)


def points_to_depth(t: Tower, depth: int) -> List[Tuple[Label, ...]]:
    """Coordinate tuples ``(x_0, ..., x_depth)`` of the elements of ``level(depth)``."""
    out = []
    for x in t.level(depth):
        out.append(tuple(t.down(x, depth, m) for m in range(depth + 1)))
    return out


# --------------------------------------------------------------------------
# depth-certified comparisons


def morphism_eq(f: TowerMorphism, g: TowerMorphism, depth: int) -> Verdict:
    """Compare two parallel morphisms at target depths ``0..depth``."""
    if f.source is not g.source or f.target is not g.target:
        raise TowerError("morphism_eq needs morphisms with the same source and target")
    src = f.source
    for j in range(depth + 1):
        nf, ng = f.reindex(j), g.reindex(j)
        if nf == ng:
            mf, mg = f.level_map(j).mapping, g.level_map(j).mapping
            if mf == mg:
                continue
            for x in src.level(nf):
                if mf[x] != mg[x]:
                    return Verdict.failure(j, {"element": x, "left": mf[x], "right": mg[x]}, "level maps differ")
        n = max(nf, ng)
        for x in src.level(n):
            a, b = f.apply_from(j, x, n), g.apply_from(j, x, n)
            if a != b:
                return Verdict.failure(j, {"element": x, "left": a, "right": b}, "level maps differ")
    return Verdict.ok(depth)


def surjective_to_depth(f: TowerMorphism, depth: int) -> Verdict:
    """Is the image of ``f`` all of the target, checked at target depths ``0..depth``?

    Compares exact eventual images, so both towers need certificates.
    """
    src, tgt = f.source, f.target
    for j in range(depth + 1):
        n = f.reindex(j)
        try:
            src_image = exact_eventual_image(src, n)
            tgt_image = exact_eventual_image(tgt, j)
        except NormalizationUndecided as exc:
            return Verdict.undecided(j, str(exc))
        mapping = f.level_map(j).mapping
        hit = frozenset(mapping[x] for x in src_image)
        missed = tgt_image - hit
        if missed:
            return Verdict.failure(j, {"missed": sort_labels(missed)[0]}, "target element not hit")
    return Verdict.ok(depth)


def countable_slice_product(
    s: Tower,
    family: Callable[[int], Tuple[Tower, TowerMorphism]],
    depth: Optional[int] = None,
    *,
    surjective_from: Optional[int] = None,
    stable_from: Optional[int] = None,
) -> Tuple[Tower, TowerMorphism]:
    """Fibrewise product over ``s`` of ``T_0, T_1, ...``, factor ``k`` entering at depth ``k``.

    ``level(n)`` holds ``(x, (y_0, ..., y_n))`` with ``y_k`` in ``T_k.level(n)``
    over ``x``.  Each structure map must be levelwise (no reindexing).
    """
    factors: Dict[int, Tuple[Tower, TowerMorphism]] = {}

    def factor(k: int) -> Tuple[Tower, TowerMorphism]:
        if k not in factors:
            t_k, q_k = family(k)
            if q_k.target is not s or not q_k.identity_reindex:
                raise TowerError("slice factors need levelwise structure maps into the base", k)
            factors[k] = (t_k, q_k)
        return factors[k]

    def level_fn(n: int) -> List[Label]:
        fibres = []
        for k in range(n + 1):
            t_k, q_k = factor(k)
            by_base: Dict[Label, List[Label]] = {}
            for y, x in q_k.level_map(n).mapping.items():
                by_base.setdefault(x, []).append(y)
            fibres.append(by_base)
        out = []
        for x in s.level(n):
            partial: List[Tuple[Label, ...]] = [()]
            for by_base in fibres:
                ys = by_base.get(x, ())
                partial = [p + (y,) for p in partial for y in ys]
                if not partial:
                    break
            out.extend((x, p) for p in partial)
        return out

    def transition_fn(n: int) -> Dict[Label, Label]:
        step = s.transition(n).mapping
        steps = [factor(k)[0].transition(n).mapping for k in range(n + 1)]
        out = {}
        for x, ys in prod.level(n + 1):
            out[(x, ys)] = (step[x], tuple(steps[k][ys[k]] for k in range(n + 1)))
        return out

    prod = Tower(level_fn, transition_fn, surjective_from=surjective_from, stable_from=stable_from, rule=("slice_product", {"base": s}), name=f"prod_over({s.name})")
    proj = TowerMorphism(prod, s, lambda j: {e: e[0] for e in prod.level(j)}, name="cover")
    prod.factor = factor
    if depth is not None:
        for n in range(depth + 1):
            prod.level(n)
    return prod, proj


def factor_projection(prod: Tower, k: int) -> TowerMorphism:
    """The projection from a slice product onto its ``k``-th factor (reindexed to depth ``>= k``)."""
    t_k, _ = prod.factor(k)

    def reindex(j: int) -> int:
        return max(j, k)

    def level_map(j: int) -> Dict[Label, Label]:
        n = reindex(j)
        return {e: t_k.down(e[1][k], n, j) for e in prod.level(n)}

    return TowerMorphism(prod, t_k, level_map, None if k == 0 else reindex, name=f"factor{k}")
