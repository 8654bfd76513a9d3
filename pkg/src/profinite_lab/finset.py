"""Finite sets and maps between them.

Labels are opaque atoms: ``int``, ``str`` or (nested) tuples of those.
Every set is kept in canonical order (see :func:`label_key`) so that
serialized output is byte-stable.
"""

from __future__ import annotations

from typing import Any, Dict, Hashable, Iterable, List, Mapping, Tuple

Label = Hashable


class FinSetError(ValueError):
    pass


class CompositionError(FinSetError):
    pass


def label_key(label: Label) -> tuple:
    if isinstance(label, bool):
        raise FinSetError(f"booleans are not valid labels: {label!r}")
    if isinstance(label, int):
        return (0, label)
    if isinstance(label, str):
        return (1, label)
    if isinstance(label, tuple):
        return (2, tuple(label_key(x) for x in label))
    raise FinSetError(f"unsupported label type: {label!r}")


def sort_labels(labels: Iterable[Label]) -> Tuple[Label, ...]:
    return tuple(sorted(labels, key=label_key))


def label_to_json(label: Label) -> Any:
    if isinstance(label, tuple):
        return [label_to_json(x) for x in label]
    return label


def label_from_json(data: Any) -> Label:
    if isinstance(data, list):
        return tuple(label_from_json(x) for x in data)
    return data


class FinSet:
    """An ordered finite set of distinct labels."""

    __slots__ = ("elements", "_members")

    def __init__(self, elements: Iterable[Label] = ()):
        elements = tuple(elements)
        members = frozenset(elements)
        if len(members) != len(elements):
            raise FinSetError("duplicate labels in finite set")
        self.elements = sort_labels(elements)
        self._members = members

    def __iter__(self):
        return iter(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, label: Label) -> bool:
        return label in self._members

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FinSet) and self._members == other._members

    def __hash__(self) -> int:
        return hash(self._members)

    def __repr__(self) -> str:
        return "FinSet({%s})" % ", ".join(map(repr, self.elements))

    @property
    def members(self) -> frozenset:
        return self._members

    def issubset(self, other: "FinSet") -> bool:
        return self._members <= other._members

    def to_json(self) -> dict:
        return {"elements": [label_to_json(x) for x in self.elements]}

    @classmethod
    def from_json(cls, data: Mapping) -> "FinSet":
        return cls(label_from_json(x) for x in data["elements"])


class FinMap:
    """A total map between two finite sets."""

    __slots__ = ("dom", "cod", "mapping")

    def __init__(self, dom: FinSet, cod: FinSet, mapping: Mapping[Label, Label], check: bool = True):
        self.dom = dom
        self.cod = cod
        self.mapping: Dict[Label, Label] = dict(mapping)
        if check:
            if self.mapping.keys() != dom.members:
                missing = dom.members - self.mapping.keys()
                extra = self.mapping.keys() - dom.members
                raise FinSetError(f"assignment does not match domain (missing={sorted(missing, key=label_key)[:3]}, extra={sorted(extra, key=label_key)[:3]})")
            for x, y in self.mapping.items():
                if y not in cod:
                    raise FinSetError(f"{x!r} is sent to {y!r}, which is not in the codomain")

    @classmethod
    def identity(cls, a: FinSet) -> "FinMap":
        return cls(a, a, {x: x for x in a}, check=False)

    @classmethod
    def constant(cls, dom: FinSet, cod: FinSet, value: Label) -> "FinMap":
        return cls(dom, cod, {x: value for x in dom})

    def __call__(self, x: Label) -> Label:
        return self.mapping[x]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, FinMap)
            and self.dom == other.dom
            and self.cod == other.cod
            and self.mapping == other.mapping
        )

    def __hash__(self) -> int:
        return hash((self.dom, self.cod, frozenset(self.mapping.items())))

    def __repr__(self) -> str:
        pairs = ", ".join(f"{x!r}->{self.mapping[x]!r}" for x in self.dom)
        return f"FinMap({pairs})"

    def items(self) -> Tuple[Tuple[Label, Label], ...]:
        return tuple((x, self.mapping[x]) for x in self.dom)

    def image(self) -> frozenset:
        return frozenset(self.mapping.values())

    def is_surjective(self) -> bool:
        return len(self.image()) == len(self.cod)

    def is_injective(self) -> bool:
        return len(self.image()) == len(self.dom)

    def to_json(self) -> dict:
        return {
            "dom": self.dom.to_json(),
            "cod": self.cod.to_json(),
            "map": [[label_to_json(x), label_to_json(y)] for x, y in self.items()],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "FinMap":
        dom = FinSet.from_json(data["dom"])
        cod = FinSet.from_json(data["cod"])
        raw = data["map"]
        if isinstance(raw, dict):
            pairs = raw.items()
        else:
            pairs = raw
        return cls(dom, cod, {label_from_json(x): label_from_json(y) for x, y in pairs})


def compose(g: FinMap, f: FinMap) -> FinMap:
    """``g . f``; ``f`` is applied first."""
    if f.cod != g.dom:
        raise CompositionError(f"cannot compose: codomain {f.cod!r} is not domain {g.dom!r}")
    gm = g.mapping
    return FinMap(f.dom, g.cod, {x: gm[y] for x, y in f.mapping.items()}, check=False)


def image_and_fibres(f: FinMap) -> Tuple[frozenset, Dict[Label, frozenset]]:
    buckets: Dict[Label, List[Label]] = {y: [] for y in f.cod}
    for x in f.dom:
        buckets[f.mapping[x]].append(x)
    fibres = {y: frozenset(xs) for y, xs in buckets.items()}
    return f.image(), fibres


def halve(labels: Tuple[Label, ...]) -> Tuple[Tuple[Label, ...], Tuple[Label, ...]]:
    """Split an ordered tuple into its first and second half (first half is the larger)."""
    mid = (len(labels) + 1) // 2
    return labels[:mid], labels[mid:]


def binary_split_chain(a: FinSet) -> List[FinMap]:
    """Surjections ``a = B_0 -> B_1 -> ... -> B_m = {*}`` with fibres of size at most 2.

    ``B_k`` is the partition of ``a`` obtained by halving the ordered label
    list ``m - k`` times; blocks of ``B_k`` (``k >= 1``) are labelled by the
    tuple of their members.  The last step is the top-level halving.
    """
    if not len(a):
        raise FinSetError("the empty set has no split chain")
    # blocks[t] is the partition after t halvings
    partitions = [[a.elements]]
    while any(len(block) > 1 for block in partitions[-1]):
        nxt = []
        for block in partitions[-1]:
            if len(block) == 1:
                nxt.append(block)
            else:
                nxt.extend(halve(block))
        partitions.append(nxt)
    m = len(partitions) - 1

    def stage(k: int) -> Tuple[FinSet, Dict[Label, Label]]:
        # labels of B_k together with the map element -> block label
        blocks = partitions[m - k]
        if k == 0:
            return a, {x: x for x in a}
        owner = {}
        for block in blocks:
            for x in block:
                owner[x] = block
        return FinSet(blocks), owner

    chain = []
    for k in range(m):
        src, src_owner = stage(k)
        dst, dst_owner = stage(k + 1)
        mapping = {}
        for x in a:
            mapping[src_owner[x]] = dst_owner[x]
        chain.append(FinMap(src, dst, mapping))
    return chain
