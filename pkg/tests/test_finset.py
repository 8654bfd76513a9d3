from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from profinite_lab.finset import (
    CompositionError,
    FinMap,
    FinSet,
    FinSetError,
    binary_split_chain,
    compose,
    image_and_fibres,
    label_from_json,
    label_to_json,
    sort_labels,
)
from profinite_lab.tower import INF

labels = st.recursive(
    st.one_of(st.integers(-5, 20), st.sampled_from(["a", "b", INF, "*"])),
    lambda inner: st.tuples(inner, inner),
    max_leaves=4,
)


def all_maps(dom: FinSet, cod: FinSet):
    d = list(dom)
    for values in itertools.product(list(cod), repeat=len(d)):
        yield FinMap(dom, cod, dict(zip(d, values)))


def test_duplicates_rejected():
    with pytest.raises(FinSetError):
        FinSet([1, 1])


def test_map_must_cover_domain_and_land_in_codomain():
    a, b = FinSet([0, 1]), FinSet(["x"])
    with pytest.raises(FinSetError):
        FinMap(a, b, {0: "x"})
    with pytest.raises(FinSetError):
        FinMap(a, b, {0: "x", 1: "y"})


def test_compose_identity():
    a, b = FinSet([0, 1, 2]), FinSet(["x", "y"])
    f = FinMap(a, b, {0: "x", 1: "y", 2: "x"})
    assert compose(FinMap.identity(b), f) == f
    assert compose(f, FinMap.identity(a)) == f


def test_constant_maps_compose_to_constant():
    f = FinMap.constant(FinSet(["a", "b"]), FinSet(["x"]), "x")
    g = FinMap.constant(FinSet(["x"]), FinSet(["y"]), "y")
    assert compose(g, f) == FinMap.constant(FinSet(["a", "b"]), FinSet(["y"]), "y")


def test_compose_mismatch():
    f = FinMap.identity(FinSet([0]))
    g = FinMap.identity(FinSet([1]))
    with pytest.raises(CompositionError):
        compose(g, f)


def test_associativity_exhaustive():
    sets = [FinSet(range(n)) for n in range(1, 4)]
    for a, b, c, d in itertools.product(sets[:2], sets, sets[:2], sets[:2]):
        for f in all_maps(a, b):
            for g in all_maps(b, c):
                for h in all_maps(c, d):
                    assert compose(h, compose(g, f)) == compose(compose(h, g), f)


def test_image_and_fibres_examples():
    f = FinMap.constant(FinSet(["a", "b"]), FinSet(["x", "z"]), "x")
    image, fibres = image_and_fibres(f)
    assert image == {"x"} and fibres["x"] == {"a", "b"}
    ident = FinMap.identity(FinSet(range(4)))
    image, fibres = image_and_fibres(ident)
    assert image == set(range(4)) and all(len(v) == 1 for v in fibres.values())


@given(st.integers(1, 5), st.integers(1, 5), st.data())
def test_fibres_partition_domain(n, m, data):
    dom, cod = FinSet(range(n)), FinSet(range(m))
    f = FinMap(dom, cod, {x: data.draw(st.integers(0, m - 1)) for x in range(n)})
    image, fibres = image_and_fibres(f)
    union = set()
    for y in image:
        assert not union & fibres[y]
        union |= fibres[y]
    assert union == set(range(n))


def test_binary_split_chain_small():
    assert binary_split_chain(FinSet(["a"])) == []
    chain = binary_split_chain(FinSet(["a", "b"]))
    assert len(chain) == 1 and len(chain[0].cod) == 1 and len(chain[0].dom) == 2
    with pytest.raises(FinSetError):
        binary_split_chain(FinSet())


@pytest.mark.parametrize("n", range(1, 17))
def test_binary_split_chain_lengths(n):
    chain = binary_split_chain(FinSet(range(n)))
    assert len(chain) == (n - 1).bit_length()
    for step in chain:
        _, fibres = image_and_fibres(step)
        assert all(1 <= len(v) <= 2 for v in fibres.values())
        assert step.is_surjective()
    for first, second in zip(chain, chain[1:]):
        assert second.dom == first.cod
    if chain:
        assert chain[0].dom == FinSet(range(n)) and len(chain[-1].cod) == 1


@given(labels)
def test_label_json_round_trip(x):
    assert label_from_json(json.loads(json.dumps(label_to_json(x)))) == x


@given(st.lists(labels, max_size=8, unique=True))
def test_order_stable_under_round_trip(xs):
    a = FinSet(xs)
    back = FinSet.from_json(json.loads(json.dumps(a.to_json())))
    assert back == a
    assert tuple(back) == tuple(a) == sort_labels(xs)


def test_finmap_json_round_trip():
    f = FinMap(FinSet([(0, INF), 1]), FinSet(["x", "y"]), {(0, INF): "x", 1: "y"})
    assert FinMap.from_json(json.loads(json.dumps(f.to_json()))) == f
