import itertools
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterlclt.errors import SizeError
from clusterlclt.model import CouplingField, SingleSiteMeasure, chain_volume
from clusterlclt.polymer import (
    IncompatibilityGraph,
    UrsellTable,
    bond_polymer,
    canonical_key,
    cluster_enumeration,
    degree_sequence_count,
    degree_sequences,
    enumerate_polymers,
    monomer_ursell,
    multiset_multiplicity,
    ordered_cluster_sum,
    parse_edge_list,
    rooted_spanning_trees,
    singleton,
    tree_degrees,
    ursell_bruteforce,
    ursell_direct,
    ursell_penrose,
)

from conftest import make_model


def random_connected(n, rng, p=0.5):
    while True:
        edges = [e for e in itertools.combinations(range(n), 2) if rng.random() < p]
        g = IncompatibilityGraph.from_edges(n, edges)
        if g.is_connected():
            return g


def all_connected(n):
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        g = IncompatibilityGraph.from_edges(n, [p for i, p in enumerate(pairs) if mask >> i & 1])
        if g.is_connected():
            yield g


def test_enumerate_polymers_chain():
    m = make_model(chain_volume(3), CouplingField.nearest_neighbor(1.0, 1), SingleSiteMeasure.ising())
    two = enumerate_polymers(m, 2)
    assert [p.sorted_bonds() for p in two] == [[((0,), (1,))], [((1,), (2,))]]
    three = enumerate_polymers(m, 3)
    assert len(three) == 3
    assert three[-1].sorted_bonds() == [((0,), (1,)), ((1,), (2,))]
    assert enumerate_polymers(make_model(chain_volume(3)), 3) == []


def test_polymer_validation():
    p = bond_polymer([((0,), (1,))], [(1,)])
    assert p.support == frozenset({(0,), (1,)})
    with pytest.raises(ValueError):
        bond_polymer([((0,), (1,)), ((3,), (4,))])
    assert singleton((2,)).kind == "R1"


def test_ursell_small_examples():
    assert ursell_direct(IncompatibilityGraph.complete(1)) == 1
    assert ursell_direct(IncompatibilityGraph.complete(2)) == -1
    assert ursell_direct(IncompatibilityGraph.complete(3)) == 2
    assert ursell_direct(IncompatibilityGraph.path(3)) == 1
    assert ursell_penrose(IncompatibilityGraph.complete(2)) == -1
    assert ursell_penrose(IncompatibilityGraph.complete(4)) == -6
    assert ursell_direct(IncompatibilityGraph.from_edges(3, [(0, 1)])) == 0


def test_monomer_ursell():
    assert [monomer_ursell(n) for n in (1, 3, 5)] == [1, 2, 24]
    assert monomer_ursell(5) == ursell_direct(IncompatibilityGraph.complete(5))


def test_ursell_exhaustive_small():
    for n in range(1, 5):
        for g in all_connected(n):
            d = ursell_direct(g)
            assert d == ursell_penrose(g) == ursell_bruteforce(g)
            assert (-1) ** (n - 1) * d > 0


def test_ursell_random_and_order_invariance():
    rng = random.Random(7)
    for n in (5, 6):
        for _ in range(20):
            g = random_connected(n, rng)
            perm = list(range(n))
            rng.shuffle(perm)
            assert ursell_direct(g) == ursell_penrose(g) == ursell_penrose(g, order=perm)


def test_ursell_cap():
    with pytest.raises(SizeError):
        ursell_direct(IncompatibilityGraph.complete(13))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.randoms(use_true_random=False))
def test_canonical_key_isomorphism_invariant(n, rnd):
    g = random_connected(n, rnd)
    perm = list(range(n))
    rnd.shuffle(perm)
    assert canonical_key(g) == canonical_key(g.relabel(perm))


def test_ursell_table_cache():
    table = UrsellTable()
    g = IncompatibilityGraph.path(4)
    assert table.get(g) == table.get(g.relabel([3, 1, 2, 0])) == -1
    assert table.hits == 1 and table.misses == 1
    assert table.get(IncompatibilityGraph.from_edges(3, [(0, 1)])) == 0


def test_parse_edge_list():
    g = parse_edge_list("1 2\n2 3\n1 3\n")
    assert g.n == 3 and ursell_direct(g) == 2
    with pytest.raises(ValueError):
        parse_edge_list("1 x\n")


def test_tree_counts():
    assert len(rooted_spanning_trees([0, 1], 0)) == 1
    for m in range(1, 8):
        trees = rooted_spanning_trees(list(range(m)), 0)
        assert len(trees) == (m ** (m - 2) if m >= 2 else 1)
        assert len(set(trees)) == len(trees)
    assert len(rooted_spanning_trees(list(range(4)), 0, graph_edges=itertools.combinations(range(4), 2))) == 16


def test_degree_sequence_counts():
    for m in range(2, 8):
        total = sum(degree_sequence_count(d) for d in degree_sequences(m))
        assert total == m ** (m - 2)
        trees = rooted_spanning_trees(list(range(m)), 0)
        counts = {}
        for t in trees:
            key = tree_degrees(t, list(range(m)))
            counts[key] = counts.get(key, 0) + 1
        for degs, c in counts.items():
            assert c == math.factorial(m - 2) // math.prod(math.factorial(d - 1) for d in degs)


def test_cluster_enumeration_examples():
    a = bond_polymer([((0,), (1,))])
    b = bond_polymer([((1,), (2,))])
    far = bond_polymer([((5,), (6,))])
    cl = cluster_enumeration([a], 2)
    assert [(c.members, c.ursell) for c in cl] == [((0,), 1), ((0, 0), -1)]
    assert all(len(set(c.members)) == 1 for c in cluster_enumeration([a, far], 2))
    mixed = [c for c in cluster_enumeration([a, b], 2) if c.members == (0, 1)]
    assert mixed[0].ursell == -1 and mixed[0].multiplicity == 2


def test_cluster_multiplicities_match_ordered_sum():
    polys = [bond_polymer([((0,), (1,))]), bond_polymer([((1,), (2,))]), bond_polymer([((2,), (3,))])]
    w = [Fraction(1, 3), Fraction(-2, 7), Fraction(5, 11)]
    for n_max in (1, 2, 3, 4):
        clusters = cluster_enumeration(polys, n_max)
        total = sum(c.coefficient * math.prod(w[i] for i in c.members) for c in clusters)
        assert total == ordered_cluster_sum(polys, w, n_max)
    assert multiset_multiplicity([0, 0, 1]) == 3
