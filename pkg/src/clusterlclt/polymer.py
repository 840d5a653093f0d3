"""Polymers, incompatibility graphs, Ursell coefficients and spanning trees."""

from __future__ import annotations

import itertools
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .errors import SizeError
from .model import ModelInstance, Site

POLYMER_SUPPORT_CAP = 8
URSELL_CAP = 12
BRUTE_EDGE_CAP = 20
TREE_CAP = 8
KEY_CAP = 8
TERM_CAP = 10**7


# ---------------------------------------------------------------------------
# Polymers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Polymer:
    """Connected set of bonds {x, y} and singletons {x}; ``support`` is the union of their sites."""

    sort_key: tuple = field(init=False, repr=False, compare=True)
    bonds: frozenset = field(compare=False)
    singletons: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        bonds = frozenset(frozenset(tuple(s) for s in b) for b in self.bonds)
        singles = frozenset(tuple(s) for s in self.singletons)
        if any(len(b) != 2 for b in bonds):
            raise ValueError("a bond joins two distinct sites")
        if not bonds and not singles:
            raise ValueError("a polymer is nonempty")
        object.__setattr__(self, "bonds", bonds)
        object.__setattr__(self, "singletons", singles)
        if not _connected(list(bonds) + [frozenset([x]) for x in singles]):
            raise ValueError("polymer constituents do not form a connected chain of overlapping sets")
        object.__setattr__(
            self,
            "sort_key",
            (len(self.support), tuple(sorted(self.support)), tuple(sorted(tuple(sorted(b)) for b in bonds)),
             tuple(sorted(singles))),
        )

    @property
    def support(self) -> frozenset:
        out = set(self.singletons)
        for b in self.bonds:
            out |= b
        return frozenset(out)

    @property
    def kind(self) -> str:
        if not self.bonds and len(self.singletons) == 1:
            return "R1"
        if not self.singletons:
            return "R2"
        return "general"

    def sorted_bonds(self) -> list[tuple[Site, Site]]:
        return sorted(tuple(sorted(b)) for b in self.bonds)

    def __repr__(self) -> str:
        parts = [f"{{{a},{b}}}" for a, b in self.sorted_bonds()] + [f"{{{x}}}" for x in sorted(self.singletons)]
        return f"Polymer({' '.join(parts)})"


def _connected(sets: Sequence[frozenset]) -> bool:
    if not sets:
        return False
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(len(sets)):
            if j not in seen and sets[i] & sets[j]:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(sets)


def singleton(x: Site) -> Polymer:
    return Polymer(bonds=frozenset(), singletons=frozenset([tuple(x)]))


def bond_polymer(bonds: Iterable[Sequence[Site]], singletons: Iterable[Site] = ()) -> Polymer:
    return Polymer(bonds=frozenset(frozenset(map(tuple, b)) for b in bonds), singletons=frozenset(map(tuple, singletons)))


def _edges_connected_spanning(vertices: Sequence, edges: Sequence[tuple]) -> bool:
    parent = {v: v for v in vertices}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    comps = len(vertices)
    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            comps -= 1
    return comps == 1


def connected_vertex_sets(
    sites: Sequence[Site],
    adjacent: Callable[[Site, Site], bool],
    max_size: int,
    root: Site | None = None,
) -> list[tuple[Site, ...]]:
    """All connected site subsets (size >= 2, <= max_size), optionally containing ``root``."""
    sites = sorted(set(map(tuple, sites)))
    nbrs = {x: [y for y in sites if y != x and adjacent(x, y)] for x in sites}
    seeds = [tuple(root)] if root is not None else sites
    found: set[frozenset] = set()
    frontier = {frozenset([s]) for s in seeds}
    for _ in range(max_size - 1):
        nxt = set()
        for S in frontier:
            for x in S:
                for y in nbrs[x]:
                    if y not in S:
                        T = S | {y}
                        if T not in found:
                            nxt.add(T)
        found |= nxt
        frontier = nxt
    return sorted((tuple(sorted(S)) for S in found), key=lambda s: (len(s), s))


def bond_sets_on(support: Sequence[Site], coupling: Callable[[Site, Site], float]) -> list[Polymer]:
    """All connected spanning bond sets of the coupling graph induced on ``support``."""
    support = tuple(sorted(support))
    edges = [(x, y) for x, y in itertools.combinations(support, 2) if coupling(x, y) != 0.0]
    m = len(support)
    if len(edges) > 24:
        raise SizeError(f"support of size {m} induces {len(edges)} bonds; bond-subset enumeration is capped at 24")
    out = []
    for r in range(m - 1, len(edges) + 1):
        for sub in itertools.combinations(edges, r):
            if _edges_connected_spanning(support, sub):
                out.append(bond_polymer(sub))
    return out


def enumerate_polymers(model: ModelInstance, max_support: int, cap: int = POLYMER_SUPPORT_CAP) -> list[Polymer]:
    """All bond-only polymers on the diluted volume with support size <= max_support."""
    if max_support > cap:
        raise SizeError(f"max_support={max_support} exceeds the polymer support cap of {cap}")
    if max_support < 2:
        return []
    J = model.couplings
    sites = model.volume.diluted_sites
    out: list[Polymer] = []
    for S in connected_vertex_sets(sites, lambda x, y: J.J(x, y) != 0.0, max_support):
        out.extend(bond_sets_on(S, J.J))
    return sorted(out)


def enumerate_singletons(model: ModelInstance) -> list[Polymer]:
    return [singleton(x) for x in model.volume.diluted_sites]


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IncompatibilityGraph:
    n: int
    edges: frozenset

    def __post_init__(self):
        clean = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise ValueError("incompatibility graphs have no self-loops")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {e} has a vertex outside 0..{self.n - 1}")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "IncompatibilityGraph":
        return cls(n, frozenset(tuple(e) for e in edges))

    @classmethod
    def complete(cls, n: int) -> "IncompatibilityGraph":
        return cls(n, frozenset(itertools.combinations(range(n), 2)))

    @classmethod
    def path(cls, n: int) -> "IncompatibilityGraph":
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def of_polymers(cls, polymers: Sequence[Polymer]) -> "IncompatibilityGraph":
        sup = [p.support for p in polymers]
        return cls(len(sup), frozenset((i, j) for i, j in itertools.combinations(range(len(sup)), 2) if sup[i] & sup[j]))

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> list[set[int]]:
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def is_connected(self) -> bool:
        if self.n == 0:
            return False
        return _edges_connected_spanning(range(self.n), self.edges)

    def relabel(self, perm: Sequence[int]) -> "IncompatibilityGraph":
        """Graph with vertex v renamed perm[v]."""
        return IncompatibilityGraph(self.n, frozenset((perm[i], perm[j]) for i, j in self.edges))


def parse_edge_list(text: str) -> IncompatibilityGraph:
    """Graph from lines "i j"; blank lines and '#' comments are ignored. Vertices are 0-based
    unless the smallest label is 1."""
    pairs = []
    verts = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 1:
            verts.add(int(parts[0]))
            continue
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {line!r}")
        i, j = int(parts[0]), int(parts[1])
        pairs.append((i, j))
        verts |= {i, j}
    if not verts:
        raise ValueError("empty edge list")
    base = min(verts)
    n = max(verts) - base + 1
    return IncompatibilityGraph.from_edges(n, [(i - base, j - base) for i, j in pairs])


# ---------------------------------------------------------------------------
# Ursell coefficients
# ---------------------------------------------------------------------------


def ursell_direct(g: IncompatibilityGraph, cap: int = URSELL_CAP) -> int:
    """Signed count of connected spanning subgraphs, sum of (-1)^{|E|}.

    Uses the exponential formula on vertex subsets: with A(S) = 1 iff S is
    independent in g (the all-subgraph sum over g[S] factorizes edge by edge
    into prod (1 - 1) = 0 unless g[S] has no edges) and C the connected
    part, A(S) = sum_{T containing min S} C(T) A(S \\ T).  Cost O(3^n).
    """
    n = g.n
    if n > cap:
        raise SizeError(f"graph order {n} exceeds the Ursell cap of {cap}")
    if n == 0:
        raise ValueError("empty graph")
    if n == 1:
        return 1
    if not g.is_connected():
        return 0
    adjm = [0] * n
    for i, j in g.edges:
        adjm[i] |= 1 << j
        adjm[j] |= 1 << i
    full = (1 << n) - 1
    indep = [True] * (1 << n)
    for S in range(1, 1 << n):
        low = S & -S
        v = low.bit_length() - 1
        rest = S ^ low
        indep[S] = indep[rest] and not (adjm[v] & rest)
    C = [0] * (1 << n)
    for S in range(1, 1 << n):
        low = S & -S
        rest = S ^ low
        total = 1 if indep[S] else 0
        # proper subsets T of S that contain the lowest vertex
        sub = (rest - 1) & rest
        while True:
            T = low | sub
            if T != S:
                total -= C[T] * (1 if indep[S ^ T] else 0)
            if sub == 0:
                break
            sub = (sub - 1) & rest
        C[S] = total
    return C[full]


def ursell_bruteforce(g: IncompatibilityGraph, edge_cap: int = BRUTE_EDGE_CAP) -> int:
    """Literal enumeration of all 2^|E| spanning subgraphs."""
    edges = g.sorted_edges()
    if len(edges) > edge_cap:
        raise SizeError(f"{len(edges)} edges exceed the brute-force cap of {edge_cap}")
    if g.n == 1:
        return 1
    total = 0
    for r in range(g.n - 1, len(edges) + 1):
        for sub in itertools.combinations(edges, r):
            if _edges_connected_spanning(range(g.n), sub):
                total += -1 if r % 2 else 1
    return total


def spanning_trees(g: IncompatibilityGraph) -> list[tuple[tuple[int, int], ...]]:
    """All spanning trees of g as sorted edge tuples."""
    edges = g.sorted_edges()
    if g.n == 1:
        return [()]
    return [sub for sub in itertools.combinations(edges, g.n - 1) if _edges_connected_spanning(range(g.n), sub)]


def _is_penrose_tree(tree, adj, rank, root) -> bool:
    n = len(adj)
    tadj = [[] for _ in range(n)]
    for i, j in tree:
        tadj[i].append(j)
        tadj[j].append(i)
    depth = [-1] * n
    parent = [-1] * n
    depth[root] = 0
    queue = [root]
    for v in queue:
        for u in tadj[v]:
            if depth[u] < 0:
                depth[u] = depth[v] + 1
                parent[u] = v
                queue.append(u)
    tset = set(tree)
    for i in range(n):
        for j in adj[i]:
            if j <= i or (i, j) in tset:
                continue
            if depth[i] == depth[j]:
                return False
            a, b = (i, j) if depth[i] < depth[j] else (j, i)
            # b sits one level below a and a outranks b's parent
            if depth[b] == depth[a] + 1 and rank[a] > rank[parent[b]]:
                return False
    return True


def ursell_penrose(g: IncompatibilityGraph, order: Sequence[int] | None = None, cap: int = URSELL_CAP) -> int:
    """Tree-graph evaluation: (-1)^{n-1} times the number of Penrose trees of g.

    ``order`` lists the vertices by priority (the first is the root); the
    result does not depend on it.
    """
    n = g.n
    if n > cap:
        raise SizeError(f"graph order {n} exceeds the Ursell cap of {cap}")
    if n == 1:
        return 1
    if not g.is_connected():
        return 0
    order = list(range(n)) if order is None else list(order)
    if sorted(order) != list(range(n)):
        raise ValueError("order must be a permutation of the vertices")
    rank = [0] * n
    for r, v in enumerate(order):
        rank[v] = r
    adj = g.adjacency()
    count = sum(1 for tree in spanning_trees(g) if _is_penrose_tree(tree, adj, rank, order[0]))
    return (-1) ** (n - 1) * count


def monomer_ursell(n: int, cap: int = 20) -> int:
    """(-1)^{n-1} (n-1)!, the coefficient of the complete graph K_n."""
    if n < 1:
        raise ValueError("n must be positive")
    if n > cap:
        raise SizeError(f"n={n} exceeds the cap of {cap}")
    return (-1) ** (n - 1) * math.factorial(n - 1)


# ---------------------------------------------------------------------------
# Canonical keys and the cache
# ---------------------------------------------------------------------------


def _refine(n: int, adj: list[set[int]]) -> list[int]:
    colors = [len(adj[v]) for v in range(n)]
    while True:
        sig = [(colors[v], tuple(sorted(colors[u] for u in adj[v]))) for v in range(n)]
        palette = {s: k for k, s in enumerate(sorted(set(sig)))}
        new = [palette[s] for s in sig]
        if len(set(new)) == len(set(colors)):
            return new
        colors = new


def canonical_key(g: IncompatibilityGraph, cap: int = KEY_CAP) -> tuple[int, int]:
    """Isomorphism-invariant key (n, minimal adjacency bitstring).

    Colour refinement fixes the class order; the minimum is then taken over
    all orderings within each class, which makes the key exact.
    """
    n = g.n
    if n > cap:
        raise SizeError(f"canonical keys are exact only up to {cap} vertices")
    adj = g.adjacency()
    colors = _refine(n, adj)
    classes = [sorted(v for v in range(n) if colors[v] == c) for c in sorted(set(colors))]
    pairs = list(itertools.combinations(range(n), 2))
    best = None
    for combo in itertools.product(*(itertools.permutations(c) for c in classes)):
        seq = [v for block in combo for v in block]
        pos = {v: k for k, v in enumerate(seq)}
        bits = 0
        for k, (a, b) in enumerate(pairs):
            if seq[b] in adj[seq[a]]:
                bits |= 1 << k
        if best is None or bits < best:
            best = bits
    del pos
    return n, best


class UrsellTable:
    """Cache of Ursell coefficients keyed by canonical graph keys.

    Reads are lock-free; a miss computes outside the lock and inserts with
    setdefault, so concurrent misses on one key are harmless.
    """

    def __init__(self):
        self._data: dict[tuple[int, int], int] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._data)

    def get(self, g: IncompatibilityGraph) -> int:
        if g.n == 1:
            return 1
        if not g.is_connected():
            return 0
        if g.n > KEY_CAP:
            return ursell_direct(g)
        key = canonical_key(g)
        val = self._data.get(key)
        if val is not None:
            self.hits += 1
            return val
        val = ursell_direct(g)
        with self._lock:
            self.misses += 1
            return self._data.setdefault(key, val)

    def items(self):
        return sorted(self._data.items())


DEFAULT_TABLE = UrsellTable()


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------


def _prufer_decode(seq: Sequence[int], m: int) -> list[tuple[int, int]]:
    degree = [1] * m
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = next(u for u in range(m) if degree[u] == 1)
        edges.append((min(leaf, v), max(leaf, v)))
        degree[leaf] -= 1
        degree[v] -= 1
    u, w = [x for x in range(m) if degree[x] == 1]
    edges.append((u, w))
    return edges


def _orient(edges, vertices, root) -> tuple[tuple, ...]:
    adj = {v: [] for v in vertices}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parent = {root: None}
    queue = [root]
    for v in queue:
        for u in sorted(adj[v]):
            if u not in parent:
                parent[u] = v
                queue.append(u)
    return tuple(sorted((parent[v], v) for v in vertices if v != root))


def rooted_spanning_trees(vertices: Sequence, root, graph_edges: Iterable[Sequence] | None = None,
                          cap: int = TREE_CAP) -> list[tuple[tuple, ...]]:
    """Spanning trees rooted at ``root``, each as sorted (parent, child) pairs.

    Without ``graph_edges`` the complete graph on ``vertices`` is used.
    """
    verts = sorted(set(vertices))
    m = len(verts)
    if root not in verts:
        raise ValueError("root must be one of the vertices")
    if m > cap:
        raise SizeError(f"{m} vertices exceed the tree enumeration cap of {cap}")
    if m == 1:
        return [()]
    if graph_edges is None:
        if m == 2:
            raw = [[(0, 1)]]
        else:
            raw = [_prufer_decode(seq, m) for seq in itertools.product(range(m), repeat=m - 2)]
        trees = [_orient([(verts[a], verts[b]) for a, b in e], verts, root) for e in raw]
    else:
        idx = {v: k for k, v in enumerate(verts)}
        g = IncompatibilityGraph.from_edges(m, [(idx[a], idx[b]) for a, b in graph_edges])
        trees = [_orient([(verts[a], verts[b]) for a, b in t], verts, root) for t in spanning_trees(g)]
    return sorted(trees)


def tree_degrees(tree: Sequence[tuple], vertices: Sequence) -> tuple[int, ...]:
    deg = Counter()
    for a, b in tree:
        deg[a] += 1
        deg[b] += 1
    return tuple(deg[v] for v in sorted(vertices))


def degree_sequence_count(degrees: Sequence[int]) -> int:
    """Labeled trees on m vertices with the given degrees: (m-2)!/prod (d_i - 1)!."""
    m = len(degrees)
    if m == 1:
        return 1 if degrees[0] == 0 else 0
    if any(d < 1 for d in degrees) or sum(degrees) != 2 * (m - 1):
        return 0
    out = math.factorial(m - 2)
    for d in degrees:
        out //= math.factorial(d - 1)
    return out


def degree_sequences(m: int) -> Iterable[tuple[int, ...]]:
    """All degree sequences (d_1..d_m), d_i >= 1, summing to 2(m-1)."""
    if m == 1:
        yield (0,)
        return
    excess = m - 2

    def rec(k, left):
        if k == m - 1:
            yield (left + 1,)
            return
        for e in range(left + 1):
            for tail in rec(k + 1, left - e):
                yield (e + 1,) + tail

    yield from rec(0, excess)


# ---------------------------------------------------------------------------
# Clusters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    ursell: int
    multiplicity: int

    @property
    def order(self) -> int:
        return len(self.members)

    @property
    def coefficient(self) -> Fraction:
        """multiplicity * ursell / n!, the weight of the multiset in the ordered sum."""
        return Fraction(self.multiplicity * self.ursell, math.factorial(self.order))


def multiset_multiplicity(members: Sequence[int]) -> int:
    out = math.factorial(len(members))
    for c in Counter(members).values():
        out //= math.factorial(c)
    return out


def cluster_enumeration(
    polymers: Sequence[Polymer],
    n_max: int = 4,
    term_cap: int = TERM_CAP,
    table: UrsellTable | None = None,
) -> list[Cluster]:
    """Multisets of <= n_max polymers with connected incompatibility graph.

    Each multiset is grown from a smaller connected one by adding a polymer
    that overlaps one of its members, which reaches every connected multiset.
    """
    table = table or DEFAULT_TABLE
    sup = [p.support for p in polymers]
    P = len(polymers)
    overlap = [[j for j in range(P) if sup[i] & sup[j]] for i in range(P)]
    level = {(i,) for i in range(P)}
    out: list[Cluster] = []
    terms = 0
    for n in range(1, n_max + 1):
        if n > 1:
            nxt = set()
            for M in level:
                cand = set()
                for i in set(M):
                    cand.update(overlap[i])
                for j in cand:
                    nxt.add(tuple(sorted(M + (j,))))
                    if len(nxt) > term_cap:
                        raise SizeError(f"cluster enumeration exceeded the term cap of {term_cap}")
            level = nxt
        terms += len(level)
        if terms > term_cap:
            raise SizeError(f"cluster enumeration exceeded the term cap of {term_cap}")
        for M in sorted(level):
            g = IncompatibilityGraph.of_polymers([polymers[i] for i in M])
            out.append(Cluster(M, table.get(g), multiset_multiplicity(M)))
    return out


def ordered_cluster_sum(polymers: Sequence[Polymer], weights: Sequence, n_max: int):
    """Reference sum over ordered tuples: sum_n 1/n! sum_{(R_1..R_n)} omega(G) prod w(R_i)."""
    total = Fraction(0)
    P = len(polymers)
    for n in range(1, n_max + 1):
        acc = Fraction(0)
        for tup in itertools.product(range(P), repeat=n):
            g = IncompatibilityGraph.of_polymers([polymers[i] for i in tup])
            if not g.is_connected():
                continue
            prod = Fraction(1)
            for i in tup:
                prod *= weights[i]
            acc += ursell_direct(g) * prod
        total += acc / math.factorial(n)
    return total
