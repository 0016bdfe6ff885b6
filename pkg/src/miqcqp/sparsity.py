"""Correlative-sparsity graphs, chordal extension, maximal cliques and clique trees."""
from __future__ import annotations

import heapq
from collections import Counter, deque
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .model import MiqcqpInstance

Edge = tuple[int, int]


def _norm(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class CsGraph:
    """Undirected graph with one vertex per continuous variable."""

    n_vertices: int
    edges: frozenset[Edge] = frozenset()

    def __post_init__(self):
        norm = set()
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on vertex {a}")
            if not (0 <= a < self.n_vertices and 0 <= b < self.n_vertices):
                raise ValueError(f"edge ({a}, {b}) outside 0..{self.n_vertices - 1}")
            norm.add(_norm(a, b))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n_vertices)]
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj


@dataclass(frozen=True)
class CliqueDecomposition:
    graph: CsGraph
    extended_edges: frozenset[Edge]
    elimination_order: tuple[int, ...]
    cliques: tuple[tuple[int, ...], ...] = ()
    tree_edges: tuple[tuple[int, int, tuple[int, ...]], ...] = ()
    heuristic: str = "min_degree"

    @property
    def fill_edges(self) -> frozenset[Edge]:
        return self.extended_edges - self.graph.edges

    def clique_sizes(self) -> list[int]:
        return [len(c) for c in self.cliques]

    def containing(self) -> list[list[int]]:
        """For each vertex, the indices of the cliques that contain it."""
        out: list[list[int]] = [[] for _ in range(self.graph.n_vertices)]
        for i, c in enumerate(self.cliques):
            for v in c:
                out[v].append(i)
        return out


def build_cs_graph(instance: MiqcqpInstance) -> CsGraph:
    """Vertices are continuous variables; an edge joins variables sharing a monomial."""
    edges = set()
    for form in instance.forms():
        for (j, k), v in form.quad.items():
            if j != k and v != 0.0:
                edges.add((j, k))
    return CsGraph(instance.n_cont, frozenset(edges))


def _fill_of(v: int, adj: list[set[int]]) -> int:
    nb = sorted(adj[v])
    missing = 0
    for i, a in enumerate(nb):
        row = adj[a]
        for b in nb[i + 1:]:
            if b not in row:
                missing += 1
    return missing


def chordal_extension(graph: CsGraph, heuristic: str = "min_degree") -> CliqueDecomposition:
    """Greedy elimination; ties are broken towards the lowest vertex index.

    Returns a decomposition whose ``cliques`` and ``tree_edges`` are still empty.
    """
    if heuristic not in ("min_degree", "min_fill"):
        raise ValueError(f"unknown heuristic {heuristic!r}")
    n = graph.n_vertices
    adj = graph.adjacency()
    score = (lambda v: len(adj[v])) if heuristic == "min_degree" else (lambda v: _fill_of(v, adj))
    current = [score(v) for v in range(n)]
    heap = [(current[v], v) for v in range(n)]
    heapq.heapify(heap)
    eliminated = [False] * n
    order: list[int] = []
    extended = set(graph.edges)
    while heap:
        s, v = heapq.heappop(heap)
        if eliminated[v] or s != current[v]:
            continue
        eliminated[v] = True
        order.append(v)
        nb = sorted(adj[v])
        for i, a in enumerate(nb):
            for b in nb[i + 1:]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    extended.add((a, b))
        for a in nb:
            adj[a].discard(v)
        touched = set(nb)
        if heuristic == "min_fill":
            for a in nb:
                touched |= adj[a]
        for u in touched:
            if not eliminated[u]:
                new = score(u)
                if new != current[u]:
                    current[u] = new
                    heapq.heappush(heap, (new, u))
    return CliqueDecomposition(graph, frozenset(extended), tuple(order), heuristic=heuristic)


def _later_neighbors(order: Sequence[int], adj: list[set[int]]):
    pos = {v: i for i, v in enumerate(order)}
    later = {v: sorted((u for u in adj[v] if pos[u] > pos[v]), key=pos.__getitem__) for v in order}
    return pos, later


def _is_peo(order: Sequence[int], adj: list[set[int]]) -> bool:
    pos, later = _later_neighbors(order, adj)
    for v in order:
        nb = later[v]
        if len(nb) > 1:
            parent = nb[0]
            if not set(nb[1:]) <= set(later[parent]):
                return False
    return True


def maximal_cliques(decomp: CliqueDecomposition) -> CliqueDecomposition:
    """Fill ``cliques`` from the perfect elimination ordering of the extended graph."""
    n = decomp.graph.n_vertices
    adj = CsGraph(n, decomp.extended_edges).adjacency()
    order = decomp.elimination_order
    if sorted(order) != list(range(n)):
        raise ValueError("elimination order is not a permutation of the vertices")
    if not _is_peo(order, adj):
        raise ValueError("elimination order is not a perfect elimination ordering")
    pos, later = _later_neighbors(order, adj)
    size = {v: len(later[v]) + 1 for v in order}
    dominated = set()
    for u in order:
        if later[u]:
            p = later[u][0]
            if size[u] == size[p] + 1:
                dominated.add(p)
    cliques = [tuple(sorted([v] + later[v])) for v in order if v not in dominated]
    return replace(decomp, cliques=tuple(cliques), tree_edges=())


def clique_tree(decomp: CliqueDecomposition) -> CliqueDecomposition:
    """Maximum-weight spanning forest of the clique intersection graph (Kruskal)."""
    cliques = decomp.cliques
    sets = [set(c) for c in cliques]
    pairs = set()
    for members in decomp.containing():
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                pairs.add((a, b))
    candidates = sorted(((-len(sets[a] & sets[b]), a, b) for a, b in pairs))
    parent = list(range(len(cliques)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree = []
    for w, a, b in candidates:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append((a, b, tuple(sorted(sets[a] & sets[b]))))
    return replace(decomp, tree_edges=tuple(tree))


def decompose(graph: CsGraph, heuristic: str = "min_degree") -> CliqueDecomposition:
    return clique_tree(maximal_cliques(chordal_extension(graph, heuristic)))


@dataclass(frozen=True)
class ChordalityResult:
    chordal: bool
    ordering: tuple[int, ...] = ()
    cycle: tuple[int, ...] = ()

    def __bool__(self):
        return self.chordal


def _mcs_order(n: int, adj: list[set[int]]) -> list[int]:
    """Maximum cardinality search; returns a perfect elimination candidate."""
    weight = [0] * n
    numbered = [False] * n
    heap = [(0, v) for v in range(n)]
    heapq.heapify(heap)
    visit = []
    while heap:
        w, v = heapq.heappop(heap)
        if numbered[v] or -w != weight[v]:
            continue
        numbered[v] = True
        visit.append(v)
        for u in adj[v]:
            if not numbered[u]:
                weight[u] += 1
                heapq.heappush(heap, (-weight[u], u))
    return visit[::-1]


def _chordless_cycle(n: int, adj: list[set[int]]) -> tuple[int, ...]:
    for v in range(n):
        nb = sorted(adj[v])
        for i, a in enumerate(nb):
            for b in nb[i + 1:]:
                if b in adj[a]:
                    continue
                blocked = (adj[v] | {v}) - {a, b}
                prev = {a: None}
                queue = deque([a])
                while queue and b not in prev:
                    u = queue.popleft()
                    for w in sorted(adj[u]):
                        if w not in prev and w not in blocked:
                            prev[w] = u
                            queue.append(w)
                if b in prev:
                    path = [b]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return (v, *path[::-1])
    return ()


def is_chordal(edges: Iterable[Edge], n: int) -> ChordalityResult:
    """Chordality test with a certificate.

    On success ``ordering`` is a perfect elimination ordering; otherwise
    ``cycle`` lists the vertices of a chordless cycle of length at least four.
    """
    adj = CsGraph(n, frozenset(edges)).adjacency()
    order = _mcs_order(n, adj)
    if _is_peo(order, adj):
        return ChordalityResult(True, ordering=tuple(order))
    return ChordalityResult(False, cycle=_chordless_cycle(n, adj))


def term_components(clique: Sequence[int], pairs: Iterable[Edge]) -> list[tuple[int, ...]]:
    """Split ``clique`` into connected components of its term graph.

    ``pairs`` are the (j, k) index pairs, diagonal included, that occur in some
    problem term.  Vertices touched by no term at all stay in singleton blocks.
    """
    members = set(clique)
    adj = {v: set() for v in clique}
    for a, b in pairs:
        if a != b and a in members and b in members:
            adj[a].add(b)
            adj[b].add(a)
    seen, comps = set(), []
    for v in sorted(clique):
        if v in seen:
            continue
        stack, comp = [v], []
        seen.add(v)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(tuple(sorted(comp)))
    return comps


def report(decomp: CliqueDecomposition) -> str:
    """Plain-text summary: fill edges, clique-size histogram and block count."""
    lines = [f"vertices: {decomp.graph.n_vertices}",
             f"edges: {len(decomp.graph.edges)}",
             f"heuristic: {decomp.heuristic}",
             f"fill edges ({len(decomp.fill_edges)}): "
             + " ".join(f"({a},{b})" for a, b in sorted(decomp.fill_edges)),
             f"blocks: {len(decomp.cliques)}",
             f"max block size: {max(decomp.clique_sizes(), default=0)}",
             "clique size histogram:"]
    for size, count in sorted(Counter(decomp.clique_sizes()).items()):
        lines.append(f"  {size:4d}: {count}")
    lines.append(f"tree edges: {len(decomp.tree_edges)}")
    return "\n".join(lines)
