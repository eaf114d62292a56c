"""Acyclic alkane molecular graphs.

Covers the molecule-handling layer of the toolkit: a minimal SMILES parser
restricted to the alkane grammar (carbon atoms and parenthesised branches,
nothing else), a deterministic tree canonicaliser, exhaustive isomer
enumeration by single-carbon addition, and the topological descriptors the
synthetic property oracle consumes.

Molecule identity throughout the package is the canonical SMILES string
produced by :func:`to_canonical_smiles`: two graphs map to the same string
exactly when they are isomorphic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NewType, Sequence

MAX_VALENCE = 4

# Memory guard for enumeration; one level beyond the 19-carbon target space
# already holds ~366k isomers.
DEFAULT_MAX_CARBONS = 19

CanonicalSmiles = NewType("CanonicalSmiles", str)


class SmilesError(ValueError):
    """Input string falls outside the supported alkane SMILES grammar."""


class GraphError(ValueError):
    """Molecular graph violates the alkane-tree structure expected here."""


class EnumerationLimitError(ValueError):
    """Requested carbon count exceeds the configured enumeration limit."""


@dataclass(frozen=True)
class Atom:
    """Heavy atom with its heavy-neighbour count and implicit hydrogens."""

    element: str
    heavy_degree: int
    h_count: int


@dataclass(frozen=True)
class Bond:
    """Undirected bond; endpoints stored low index first."""

    endpoints: tuple[int, int]
    order: int = 1

    def __post_init__(self) -> None:
        i, j = self.endpoints
        if i == j:
            raise GraphError(f"self-loop bond on vertex {i}")
        if i > j:
            object.__setattr__(self, "endpoints", (j, i))


class MolecularGraph:
    """Labeled undirected graph of heavy atoms.

    Instances built by :func:`parse_smiles` and :func:`enumerate_alkanes` are
    alkane trees: all-carbon, connected, acyclic, maximum degree 4, with
    ``h_count = 4 - heavy_degree`` on every vertex. The constructor accepts
    more general vertex labels and bond orders so that kernel code can be
    exercised on non-alkane inputs.
    """

    __slots__ = ("vertices", "edges", "adjacency", "_canonical")

    def __init__(self, vertices: Sequence[Atom], edges: Sequence[Bond]):
        n = len(vertices)
        adjacency: list[list[int]] = [[] for _ in range(n)]
        seen: set[tuple[int, int]] = set()
        for bond in edges:
            i, j = bond.endpoints
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"bond {bond.endpoints} references missing vertex")
            if (i, j) in seen:
                raise GraphError(f"duplicate bond {bond.endpoints}")
            seen.add((i, j))
            adjacency[i].append(j)
            adjacency[j].append(i)
        for idx, atom in enumerate(vertices):
            if atom.heavy_degree != len(adjacency[idx]):
                raise GraphError(
                    f"vertex {idx}: heavy_degree {atom.heavy_degree} does not "
                    f"match adjacency count {len(adjacency[idx])}"
                )
        self.vertices = tuple(vertices)
        self.edges = tuple(edges)
        self.adjacency = tuple(tuple(nb) for nb in adjacency)
        self._canonical: str | None = None

    @classmethod
    def from_adjacency(
        cls, neighbors: Sequence[Sequence[int]], element: str = "C"
    ) -> "MolecularGraph":
        """Build a single-bonded graph of one element from neighbour lists."""
        vertices = [
            Atom(element, len(nb), max(0, MAX_VALENCE - len(nb))) for nb in neighbors
        ]
        edges = [
            Bond((i, j))
            for i, nb in enumerate(neighbors)
            for j in nb
            if i < j
        ]
        return cls(vertices, edges)

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"MolecularGraph({len(self.vertices)} atoms, {len(self.edges)} bonds)"

    def bond_order(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        for bond in self.edges:
            if bond.endpoints == (i, j):
                return bond.order
        raise GraphError(f"no bond between {i} and {j}")

    def is_alkane_tree(self) -> bool:
        n = len(self.vertices)
        if n == 0 or len(self.edges) != n - 1:
            return False
        if not _is_connected(self.adjacency):
            return False
        return all(
            a.element == "C" and 1 <= len(self.adjacency[i]) <= MAX_VALENCE
            for i, a in enumerate(self.vertices)
        ) or n == 1


@dataclass(frozen=True)
class Descriptors:
    """Topological descriptors feeding the synthetic property oracle."""

    n_carbons: int
    wiener_index: int
    n_methyl: int


def _is_connected(adjacency: Sequence[Sequence[int]]) -> bool:
    n = len(adjacency)
    if n == 0:
        return False
    seen = [False] * n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        v = stack.pop()
        for u in adjacency[v]:
            if not seen[u]:
                seen[u] = True
                count += 1
                stack.append(u)
    return count == n


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string in the restricted alkane grammar.

    Accepted tokens are ``C`` (an sp3 carbon), ``(`` and ``)``. Everything
    else, including ring-closure digits, aromatic atoms, charges and
    multi-bond symbols, raises :class:`SmilesError`, as do unbalanced or
    empty branches and any vertex whose degree would exceed 4.
    """
    stripped = text.strip()
    if not stripped:
        raise SmilesError("empty SMILES string")

    neighbors: list[list[int]] = []
    anchor: int | None = None
    # Stack entries are the anchor in force when the branch opened; popping
    # back to an unchanged anchor means the branch added no atom.
    stack: list[int | None] = []

    for pos, ch in enumerate(stripped):
        if ch == "C":
            neighbors.append([])
            new = len(neighbors) - 1
            if anchor is not None:
                if len(neighbors[anchor]) >= MAX_VALENCE:
                    raise SmilesError(
                        f"vertex exceeds valence {MAX_VALENCE} at position {pos}"
                    )
                neighbors[anchor].append(new)
                neighbors[new].append(anchor)
            anchor = new
        elif ch == "(":
            if anchor is None:
                raise SmilesError(f"branch opened before any atom at position {pos}")
            stack.append(anchor)
        elif ch == ")":
            if not stack:
                raise SmilesError(f"unbalanced ')' at position {pos}")
            parent = stack.pop()
            if anchor == parent:
                raise SmilesError(f"empty branch closing at position {pos}")
            anchor = parent
        elif ch.isdigit() or ch == "%":
            raise SmilesError(f"ring-closure token {ch!r} not supported (position {pos})")
        elif ch in "=#$:":
            raise SmilesError(f"multi-bond token {ch!r} not supported (position {pos})")
        elif ch in "cbnops":
            raise SmilesError(f"aromatic atom {ch!r} not supported (position {pos})")
        else:
            raise SmilesError(f"unsupported token {ch!r} at position {pos}")

    if stack:
        raise SmilesError("unbalanced '(': branch never closed")
    return MolecularGraph.from_adjacency(neighbors)


def _tree_centroids(neighbors: Sequence[Sequence[int]]) -> list[int]:
    """Centroid vertex (or adjacent pair) minimising the largest component
    left after removal. Iterative to keep deep chains cheap."""
    n = len(neighbors)
    if n == 1:
        return [0]
    order: list[int] = []
    parent = [-1] * n
    stack = [0]
    visited = [False] * n
    visited[0] = True
    while stack:
        v = stack.pop()
        order.append(v)
        for u in neighbors[v]:
            if not visited[u]:
                visited[u] = True
                parent[u] = v
                stack.append(u)
    size = [1] * n
    for v in reversed(order):
        if parent[v] >= 0:
            size[parent[v]] += size[v]
    best = n + 1
    centroids: list[int] = []
    for v in range(n):
        heaviest = n - size[v]
        for u in neighbors[v]:
            if u != parent[v]:
                heaviest = max(heaviest, size[u])
        if heaviest < best:
            best = heaviest
            centroids = [v]
        elif heaviest == best:
            centroids.append(v)
    return centroids


def _rooted_encoding(
    root: int, neighbors: Sequence[Sequence[int]]
) -> tuple[str, dict[int, str]]:
    """AHU parenthesis encoding of the tree rooted at ``root``.

    Returns the root code and a per-vertex code table used to order children
    during SMILES emission. Children codes are sorted, so the encoding is
    invariant under vertex relabeling.
    """
    codes: dict[int, str] = {}
    # Post-order without recursion: (vertex, parent, expanded?)
    stack: list[tuple[int, int, bool]] = [(root, -1, False)]
    while stack:
        v, par, expanded = stack.pop()
        if not expanded:
            stack.append((v, par, True))
            for u in neighbors[v]:
                if u != par:
                    stack.append((u, v, False))
        else:
            child_codes = sorted(codes[u] for u in neighbors[v] if u != par)
            codes[v] = "(" + "".join(child_codes) + ")"
    return codes[root], codes


def _canonical_root(neighbors: Sequence[Sequence[int]]) -> tuple[int, dict[int, str]]:
    centroids = _tree_centroids(neighbors)
    best_root = -1
    best_code = None
    best_codes: dict[int, str] = {}
    for c in sorted(centroids):
        code, codes = _rooted_encoding(c, neighbors)
        if best_code is None or code < best_code:
            best_code = code
            best_root = c
            best_codes = codes
    return best_root, best_codes


def _emit_smiles(
    root: int, neighbors: Sequence[Sequence[int]], codes: dict[int, str]
) -> str:
    """Depth-first SMILES emission from the canonical root.

    Children are visited in sorted encoding order; every child except the
    last is parenthesised. Equal encodings emit equal substrings, so the
    result depends only on the isomorphism class.
    """
    out: list[str] = []
    # (vertex, parent) work items interleaved with literal tokens.
    work: list[object] = [(root, -1)]
    while work:
        item = work.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        v, par = item  # type: ignore[misc]
        out.append("C")
        children = sorted(
            (u for u in neighbors[v] if u != par), key=codes.__getitem__
        )
        pending: list[object] = []
        for u in children[:-1]:
            pending.append("(")
            pending.append((u, v))
            pending.append(")")
        if children:
            pending.append((children[-1], v))
        work.extend(reversed(pending))
    return "".join(out)


def _canonical_from_neighbors(neighbors: Sequence[Sequence[int]]) -> str:
    root, codes = _canonical_root(neighbors)
    return _emit_smiles(root, neighbors, codes)


def to_canonical_smiles(g: MolecularGraph) -> CanonicalSmiles:
    """Canonical SMILES for an alkane tree.

    Deterministic: isomorphic graphs yield byte-identical strings,
    non-isomorphic graphs yield distinct strings. The root is the tree
    centroid; between two centroids the lexicographically smaller rooted
    encoding wins.
    """
    if g._canonical is not None:
        return CanonicalSmiles(g._canonical)
    n = len(g.vertices)
    if n == 0:
        raise GraphError("empty graph has no canonical form")
    if len(g.edges) != n - 1 or not _is_connected(g.adjacency):
        raise GraphError("canonical SMILES requires a connected acyclic graph")
    text = _canonical_from_neighbors(g.adjacency)
    g._canonical = text
    return CanonicalSmiles(text)


def descriptors(g: MolecularGraph) -> Descriptors:
    """Carbon count, Wiener index and methyl-group count of an alkane tree."""
    n = len(g.vertices)
    total = 0
    # BFS from every vertex; n <= 19 keeps the quadratic walk trivial.
    for src in range(n):
        dist = [-1] * n
        dist[src] = 0
        queue = [src]
        head = 0
        while head < len(queue):
            v = queue[head]
            head += 1
            for u in g.adjacency[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        total += sum(dist)
    n_methyl = sum(1 for nb in g.adjacency if len(nb) == 1)
    return Descriptors(n_carbons=n, wiener_index=total // 2, n_methyl=n_methyl)


def _grow_by_one(neighbors: list[list[int]]) -> Iterable[str]:
    """Canonical strings of all distinct single-carbon extensions."""
    n = len(neighbors)
    seen_here: set[str] = set()
    for site in range(n):
        if len(neighbors[site]) >= MAX_VALENCE:
            continue
        neighbors.append([site])
        neighbors[site].append(n)
        text = _canonical_from_neighbors(neighbors)
        neighbors[site].pop()
        neighbors.pop()
        if text not in seen_here:
            seen_here.add(text)
            yield text


def _neighbors_from_smiles(text: str) -> list[list[int]]:
    return [list(nb) for nb in parse_smiles(text).adjacency]


def enumerate_alkane_smiles(
    min_n: int, max_n: int, *, hard_limit: int = DEFAULT_MAX_CARBONS
) -> list[CanonicalSmiles]:
    """Canonical SMILES of every alkane isomer with ``min_n..max_n`` carbons.

    Level-by-level atom addition: isomers with n carbons are generated by
    attaching one carbon to every sub-valent site of every (n-1)-carbon
    isomer, deduplicated through the canonical string. Output is sorted by
    carbon count, then canonical string, and is independent of generation
    order.
    """
    if not (1 <= min_n <= max_n):
        raise ValueError(f"need 1 <= min_n <= max_n, got ({min_n}, {max_n})")
    if max_n > hard_limit:
        raise EnumerationLimitError(
            f"max_n={max_n} exceeds the enumeration limit {hard_limit}"
        )
    level = ["C"]
    out: list[CanonicalSmiles] = []
    if min_n == 1:
        out.extend(CanonicalSmiles(s) for s in level)
    for n in range(2, max_n + 1):
        next_level: set[str] = set()
        for parent in level:
            next_level.update(_grow_by_one(_neighbors_from_smiles(parent)))
        level = sorted(next_level)
        if n >= min_n:
            out.extend(CanonicalSmiles(s) for s in level)
    return out


def enumerate_alkanes(
    min_n: int, max_n: int, *, hard_limit: int = DEFAULT_MAX_CARBONS
) -> list[MolecularGraph]:
    """Like :func:`enumerate_alkane_smiles` but materialised as graphs."""
    return [parse_smiles(s) for s in enumerate_alkane_smiles(min_n, max_n, hard_limit=hard_limit)]
