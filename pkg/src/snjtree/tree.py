"""Unrooted bifurcating trees over labeled terminal nodes.

A :class:`Topology` stores the shape of an unrooted binary tree: ``m``
terminal nodes of degree 1 (the taxa, labeled), and ``m - 2`` anonymous
internal nodes of degree 3.  Node ids are integers: leaves occupy
``0 .. m-1`` in label order, internal nodes follow.

The module also provides the structural queries the reconstruction and
benchmark layers need (clans, depth, diameter, cherries), bipartition-based
Robinson-Foulds comparison, and Newick text serialization with optional
per-edge affinity annotations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


class TreeError(ValueError):
    """Structural violation: bad degrees, cycles, label problems."""


class NewickError(ValueError):
    """Malformed Newick input; carries the offending text position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def _edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


class Topology:
    """Immutable unrooted bifurcating tree.

    Parameters
    ----------
    leaf_labels:
        Distinct label strings; leaf ``i`` carries ``leaf_labels[i]``.
    edges:
        Undirected edges over node ids ``0 .. 2m-3`` (``0 .. 1`` for
        ``m = 2``).  Leaves must have degree 1 and internal nodes degree 3;
        the graph must be a single tree.
    """

    __slots__ = ("leaf_labels", "m", "_adj", "_edges")

    def __init__(self, leaf_labels, edges):
        labels = tuple(str(x) for x in leaf_labels)
        if len(labels) < 2:
            raise TreeError("need at least 2 leaves")
        if len(set(labels)) != len(labels):
            raise TreeError("leaf labels are not unique")
        m = len(labels)
        n_nodes = 2 * m - 2 if m >= 3 else 2
        edge_set = {_edge_key(u, v) for u, v in edges}
        if len(edge_set) != len(list(edges)):
            raise TreeError("duplicate edges")
        if len(edge_set) != (2 * m - 3 if m >= 3 else 1):
            raise TreeError(
                f"expected {2 * m - 3} edges for m={m}, got {len(edge_set)}"
            )
        adj: list[list[int]] = [[] for _ in range(n_nodes)]
        for u, v in edge_set:
            if not (0 <= u < n_nodes and 0 <= v < n_nodes) or u == v:
                raise TreeError(f"bad edge ({u},{v}) for {n_nodes} nodes")
            adj[u].append(v)
            adj[v].append(u)
        for node in range(m):
            if len(adj[node]) != 1:
                raise TreeError(f"leaf {node} has degree {len(adj[node])}")
        for node in range(m, n_nodes):
            if len(adj[node]) != 3:
                raise TreeError(
                    f"internal node {node} has degree {len(adj[node])}"
                )
        # connectivity: |edges| = |nodes| - 1 plus one sweep reaching all
        seen = {0}
        stack = [0]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != n_nodes:
            raise TreeError("graph is not connected")
        self.leaf_labels = labels
        self.m = m
        self._adj = tuple(tuple(sorted(a)) for a in adj)
        self._edges = tuple(sorted(edge_set))

    @property
    def num_nodes(self) -> int:
        return len(self._adj)

    def edges(self) -> tuple[tuple[int, int], ...]:
        """All edges as sorted (u, v) pairs, ascending."""
        return self._edges

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self._adj[v]

    def degree(self, v: int) -> int:
        return len(self._adj[v])

    def is_leaf(self, v: int) -> bool:
        return v < self.m

    def leaf_index(self, label: str) -> int:
        try:
            return self.leaf_labels.index(label)
        except ValueError:
            raise TreeError(f"unknown leaf label {label!r}") from None

    def __repr__(self):
        return f"Topology(m={self.m}, labels={self.leaf_labels[:4]}...)"

    # -- per-edge leaf splits, the workhorse for clans and bipartitions --

    def edge_splits(self) -> dict[tuple[int, int], frozenset[int]]:
        """Map each edge to the leaf-index set on its smaller-id side.

        The returned set is the set of leaves reachable from ``u`` when the
        edge ``(u, v)`` (``u < v``) is removed.
        """
        splits = {}
        for u, v in self._edges:
            side = self._leafset_from(u, blocked=v)
            splits[(u, v)] = side
        return splits

    def _leafset_from(self, start: int, blocked: int) -> frozenset[int]:
        seen = {start}
        stack = [start]
        leaves = []
        while stack:
            node = stack.pop()
            if node < self.m:
                leaves.append(node)
            for w in self._adj[node]:
                if w != blocked and w not in seen:
                    seen.add(w)
                    stack.append(w)
        return frozenset(leaves)

    def hop_distances_from(self, start: int) -> list[int]:
        """Edge-count distances from ``start`` to every node (BFS)."""
        dist = [-1] * self.num_nodes
        dist[start] = 0
        q = deque([start])
        while q:
            node = q.popleft()
            for w in self._adj[node]:
                if dist[w] < 0:
                    dist[w] = dist[node] + 1
                    q.append(w)
        return dist


@dataclass(frozen=True)
class Bipartition:
    """A split of the leaf indices into two complementary sides.

    Canonical form: the side containing leaf index 0 is ``side_a``.
    """

    side_a: frozenset[int]
    side_b: frozenset[int]

    @classmethod
    def of(cls, side: frozenset[int], m: int) -> "Bipartition":
        comp = frozenset(range(m)) - side
        if not side or not comp:
            raise TreeError("bipartition sides must both be non-empty")
        if 0 in side:
            return cls(side, comp)
        return cls(comp, side)

    def labeled(self, labels) -> frozenset[frozenset[str]]:
        """Label-based canonical form, independent of index order."""
        return frozenset(
            (
                frozenset(labels[i] for i in self.side_a),
                frozenset(labels[i] for i in self.side_b),
            )
        )


class EdgeAffinities:
    """Per-edge affinity values in the open interval (0, 1).

    ``delta`` and ``xi`` are the minimum and maximum edge affinity; valid
    inputs satisfy ``0 < delta <= xi < 1``.
    """

    __slots__ = ("values",)

    def __init__(self, values: dict):
        vals = {_edge_key(u, v): float(r) for (u, v), r in values.items()}
        for edge, r in vals.items():
            if not (0.0 < r < 1.0):
                raise TreeError(f"edge {edge} affinity {r} outside (0,1)")
        if not vals:
            raise TreeError("no edge affinities given")
        self.values = vals

    @property
    def delta(self) -> float:
        return min(self.values.values())

    @property
    def xi(self) -> float:
        return max(self.values.values())

    def __getitem__(self, edge) -> float:
        return self.values[_edge_key(*edge)]

    def __len__(self):
        return len(self.values)

    def matches(self, topology: Topology) -> bool:
        return set(self.values) == set(topology.edges())


# ---------------------------------------------------------------------------
# Newick parsing
# ---------------------------------------------------------------------------

_LABEL_FORBIDDEN = set("(),:;\t\n\r ")


def _tokenize_newick(text: str):
    """Yield (token, position) pairs; labels/numbers come out as strings."""
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "(),:;":
            yield c, i
            i += 1
            continue
        j = i
        while j < n and text[j] not in _LABEL_FORBIDDEN:
            j += 1
        yield text[i:j], i
        i = j


class _NewickNode:
    __slots__ = ("label", "children", "length", "pos")

    def __init__(self, pos):
        self.label = None
        self.children = []
        self.length = None
        self.pos = pos


def _parse_newick_tree(text: str) -> _NewickNode:
    tokens = list(_tokenize_newick(text))
    if not tokens:
        raise NewickError("empty input", 0)
    idx = 0

    def peek():
        return tokens[idx] if idx < len(tokens) else (None, len(text))

    def advance():
        nonlocal idx
        tok = peek()
        idx += 1
        return tok

    def parse_node() -> _NewickNode:
        tok, pos = peek()
        node = _NewickNode(pos)
        if tok == "(":
            advance()
            node.children.append(parse_node())
            while True:
                tok, pos = peek()
                if tok == ",":
                    advance()
                    node.children.append(parse_node())
                elif tok == ")":
                    advance()
                    break
                else:
                    raise NewickError("expected ',' or ')'", pos)
            tok, pos = peek()
            if tok not in (None, ",", ")", ":", ";"):
                advance()  # internal label, accepted and ignored
        else:
            tok, pos = advance()
            if tok in (None, ",", ")", ":", ";"):
                raise NewickError("expected a leaf label", pos)
            node.label = tok
        tok, pos = peek()
        if tok == ":":
            advance()
            tok, pos = advance()
            try:
                node.length = float(tok)
            except (TypeError, ValueError):
                raise NewickError("bad branch length", pos) from None
        return node

    root = parse_node()
    tok, pos = peek()
    if tok != ";":
        raise NewickError("expected ';'", pos)
    if idx + 1 < len(tokens):
        raise NewickError("trailing input after ';'", tokens[idx + 1][1])
    return root


def _build_topology(root: _NewickNode, want_affinities: bool):
    """Flatten the parse tree into Topology (+ affinities if requested).

    A bifurcating (two-child) root is suppressed so that rooted inputs are
    treated as unrooted; the two edges merge and their affinities multiply.
    """
    labels: list[str] = []
    label_pos: dict[str, int] = {}
    # first pass: collect leaves in input order
    def collect(node):
        if not node.children:
            if node.label in label_pos:
                raise NewickError(
                    f"duplicate leaf label {node.label!r}", node.pos
                )
            label_pos[node.label] = node.pos
            labels.append(node.label)
        for child in node.children:
            collect(child)

    collect(root)
    m = len(labels)
    if m < 2:
        raise NewickError("fewer than 2 leaves", root.pos)
    leaf_id = {lab: i for i, lab in enumerate(labels)}

    next_internal = m
    edges: list[tuple[int, int]] = []
    lengths: dict[tuple[int, int], float] = {}
    missing_length = []

    def attach(node, is_root=False) -> int:
        nonlocal next_internal
        if not node.children:
            return leaf_id[node.label]
        if len(node.children) == 1:
            raise NewickError("unary internal node", node.pos)
        allowed = 3 if is_root else 2
        if len(node.children) > allowed:
            raise NewickError(
                f"node of degree {len(node.children) + (0 if is_root else 1)}"
                " (only a trifurcating root may exceed 3)",
                node.pos,
            )
        my_id = next_internal
        next_internal += 1
        for child in node.children:
            child_id = attach(child)
            edges.append(_edge_key(my_id, child_id))
            if child.length is not None:
                lengths[edges[-1]] = child.length
            else:
                missing_length.append(edges[-1])
        return my_id

    if len(root.children) == 0:
        raise NewickError("single-leaf tree", root.pos)
    if len(root.children) == 2 and m > 2:
        # suppress the rooted convention's degree-2 root
        left, right = root.children
        lid = attach(left)
        rid = attach(right)
        key = _edge_key(lid, rid)
        edges.append(key)
        if left.length is not None and right.length is not None:
            lengths[key] = left.length * right.length
        else:
            missing_length.append(key)
    elif len(root.children) == 2 and m == 2:
        left, right = root.children
        if left.children or right.children:
            raise NewickError("m=2 tree must be a leaf pair", root.pos)
        key = _edge_key(leaf_id[left.label], leaf_id[right.label])
        edges.append(key)
        if left.length is not None and right.length is not None:
            lengths[key] = left.length * right.length
        else:
            missing_length.append(key)
    else:
        attach(root, is_root=True)

    try:
        topo = Topology(labels, edges)
    except TreeError as exc:
        raise NewickError(str(exc), root.pos) from None
    if not want_affinities:
        return topo
    if missing_length:
        raise NewickError(
            f"{len(missing_length)} branches lack ':affinity' annotations",
            root.pos,
        )
    return topo, EdgeAffinities(lengths)


def parse_newick(text: str) -> Topology:
    """Parse a Newick string into an unrooted :class:`Topology`.

    Rooted inputs written with a two-child root are unrooted by suppressing
    that root.  Branch length annotations are tolerated and ignored; use
    :func:`parse_newick_with_affinities` to read them.
    """
    return _build_topology(_parse_newick_tree(text), want_affinities=False)


def parse_newick_with_affinities(text: str):
    """Parse Newick and read every ':value' annotation as an edge affinity.

    Returns ``(Topology, EdgeAffinities)``. Fails if any branch lacks an
    annotation or an annotation falls outside (0, 1).  When a two-child root
    is suppressed, the merged edge's affinity is the product of the two
    annotations (affinities are multiplicative along paths).
    """
    result = _build_topology(_parse_newick_tree(text), want_affinities=True)
    return result


# ---------------------------------------------------------------------------
# Newick writing
# ---------------------------------------------------------------------------


def write_newick(t: Topology, affinities: EdgeAffinities | None = None) -> str:
    """Serialize to canonical Newick text.

    Canonical form: the tree is written from a trifurcating pseudo-root,
    chosen as the internal node adjacent to the lexicographically smallest
    leaf label; at every level children are ordered by the smallest leaf
    label contained in their subtree.  ``parse_newick(write_newick(t))`` is
    RF-distance 0 from ``t``.  With ``affinities``, each branch carries a
    ``:value`` annotation.
    """
    for lab in t.leaf_labels:
        bad = set(lab) & _LABEL_FORBIDDEN
        if bad or not lab:
            raise TreeError(f"label {lab!r} not serializable to Newick")

    def annot(u, v):
        if affinities is None:
            return ""
        return ":%.17g" % affinities[(u, v)]

    if t.m == 2:
        a, b = sorted(t.leaf_labels)
        i, j = t.leaf_index(a), t.leaf_index(b)
        return f"({a}{annot(i, j)},{b}{annot(i, j)});"

    start_leaf = min(range(t.m), key=lambda i: t.leaf_labels[i])
    root = t.neighbors(start_leaf)[0]

    def render(node: int, parent: int):
        """Return (min_label, text) for the subtree of node away from parent."""
        if t.is_leaf(node):
            return t.leaf_labels[node], t.leaf_labels[node] + annot(parent, node)
        parts = sorted(
            render(w, node) for w in t.neighbors(node) if w != parent
        )
        min_label = parts[0][0]
        body = "(" + ",".join(p[1] for p in parts) + ")"
        return min_label, body + annot(parent, node)

    parts = sorted(render(w, root) for w in t.neighbors(root))
    return "(" + ",".join(p[1] for p in parts) + ");"


# ---------------------------------------------------------------------------
# Structural queries
# ---------------------------------------------------------------------------


def bipartitions(t: Topology) -> frozenset[Bipartition]:
    """The m - 3 nontrivial bipartitions, one per internal edge.

    Returns the empty set for m < 4 (no internal edges).
    """
    if t.m < 4:
        return frozenset()
    out = set()
    for (u, v), side in t.edge_splits().items():
        if u >= t.m and v >= t.m:
            out.add(Bipartition.of(side, t.m))
    return frozenset(out)


def rf_distance(t1: Topology, t2: Topology) -> int:
    """Robinson-Foulds distance: symmetric difference of bipartition sets.

    Counts nontrivial bipartitions only; 0 iff the topologies are identical,
    at most 2(m - 3) for binary trees.  Leaves are matched by label, so the
    two trees may list them in different orders.
    """
    if set(t1.leaf_labels) != set(t2.leaf_labels):
        raise TreeError("leaf label sets differ")
    b1 = {b.labeled(t1.leaf_labels) for b in bipartitions(t1)}
    b2 = {b.labeled(t2.leaf_labels) for b in bipartitions(t2)}
    return len(b1 ^ b2)


def is_clan(t: Topology, subset) -> bool:
    """True iff removing one edge separates exactly this leaf subset.

    Singletons are clans (their leaf edge separates them); the empty set and
    the full leaf set are rejected, since no separating edge exists.
    """
    s = frozenset(subset)
    if not s:
        raise TreeError("empty subset has no separating edge")
    if not s <= frozenset(range(t.m)):
        raise TreeError("subset contains non-leaf indices")
    if len(s) == t.m:
        raise TreeError("full leaf set has no separating edge")
    all_leaves = frozenset(range(t.m))
    for side in t.edge_splits().values():
        if s == side or s == all_leaves - side:
            return True
    return False


def clan_leafsets(t: Topology) -> set[frozenset[int]]:
    """Every leaf subset that forms a clan (both sides of every edge)."""
    all_leaves = frozenset(range(t.m))
    out = set()
    for side in t.edge_splits().values():
        out.add(side)
        out.add(all_leaves - side)
    out.discard(all_leaves)
    out.discard(frozenset())
    return out


def tree_depth(t: Topology) -> int:
    """Max over internal edges of the larger hop count to the nearest
    same-side taxon.

    For an edge (u, v) between two internal nodes, each endpoint is scored
    by the hop distance to the closest leaf on its own side of the split;
    the edge scores the larger of the two, and the tree depth is the
    maximum internal-edge score.  Caterpillar trees have depth 1; a perfect
    binary tree on m leaves has depth log2(m) - 1.
    """
    if t.m < 4:
        raise TreeError("tree depth needs m >= 4")
    best = 0
    for u, v in t.edges():
        if t.is_leaf(u) or t.is_leaf(v):
            continue
        best = max(best, max(_nearest_leaf_hops(t, u, v),
                             _nearest_leaf_hops(t, v, u)))
    return best


def _nearest_leaf_hops(t: Topology, start: int, blocked: int) -> int:
    """Hops from start to the closest leaf on start's side of (start, blocked)."""
    if t.is_leaf(start):
        return 0
    seen = {start, blocked}
    q = deque([(start, 0)])
    while q:
        node, d = q.popleft()
        for w in t._adj[node]:
            if w in seen:
                continue
            if t.is_leaf(w):
                return d + 1
            seen.add(w)
            q.append((w, d + 1))
    raise TreeError("no leaf found on one side of an edge")  # unreachable


def tree_diameter(t: Topology) -> int:
    """Maximum leaf-to-leaf hop count."""
    best = 0
    for leaf in range(t.m):
        dist = t.hop_distances_from(leaf)
        best = max(best, max(dist[i] for i in range(t.m)))
    return best


def cherry_count(t: Topology) -> int:
    """Number of internal nodes adjacent to exactly two leaves."""
    count = 0
    for node in range(t.m, t.num_nodes):
        if sum(1 for w in t.neighbors(node) if t.is_leaf(w)) == 2:
            count += 1
    return count
