"""Generators for the tree families used in the experiments.

Deterministic shapes (caterpillar, perfect binary), seeded random shapes
(random-merge coalescent, birth-death), per-edge affinity assignment, and
the worst-case construction that pins the second singular value of a
cross-similarity block to a closed form.

Every randomized generator derives its own RNG stream from
``(seed, kind_code, m)`` so that independent generations never share state
and results are bit-reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import EdgeAffinities, Topology, TreeError

_KIND_CODES = {
    "caterpillar": 1,
    "perfect_binary": 2,
    "coalescent": 3,
    "birth_death": 4,
    "tight_example": 5,
    "gamma_affinity": 6,
}


def _rng(seed: int, kind: str, m: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _KIND_CODES[kind], int(m)])


def _labels(m: int) -> list[str]:
    return [f"x{i + 1}" for i in range(m)]


@dataclass
class GenSpec:
    """Parameters for one tree generation.

    ``delta`` is the base edge affinity; ``xi`` is only meaningful for the
    tight example, where it is the central-edge affinity.  ``birth_rate``
    and ``death_rate`` apply to the birth-death kind only.
    """

    kind: str
    m: int
    seed: int = 0
    delta: float = 0.85
    xi: float | None = None
    birth_rate: float = 1.0
    death_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in _KIND_CODES or self.kind == "gamma_affinity":
            raise ValueError(f"unknown tree kind {self.kind!r}")
        if self.m < 4:
            raise ValueError("m must be at least 4")
        if self.kind in ("perfect_binary", "tight_example"):
            if self.m & (self.m - 1):
                raise ValueError("m must be a power of two for this kind")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0,1)")
        if self.xi is not None and not (self.delta <= self.xi < 1.0):
            raise ValueError("need 0 < delta <= xi < 1")

    def topology(self) -> Topology:
        if self.kind == "caterpillar":
            return caterpillar(self.m)
        if self.kind == "perfect_binary":
            return perfect_binary(self.m)
        if self.kind == "coalescent":
            return coalescent(self.m, self.seed)
        if self.kind == "birth_death":
            return birth_death(self.m, self.seed, self.birth_rate,
                               self.death_rate)
        if self.kind == "tight_example":
            return tight_example_tree(self.m, self.delta, self.xi)[0]
        raise AssertionError(self.kind)


def caterpillar(m: int) -> Topology:
    """Caterpillar tree: the m - 2 internal nodes form a path.

    Each path end carries two leaves, every other internal node carries one;
    leaves are labeled x1..xm in path order.  The diameter is m - 1.
    """
    if m < 4:
        raise TreeError("caterpillar needs m >= 4")
    internals = list(range(m, 2 * m - 2))
    edges = [(internals[j], internals[j + 1]) for j in range(len(internals) - 1)]
    edges.append((0, internals[0]))
    edges.append((1, internals[0]))
    for j in range(1, m - 3):
        edges.append((j + 1, internals[j]))
    edges.append((m - 2, internals[-1]))
    edges.append((m - 1, internals[-1]))
    return Topology(_labels(m), edges)


def perfect_binary(m: int) -> Topology:
    """Two complete binary subtrees of m/2 leaves joined by a central edge."""
    if m < 4 or (m & (m - 1)):
        raise TreeError("perfect binary tree needs m a power of two, >= 4")
    edges = []
    next_id = m

    def build(lo: int, hi: int) -> int:
        """Return the root node id of a complete subtree over leaves lo..hi-1."""
        nonlocal next_id
        if hi - lo == 1:
            return lo
        node = next_id
        next_id += 1
        mid = (lo + hi) // 2
        edges.append((node, build(lo, mid)))
        edges.append((node, build(mid, hi)))
        return node

    left = build(0, m // 2)
    right = build(m // 2, m)
    edges.append((left, right))
    return Topology(_labels(m), edges)


def coalescent(m: int, seed: int) -> Topology:
    """Random topology from repeated uniform merging of active lineages.

    Starting from the m labeled terminal nodes, two uniformly random active
    lineages are merged into a new internal node until three remain, which
    are then joined at a final internal node.
    """
    if m < 4:
        raise TreeError("coalescent needs m >= 4")
    rng = _rng(seed, "coalescent", m)
    active = list(range(m))
    next_id = m
    edges = []
    while len(active) > 3:
        i, j = sorted(rng.choice(len(active), size=2, replace=False))
        edges.append((active[i], next_id))
        edges.append((active[j], next_id))
        # remove j first so i's position stays valid
        active.pop(j)
        active.pop(i)
        active.append(next_id)
        next_id += 1
    for node in active:
        edges.append((node, next_id))
    return Topology(_labels(m), edges)


def birth_death(m: int, seed: int, birth_rate: float,
                death_rate: float) -> Topology:
    """Forward birth-death topology conditioned on reaching m extant lineages.

    Only the event order matters for the topology, so waiting times are not
    simulated: each event is a birth with probability b/(b+d) on a uniformly
    chosen lineage, otherwise a death.  Extinct lineages are pruned, unary
    chains are suppressed, and the degree-2 stem root is removed.  If the
    process dies out it restarts on the same RNG stream.
    """
    if not (birth_rate > death_rate >= 0.0):
        raise TreeError("need birth_rate > death_rate >= 0")
    if m < 4:
        raise TreeError("birth_death needs m >= 4")
    rng = _rng(seed, "birth_death", m)
    p_birth = birth_rate / (birth_rate + death_rate)
    while True:
        parent = {0: None}
        children: dict[int, list[int]] = {0: []}
        alive = [0]
        next_id = 1
        while alive and len(alive) < m:
            k = int(rng.integers(len(alive)))
            node = alive[k]
            if rng.random() < p_birth:
                a, b = next_id, next_id + 1
                next_id += 2
                parent[a] = parent[b] = node
                children[node] = [a, b]
                children[a] = []
                children[b] = []
                alive[k] = a
                alive.append(b)
            else:
                alive.pop(k)
        if alive:
            break
    return _prune_to_extant(parent, children, alive)


def _prune_to_extant(parent, children, extant) -> Topology:
    """Collapse a rooted forest record to the unrooted tree over extant tips."""
    adj: dict[int, set[int]] = {u: set() for u in parent}
    for u, p in parent.items():
        if p is not None:
            adj[u].add(p)
            adj[p].add(u)
    extant_set = set(extant)
    # strip dead leaves until every remaining leaf is extant
    frontier = [u for u in adj if len(adj[u]) <= 1 and u not in extant_set]
    while frontier:
        u = frontier.pop()
        if u not in adj or len(adj[u]) > 1 or u in extant_set:
            continue
        for w in adj[u]:
            adj[w].discard(u)
            if len(adj[w]) <= 1 and w not in extant_set:
                frontier.append(w)
        del adj[u]
    # suppress degree-2 pass-through nodes
    for u in [n for n in list(adj) if len(adj[n]) == 2 and n not in extant_set]:
        a, b = adj[u]
        adj[a].discard(u)
        adj[b].discard(u)
        adj[a].add(b)
        adj[b].add(a)
        del adj[u]
    # extant nodes keep creation order; internals renumbered after them
    leaves = sorted(extant_set)
    internal = sorted(n for n in adj if n not in extant_set)
    remap = {u: i for i, u in enumerate(leaves)}
    remap.update({u: len(leaves) + i for i, u in enumerate(internal)})
    edges = set()
    for u, ws in adj.items():
        for w in ws:
            edges.add(tuple(sorted((remap[u], remap[w]))))
    return Topology(_labels(len(leaves)), sorted(edges))


def assign_constant_affinity(t: Topology, delta: float) -> EdgeAffinities:
    """Give every edge the same affinity delta in (0,1)."""
    if not (0.0 < delta < 1.0):
        raise TreeError(f"delta {delta} outside the open interval (0,1)")
    return EdgeAffinities({e: delta for e in t.edges()})


def assign_gamma_affinity(t: Topology, delta: float, shape: float,
                          seed: int) -> EdgeAffinities:
    """Per-edge affinity delta * r with r ~ Gamma(shape, scale=1/shape).

    The scale is tied to the shape so that E[r] = 1; draws are clamped into
    (1e-6, 1 - 1e-6) to preserve the open-interval affinity requirement.
    """
    if not (0.0 < delta < 1.0):
        raise TreeError(f"delta {delta} outside (0,1)")
    if shape <= 0:
        raise TreeError("gamma shape must be positive")
    rng = _rng(seed, "gamma_affinity", t.m)
    eps = 1e-6
    values = {}
    for edge in t.edges():
        r = rng.gamma(shape, 1.0 / shape)
        values[edge] = min(max(delta * r, eps), 1.0 - eps)
    return EdgeAffinities(values)


def tight_example_tree(m: int, delta: float, xi: float):
    """Perfect binary tree with one slow central edge, plus its hard clan pair.

    All edges carry affinity ``delta`` except the central edge, which gets
    ``xi``.  Returns ``(topology, affinities, (A, C))`` where A and C are the
    quarter leaf sets lying on the same side of their respective halves; the
    cross block over A ∪ C attains

        sigma_2 = (m/4) * delta^(2*log2(m/2)) * (1 - xi).
    """
    if m < 4 or (m & (m - 1)):
        raise TreeError("tight example needs m a power of two, >= 4")
    if not (0.0 < delta < 1.0 and 0.0 < xi < 1.0):
        raise TreeError("delta and xi must lie in (0,1)")
    t = perfect_binary(m)
    half = frozenset(range(m // 2))
    central = None
    for edge, side in t.edge_splits().items():
        if side == half or side == frozenset(range(m)) - half:
            central = edge
            break
    assert central is not None, "perfect binary tree lost its central edge"
    values = {e: (xi if e == central else delta) for e in t.edges()}
    quarter = m // 4
    clan_a = frozenset(range(quarter))
    clan_c = frozenset(range(m // 2, m // 2 + quarter))
    return t, EdgeAffinities(values), (clan_a, clan_c)
