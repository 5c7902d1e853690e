"""Markov random fields on trees and the Jukes-Cantor sequence simulator.

Under the Jukes-Cantor (JC) model every node carries a uniform distribution
over d states and each edge mutates with a single rate theta: the child
keeps the parent state with probability 1 - theta and otherwise moves to
one of the other d - 1 states uniformly.  The edge affinity (the quantity
that is multiplicative along paths) is

    r = (1 - d * theta / (d - 1)) ** (d - 1),

the determinant of the edge transition matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tree import EdgeAffinities, Topology, TreeError


class ModelError(ValueError):
    """Parameter or dimension violation in a tree Markov model."""


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic d x d matrix; entry (a, b) = Pr[child=a | parent=b]."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] < 2:
            raise ModelError(f"transition matrix must be square d>=2, got {e.shape}")
        if np.any(e < -1e-15) or np.any(e > 1 + 1e-15):
            raise ModelError("transition entries outside [0,1]")
        col = e.sum(axis=0)
        if np.max(np.abs(col - 1.0)) > 1e-12:
            raise ModelError("columns must sum to 1 within 1e-12")
        object.__setattr__(self, "entries", e)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def determinant(self) -> float:
        return float(np.linalg.det(self.entries))


def jc_transition(theta: float, d: int) -> TransitionMatrix:
    """JC matrix: diagonal 1 - theta, off-diagonal theta / (d - 1).

    Requires 0 <= theta < (d-1)/d so the determinant
    (1 - d*theta/(d-1))**(d-1) stays positive.
    """
    if d < 2:
        raise ModelError("need d >= 2 states")
    if not (0.0 <= theta < (d - 1) / d):
        raise ModelError(f"theta {theta} outside [0, (d-1)/d)")
    e = np.full((d, d), theta / (d - 1))
    np.fill_diagonal(e, 1.0 - theta)
    return TransitionMatrix(e)


def affinity_from_theta(theta: float, d: int) -> float:
    """Edge affinity (transition determinant) of a JC edge with rate theta."""
    if d < 2:
        raise ModelError("need d >= 2 states")
    if not (0.0 <= theta < (d - 1) / d):
        raise ModelError(f"theta {theta} outside [0, (d-1)/d)")
    return (1.0 - d * theta / (d - 1)) ** (d - 1)


def theta_from_affinity(r: float, d: int) -> float:
    """Inverse of :func:`affinity_from_theta` on (0, 1]."""
    if d < 2:
        raise ModelError("need d >= 2 states")
    if not (0.0 < r <= 1.0):
        raise ModelError(f"affinity {r} outside (0, 1]")
    return (d - 1) / d * (1.0 - r ** (1.0 / (d - 1)))


@dataclass
class SiteRates:
    """Positive per-site rate multipliers; site s scales edge affinities
    to affinity ** rates[s]."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if r.ndim != 1 or r.size == 0:
            raise ModelError("site rates must be a non-empty vector")
        if np.any(r <= 0):
            raise ModelError("site rates must be positive")
        self.rates = r

    @classmethod
    def gamma(cls, n: int, shape: float, seed: int) -> "SiteRates":
        """Mean-one Gamma draws: rates ~ Gamma(shape, scale=1/shape)."""
        if shape <= 0:
            raise ModelError("gamma shape must be positive")
        rng = np.random.default_rng([int(seed), 7, int(n)])
        return cls(rng.gamma(shape, 1.0 / shape, size=n))


@dataclass
class MarkovTreeModel:
    """A tree plus one JC rate (equivalently one affinity) per edge.

    The simulation root is an arbitrary internal node; the JC model is
    reversible with a uniform stationary distribution, so the leaf marginals
    do not depend on the choice.
    """

    topology: Topology
    d: int
    edge_theta: dict = field(repr=False)
    root_node: int = 0
    root_distribution: np.ndarray | None = None

    def __post_init__(self):
        if self.root_distribution is None:
            self.root_distribution = np.full(self.d, 1.0 / self.d)
        p = np.asarray(self.root_distribution, dtype=float)
        if p.shape != (self.d,) or abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0):
            raise ModelError("root distribution must be a length-d probability vector")
        self.root_distribution = p

    def transition(self, edge) -> TransitionMatrix:
        u, v = edge
        key = (u, v) if u < v else (v, u)
        return jc_transition(self.edge_theta[key], self.d)

    def edge_affinity(self, edge) -> float:
        u, v = edge
        key = (u, v) if u < v else (v, u)
        return affinity_from_theta(self.edge_theta[key], self.d)


def model_from_affinities(t: Topology, aff: EdgeAffinities,
                          d: int) -> MarkovTreeModel:
    """JC model whose per-edge rate reproduces the given edge affinities."""
    if not aff.matches(t):
        raise ModelError("affinities do not cover exactly the topology's edges")
    theta = {e: theta_from_affinity(aff[e], d) for e in t.edges()}
    root = t.m if t.m >= 3 else 0
    return MarkovTreeModel(topology=t, d=d, edge_theta=theta, root_node=root)


@dataclass
class CharacterMatrix:
    """Observed data: m rows (terminal nodes) by n columns of states 1..d."""

    data: np.ndarray
    d: int
    leaf_labels: tuple

    def __post_init__(self):
        x = np.asarray(self.data)
        if x.ndim != 2 or x.size == 0:
            raise ModelError("character matrix must be 2-D and non-empty")
        if x.min() < 1 or x.max() > self.d:
            raise ModelError(f"entries must lie in 1..{self.d}")
        if len(self.leaf_labels) != x.shape[0]:
            raise ModelError("one label per row required")
        self.data = x.astype(np.int64, copy=False)
        self.leaf_labels = tuple(self.leaf_labels)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def save(self, path):
        """Text format: '#labels ...' comment, 'm n d' header, one row per leaf."""
        with open(path, "w") as fh:
            fh.write("#labels " + " ".join(self.leaf_labels) + "\n")
            fh.write(f"{self.m} {self.n} {self.d}\n")
            for row in self.data:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "CharacterMatrix":
        with open(path) as fh:
            first = fh.readline()
            if not first.startswith("#labels"):
                raise ModelError(f"{path}: missing '#labels' line")
            labels = first.split()[1:]
            header = fh.readline().split()
            if len(header) != 3:
                raise ModelError(f"{path}: header must be 'm n d'")
            m, n, d = (int(v) for v in header)
            data = np.loadtxt(fh, dtype=np.int64, ndmin=2)
        if data.shape != (m, n) or len(labels) != m:
            raise ModelError(f"{path}: shape does not match header")
        return cls(data=data, d=d, leaf_labels=tuple(labels))


def simulate(model: MarkovTreeModel, n: int, seed: int,
             site_rates: SiteRates | None = None) -> CharacterMatrix:
    """Draw n i.i.d. sites from the tree model; returns the terminal rows.

    Each site draws the root state from the root distribution and propagates
    along edges away from the root.  With ``site_rates``, site s uses a
    per-site rate such that the site's edge affinity equals
    ``affinity ** rates[s]`` (paralinear distances scale by rates[s], which
    keeps them additive).  Deterministic for a fixed seed; rates of all ones
    reproduce the unrated output exactly.
    """
    if n < 1:
        raise ModelError("need n >= 1 samples")
    rates = None
    if site_rates is not None:
        rates = site_rates.rates
        if rates.shape != (n,):
            raise ModelError(f"site_rates length {rates.size} != n {n}")
    t = model.topology
    d = model.d
    rng = np.random.default_rng([int(seed), 11, int(n), t.m])

    states = np.empty((t.num_nodes, n), dtype=np.int64)
    root = model.root_node
    states[root] = rng.choice(np.arange(1, d + 1), size=n,
                              p=model.root_distribution)
    # BFS away from the root; edge order fixed by node ids for determinism
    order = []
    seen = {root}
    queue = [root]
    while queue:
        u = queue.pop(0)
        for w in t.neighbors(u):
            if w not in seen:
                seen.add(w)
                order.append((u, w))
                queue.append(w)
    for u, w in order:
        key = (u, w) if u < w else (w, u)
        theta = model.edge_theta[key]
        if rates is None:
            theta_site = theta
        else:
            aff = affinity_from_theta(theta, d)
            theta_site = (d - 1) / d * (1.0 - (aff ** rates) ** (1.0 / (d - 1)))
        mutate = rng.random(n) < theta_site
        shift = rng.integers(1, d, size=n)  # uniform over the other d-1 states
        child = states[u].copy()
        child[mutate] = (child[mutate] - 1 + shift[mutate]) % d + 1
        states[w] = child
    return CharacterMatrix(data=states[: t.m].copy(), d=d,
                           leaf_labels=t.leaf_labels)


def population_similarity(t: Topology, aff: EdgeAffinities):
    """Exact affinity matrix: R(i,j) = product of edge affinities on path i-j.

    The diagonal is fixed at 1 by convention and is never consumed by the
    reconstruction criteria, which only read cross blocks.
    """
    from .similarity import SimilarityMatrix

    if not aff.matches(t):
        raise ModelError("affinities do not cover exactly the topology's edges")
    m = t.m
    log_aff = {e: np.log(aff[e]) for e in t.edges()}
    R = np.eye(m)
    for leaf in range(m):
        acc = np.full(t.num_nodes, -np.inf)
        acc[leaf] = 0.0
        stack = [leaf]
        seen = {leaf}
        while stack:
            u = stack.pop()
            for w in t.neighbors(u):
                if w in seen:
                    continue
                seen.add(w)
                key = (u, w) if u < w else (w, u)
                acc[w] = acc[u] + log_aff[key]
                stack.append(w)
        R[leaf, :] = np.exp(acc[:m])
        R[leaf, leaf] = 1.0
    R = (R + R.T) / 2.0  # exact symmetry against fp drift in either sweep
    return SimilarityMatrix(R, t.leaf_labels)
