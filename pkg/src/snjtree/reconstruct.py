"""Tree reconstruction engines and the spectral / quartet primitives.

Three agglomerative engines share one bookkeeping core and differ only in
their pair-merge criterion:

* ``snj`` merges the pair of subsets whose union's cross-similarity block
  has the smallest second singular value (rank-one blocks mark clans);
* ``nj`` is canonical neighbor joining (Studier-Keppler Q criterion with
  full row sums and the standard distance reduction);
* ``max_quartet_nj`` replaces the spectral score with the maximum absolute
  quartet determinant over the candidate union, evaluated exhaustively.

All engines record a :class:`MergeTrace` with per-step candidate criterion
values for diagnostics, break criterion ties by the lexicographically
smallest pair of subset identifiers, and are deterministic for identical
inputs.
"""

from __future__ import annotations

import bisect
import json
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg

from .similarity import DistanceMatrix, SimilarityMatrix
from .tree import Topology

class ReconstructionError(ValueError):
    """Bad input matrix or index sets."""


_DENSE_SVD_LIMIT = 64  # blocks with min dimension above this go iterative


def _sigma2_dense(M: np.ndarray) -> float:
    return float(np.linalg.svd(M, compute_uv=False)[1])


def _sigma2_iterative(M: np.ndarray) -> float:
    # ARPACK with tol=0 iterates to machine precision; k=2 < min(shape) holds
    # on this path since min(shape) > _DENSE_SVD_LIMIT.
    s = scipy.sparse.linalg.svds(M, k=2, tol=0, return_singular_vectors=False)
    return float(np.sort(s)[0])


def second_singular_value(M) -> float:
    """Second largest singular value, to 1e-12 relative accuracy of sigma_1.

    Dense SVD for blocks whose smaller dimension is at most 64, an iterative
    rank-revealing solver above that; the two paths agree to 1e-10 relative
    on the shared test battery.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or min(M.shape) < 2:
        raise ReconstructionError(
            f"need at least 2 rows and 2 columns, got {M.shape}"
        )
    if min(M.shape) <= _DENSE_SVD_LIMIT:
        return _sigma2_dense(M)
    return _sigma2_iterative(M)


def cross_similarity(R, subset) -> np.ndarray:
    """Block of affinities between ``subset`` (rows) and its complement.

    Rows and columns are ascending; diagonal entries of R never appear since
    the row and column index sets are disjoint.
    """
    values = R.values if isinstance(R, SimilarityMatrix) else np.asarray(R)
    m = values.shape[0]
    rows = sorted(set(int(i) for i in subset))
    if not rows or len(rows) >= m:
        raise ReconstructionError("subset must be a non-empty proper subset")
    if rows[0] < 0 or rows[-1] >= m:
        raise ReconstructionError("subset index out of range")
    cols = sorted(set(range(m)) - set(rows))
    return values[np.ix_(rows, cols)]


@dataclass(frozen=True)
class QuartetScore:
    """Determinant score of one ordered quartet (i,k | j,l)."""

    i: int
    k: int
    j: int
    l: int
    value: float


def quartet_determinant(R, i, k, j, l) -> QuartetScore:
    """w(ik;jl) = R(i,j) R(k,l) - R(i,l) R(k,j).

    Zero exactly when (i,k) and (j,l) are sibling pairs of the induced
    quartet; antisymmetric under swapping j and l.
    """
    if len({i, k, j, l}) != 4:
        raise ReconstructionError("quartet indices must be distinct")
    v = R.values if isinstance(R, SimilarityMatrix) else np.asarray(R)
    w = v[i, j] * v[k, l] - v[i, l] * v[k, j]
    return QuartetScore(i=i, k=k, j=j, l=l, value=float(w))


FourPointResult = namedtuple("FourPointResult", ["pairing", "sums"])


def four_point_check(D, i, k, j, l) -> FourPointResult:
    """Which of the three pairings of {i,k,j,l} minimizes the pair-sum.

    On an exactly additive distance matrix the true sibling pairing is the
    strict minimum and the two losing sums are equal.  Returns the winning
    pairing and all three sums in the fixed enumeration order
    ``(i,k)(j,l)``, ``(i,j)(k,l)``, ``(i,l)(k,j)``; ties pick the earliest.
    """
    if len({i, k, j, l}) != 4:
        raise ReconstructionError("quartet indices must be distinct")
    v = D.values if isinstance(D, DistanceMatrix) else np.asarray(D)
    options = (
        (((i, k), (j, l)), v[i, k] + v[j, l]),
        (((i, j), (k, l)), v[i, j] + v[k, l]),
        (((i, l), (k, j)), v[i, l] + v[k, j]),
    )
    best = min(range(3), key=lambda idx: options[idx][1])
    return FourPointResult(
        pairing=options[best][0], sums=tuple(o[1] for o in options)
    )


def _quartet_tensor(X: np.ndarray) -> np.ndarray:
    """w[i,k,j,l] over the cross block X: X[i,j] X[k,l] - X[i,l] X[k,j]."""
    t1 = np.einsum("ij,kl->ikjl", X, X)
    return t1 - t1.transpose(0, 1, 3, 2)


def _check_disjoint_sets(m, a, b):
    sa = sorted(set(int(x) for x in a))
    sb = sorted(set(int(x) for x in b))
    if not sa or not sb:
        raise ReconstructionError("subsets must be non-empty")
    if set(sa) & set(sb):
        raise ReconstructionError("subsets must be disjoint")
    union = sa + sb
    if min(union) < 0 or max(union) >= m:
        raise ReconstructionError("index out of range")
    if len(union) > m - 2:
        raise ReconstructionError("union must leave at least two other leaves")
    return sorted(union)


def max_quartet_criterion(R, a, b) -> float:
    """M(A,B): max |w(ik;jl)| over i,k in the union and j,l outside.

    Exhaustive over all ordered index quadruples; zero (to fp) exactly when
    the union is a clan of the population tree.
    """
    values = R.values if isinstance(R, SimilarityMatrix) else np.asarray(R)
    union = _check_disjoint_sets(values.shape[0], a, b)
    X = cross_similarity(values, union)
    return float(np.max(np.abs(_quartet_tensor(X))))


def quartet_identity_residual(R, a, b, topology: Topology | None = None) -> float:
    """|4 sigma_1^2 sigma_2^2 - sum of squared quartet scores| on the union's
    cross block.

    The identity holds exactly when the block has rank at most 2, which is
    the case for population matrices whenever both subsets are clans; pass
    ``topology`` to have that checked.  Expected below 1e-8 * (1 + sum w^2)
    on population inputs.
    """
    values = R.values if isinstance(R, SimilarityMatrix) else np.asarray(R)
    union = _check_disjoint_sets(values.shape[0], a, b)
    if topology is not None:
        from .tree import is_clan

        if not (is_clan(topology, a) and is_clan(topology, b)):
            raise ReconstructionError("both subsets must be clans")
    X = cross_similarity(values, union)
    s = np.linalg.svd(X, compute_uv=False)
    lead = 4.0 * s[0] ** 2 * (s[1] ** 2 if s.size > 1 else 0.0)
    if X.size ** 2 <= 1 << 22:
        sum_w2 = float(np.sum(_quartet_tensor(X) ** 2))
    else:
        # contraction-free form of the same sum, for large blocks
        g = X @ X.T
        sum_w2 = 2.0 * float(np.sum(X * X) ** 2 - np.sum(g * g))
    return abs(lead - sum_w2)


# ---------------------------------------------------------------------------
# Merge traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MergeEvent:
    """One agglomeration step.

    ``active`` lists the subset identifiers (sorted leaf-index tuples) that
    were live at this step and ``values`` the full criterion matrix over
    them (aligned with ``active``, +inf on the diagonal), so the selection
    can be replayed; ``merged`` is the chosen pair and ``criterion`` its
    score.
    """

    step: int
    merged: tuple
    criterion: float
    active: tuple
    values: np.ndarray = field(repr=False)


@dataclass
class MergeTrace:
    """Ordered record of merges: m - 3 events, then one three-way join."""

    method: str
    events: list
    final_join: tuple
    warnings: list

    def to_jsonl(self, labels) -> str:
        """One JSON object per line: step, merged subsets (as labels),
        criterion; a final line records the three-way join and warnings."""
        lines = []
        for e in self.events:
            lines.append(json.dumps({
                "step": e.step,
                "merged": [[labels[i] for i in side] for side in e.merged],
                "criterion": e.criterion,
            }))
        lines.append(json.dumps({
            "step": len(self.events),
            "join": [[labels[i] for i in side] for side in self.final_join],
            "method": self.method,
            "warnings": self.warnings,
        }))
        return "\n".join(lines) + "\n"


_TIE_GAP = 1e-12


class _Agglomerator:
    """Shared subset bookkeeping and topology assembly for all engines."""

    def __init__(self, labels):
        self.labels = tuple(labels)
        m = len(labels)
        self.m = m
        self.ids = [(i,) for i in range(m)]  # sorted subset identifiers
        self.attach = {(i,): i for i in range(m)}
        self.next_node = m
        self.edges = []
        self.events = []
        self.warnings = []

    def record(self, values: np.ndarray, i: int, j: int):
        flat = values[np.triu_indices_from(values, 1)]
        if flat.size > 1:
            two = np.partition(flat, 1)[:2]
            if two[1] - two[0] < _TIE_GAP:
                self.warnings.append(
                    f"step {len(self.events)}: top-2 criterion gap "
                    f"{two[1] - two[0]:.3e} below {_TIE_GAP:g}; "
                    "lexicographic tie-break applied"
                )
        self.events.append(MergeEvent(
            step=len(self.events),
            merged=(self.ids[i], self.ids[j]),
            criterion=float(values[i, j]),
            active=tuple(self.ids),
            values=values.copy(),
        ))

    def merge(self, i: int, j: int):
        """Join subsets at positions i < j; returns the insert position of
        the merged subset in the id-sorted active list."""
        id_i, id_j = self.ids[i], self.ids[j]
        node = self.next_node
        self.next_node += 1
        self.edges.append((self.attach[id_i], node))
        self.edges.append((self.attach[id_j], node))
        new_id = tuple(sorted(id_i + id_j))
        self.attach[new_id] = node
        del self.ids[j], self.ids[i]
        pos = bisect.bisect(self.ids, new_id)
        self.ids.insert(pos, new_id)
        return pos, new_id

    def finish(self, method: str) -> tuple:
        assert len(self.ids) == 3
        node = self.next_node
        self.next_node += 1
        for sid in self.ids:
            self.edges.append((self.attach[sid], node))
        topo = Topology(self.labels, self.edges)
        trace = MergeTrace(method=method, events=self.events,
                           final_join=tuple(self.ids), warnings=self.warnings)
        return topo, trace


def _argmin_pair(values: np.ndarray):
    """Upper-triangle argmin, scanned row-major so exact ties resolve to the
    lexicographically smallest position pair (ids are kept sorted)."""
    k = values.shape[0]
    masked = values.copy()
    masked[np.tril_indices(k)] = np.inf
    flat = int(np.argmin(masked))
    return flat // k, flat % k


def _delete_insert(matrix: np.ndarray, i: int, j: int, pos: int,
                   new_row: np.ndarray) -> np.ndarray:
    """Drop rows/cols i < j, then insert new_row as row/col at pos."""
    keep = np.delete(np.arange(matrix.shape[0]), [i, j])
    shrunk = matrix[np.ix_(keep, keep)]
    out = np.insert(shrunk, pos, new_row, axis=0)
    col = np.insert(new_row, pos, np.inf)
    return np.insert(out, pos, col, axis=1)


# ---------------------------------------------------------------------------
# SNJ
# ---------------------------------------------------------------------------


_SCREEN_RANK = 4
_SCREEN_SWEEPS = 3
_SCREEN_MARGIN = 4.0
_SCREEN_SLACK = 1e-6


def _screen_sigma2_batch(blocks32: np.ndarray):
    """Fast underestimating screen of sigma_2 for a stack of float32 blocks.

    Runs a few power-subspace sweeps from a fixed start basis and extracts
    Ritz singular values from the rectangular projection Q^T X, which never
    overshoots the true values (Cauchy interlacing); when the subspace rank
    reaches the small dimension the projection is exact up to float32
    rounding.  Returns (sigma2_screen, sigma1_screen).  Deterministic: the
    start basis is a fixed seeded draw.
    """
    g, s, t = blocks32.shape
    X = blocks32 if s <= t else blocks32.transpose(0, 2, 1)
    small, large = X.shape[1], X.shape[2]
    k = min(_SCREEN_RANK, small)
    start = np.random.default_rng(0x5EED).standard_normal((large, k))
    V = np.broadcast_to(start.astype(np.float32), (g, large, k))
    Xt = X.transpose(0, 2, 1)
    for _ in range(_SCREEN_SWEEPS):
        V = Xt @ (X @ V)
        # one rescale per sweep keeps float32 exponents in range
        V = V / np.maximum(np.abs(V).max(axis=(1, 2), keepdims=True), 1e-30)
        if k >= small:
            break
    Q, _ = np.linalg.qr(X @ V)
    B = Q.transpose(0, 2, 1) @ X
    sv = np.linalg.svd(B, compute_uv=False)
    return sv[:, 1].astype(float), sv[:, 0].astype(float)


def _batched_sigma2(R: np.ndarray, row_sets: list,
                    R32: np.ndarray | None = None) -> np.ndarray:
    """sigma_2 of the cross block of each row set, batched by equal shape.

    Blocks up to 64x64 get a full dense SVD.  Larger blocks are first
    ranked by the iterative screen; every block whose screened value could
    still compete for the minimum (within _SCREEN_MARGIN of the screened
    minimum plus an absolute slack) is recomputed by dense SVD, so the
    merge selection matches a full dense evaluation whenever the screen
    underestimates by less than the margin.  Values returned for the
    clearly uncompetitive blocks are the screened ones.
    """
    m = R.shape[0]
    sizes = {}
    for idx, rows in enumerate(row_sets):
        sizes.setdefault(len(rows), []).append(idx)
    out = np.empty(len(row_sets))
    refine: list[tuple[int, np.ndarray, np.ndarray]] = []
    screened_min = np.inf
    sigma1_max = 0.0
    for size, members in sizes.items():
        rows_arr = np.array([row_sets[i] for i in members])
        mask = np.ones((len(members), m), dtype=bool)
        mask[np.arange(len(members))[:, None], rows_arr] = False
        cols_arr = np.nonzero(mask)[1].reshape(len(members), m - size)
        if max(size, m - size) <= _DENSE_SVD_LIMIT:
            blocks = R[rows_arr[:, :, None], cols_arr[:, None, :]]
            sv = np.linalg.svd(blocks, compute_uv=False)
            out[members] = sv[:, 1]
        else:
            src = R32 if R32 is not None else R
            blocks32 = np.ascontiguousarray(
                src[rows_arr[:, :, None], cols_arr[:, None, :]],
                dtype=np.float32,
            )
            s2, s1 = _screen_sigma2_batch(blocks32)
            out[members] = s2
            screened_min = min(screened_min, float(s2.min()))
            sigma1_max = max(sigma1_max, float(s1.max()))
            refine.extend(zip(members, rows_arr, cols_arr))
    if refine:
        cutoff = _SCREEN_MARGIN * screened_min + _SCREEN_SLACK * sigma1_max
        for idx, rows, cols in refine:
            if out[idx] <= cutoff:
                out[idx] = _sigma2_dense(R[np.ix_(rows, cols)])
    return out


def snj(similarity: SimilarityMatrix):
    """Spectral neighbor joining on an affinity matrix.

    Starts from singleton subsets, repeatedly merges the pair whose union's
    cross block has the smallest second singular value, and joins the last
    three subsets at one internal node.  Criterion values for pairs that do
    not involve the newly merged subset are unchanged by a merge, so each
    step only evaluates the new subset against the survivors.
    """
    R, labels = _similarity_input(similarity)
    m = len(labels)
    R32 = R.astype(np.float32) if m > _DENSE_SVD_LIMIT else None
    eng = _Agglomerator(labels)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    sig = _batched_sigma2(R, [[i, j] for i, j in pairs], R32)
    values = np.full((m, m), np.inf)
    for (i, j), s in zip(pairs, sig):
        values[i, j] = values[j, i] = s
    while len(eng.ids) > 3:
        i, j = _argmin_pair(values)
        eng.record(values, i, j)
        pos, new_id = eng.merge(i, j)
        if len(eng.ids) == 3:
            break
        partners = [sid for sid in eng.ids if sid != new_id]
        new_row = _batched_sigma2(
            R, [list(new_id) + list(p) for p in partners], R32
        )
        values = _delete_insert(values, i, j, pos, new_row)
    return eng.finish("snj")


def _similarity_input(similarity):
    if isinstance(similarity, SimilarityMatrix):
        v, labels = similarity.values, similarity.labels
    else:
        v = np.asarray(similarity, dtype=float)
        labels = tuple(str(i) for i in range(v.shape[0]))
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ReconstructionError("similarity matrix must be square")
        if np.max(np.abs(v - v.T), initial=0.0) > 1e-12:
            raise ReconstructionError("similarity matrix must be symmetric")
        if np.any(v < 0) or np.any(v > 1):
            raise ReconstructionError("similarity entries must lie in [0,1]")
    if v.shape[0] < 4:
        raise ReconstructionError("reconstruction needs m >= 4")
    return v, labels


# ---------------------------------------------------------------------------
# Canonical NJ
# ---------------------------------------------------------------------------


def nj(distance: DistanceMatrix):
    """Canonical neighbor joining (Studier-Keppler).

    Q(i,j) = (k - 2) D(i,j) - sum_k D(k,i) - sum_k D(k,j) over the k active
    nodes (full row sums, zero diagonal); the merged pair is replaced by a
    node at distance D(v,new) = (D(v,i) + D(v,j) - D(i,j)) / 2 from every
    survivor, and Q is recomputed from the reduced matrix.
    """
    if isinstance(distance, DistanceMatrix):
        D, labels = distance.values.copy(), distance.labels
    else:
        D = np.asarray(distance, dtype=float).copy()
        labels = tuple(str(i) for i in range(D.shape[0]))
        if (D.ndim != 2 or D.shape[0] != D.shape[1]
                or np.max(np.abs(D - D.T), initial=0.0) > 1e-12
                or np.any(np.diag(D) != 0) or np.any(D < 0)):
            raise ReconstructionError("invalid distance matrix")
    m = D.shape[0]
    if m < 4:
        raise ReconstructionError("reconstruction needs m >= 4")
    eng = _Agglomerator(labels)
    while len(eng.ids) > 3:
        k = D.shape[0]
        rows = D.sum(axis=0)
        Q = (k - 2) * D - rows[None, :] - rows[:, None]
        np.fill_diagonal(Q, np.inf)
        i, j = _argmin_pair(Q)
        eng.record(Q, i, j)
        pos, _ = eng.merge(i, j)
        d_new = 0.5 * (D[i] + D[j] - D[i, j])
        d_new = np.delete(d_new, [i, j])
        keep = np.delete(np.arange(k), [i, j])
        D = D[np.ix_(keep, keep)]
        D = np.insert(D, pos, d_new, axis=0)
        D = np.insert(D, pos, np.insert(d_new, pos, 0.0), axis=1)
    return eng.finish("nj")


# ---------------------------------------------------------------------------
# Max-quartet NJ
# ---------------------------------------------------------------------------


def max_quartet_nj(similarity: SimilarityMatrix):
    """Neighbor joining with the exhaustive max-quartet merge criterion.

    Identical loop structure to :func:`snj` with M(A,B), the largest
    absolute quartet determinant straddling the candidate union, as the
    score to minimize.  Criterion evaluation is quartic in the subset sizes,
    so this engine is only practical for moderate m.
    """
    R, labels = _similarity_input(similarity)
    m = len(labels)
    eng = _Agglomerator(labels)

    def score(union):
        X = cross_similarity(R, union)
        return float(np.max(np.abs(_quartet_tensor(X))))

    values = np.full((m, m), np.inf)
    for i in range(m):
        for j in range(i + 1, m):
            values[i, j] = values[j, i] = score([i, j])
    while len(eng.ids) > 3:
        i, j = _argmin_pair(values)
        eng.record(values, i, j)
        pos, new_id = eng.merge(i, j)
        if len(eng.ids) == 3:
            break
        partners = [sid for sid in eng.ids if sid != new_id]
        new_row = np.array([score(list(new_id) + list(p)) for p in partners])
        values = _delete_insert(values, i, j, pos, new_row)
    return eng.finish("maxq")
