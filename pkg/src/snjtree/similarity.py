"""Similarity and distance matrices: estimators, transforms, and the
threshold / sample-size calculators.

Two estimators are provided.  The Jukes-Cantor estimator converts pairwise
mismatch fractions through the JC affinity formula with the rate clamped at
(d-1)/d.  The log-determinant estimator builds empirical conditional
transition matrices from joint state counts and takes the geometric mean of
the two determinant magnitudes; it needs every state to appear at least
once in every row.

The sample-size calculators are diagnostic upper bounds; nothing in the
benchmark harness gates on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CharacterMatrix


class SimilarityError(ValueError):
    """Estimator failure or matrix contract violation."""


def _check_square_symmetric(values, what: str, tol: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise SimilarityError(f"{what} must be square, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise SimilarityError(f"{what} has non-finite entries")
    if np.max(np.abs(v - v.T), initial=0.0) > tol:
        raise SimilarityError(f"{what} is not symmetric within {tol}")
    return v


class SimilarityMatrix:
    """Symmetric m x m affinity matrix with entries in [0, 1], diagonal 1."""

    __slots__ = ("values", "labels")

    def __init__(self, values, labels):
        v = _check_square_symmetric(values, "similarity matrix", 1e-15)
        if np.any(v < 0) or np.any(v > 1):
            raise SimilarityError("similarity entries must lie in [0, 1]")
        labels = tuple(labels)
        if len(labels) != v.shape[0]:
            raise SimilarityError("one label per row required")
        v = v.copy()
        np.fill_diagonal(v, 1.0)
        self.values = v
        self.labels = labels

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def save_csv(self, path):
        _save_matrix_csv(path, self.labels, self.values)

    @classmethod
    def load_csv(cls, path) -> "SimilarityMatrix":
        labels, values = _load_matrix_csv(path)
        return cls(values, labels)


class DistanceMatrix:
    """Symmetric nonnegative m x m matrix with zero diagonal, finite entries."""

    __slots__ = ("values", "labels")

    def __init__(self, values, labels):
        v = _check_square_symmetric(values, "distance matrix", 1e-12)
        if np.any(v < 0):
            raise SimilarityError("distances must be nonnegative")
        labels = tuple(labels)
        if len(labels) != v.shape[0]:
            raise SimilarityError("one label per row required")
        v = v.copy()
        np.fill_diagonal(v, 0.0)
        self.values = v
        self.labels = labels

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def save_csv(self, path):
        _save_matrix_csv(path, self.labels, self.values)

    @classmethod
    def load_csv(cls, path) -> "DistanceMatrix":
        labels, values = _load_matrix_csv(path)
        return cls(values, labels)


def _save_matrix_csv(path, labels, values):
    with open(path, "w") as fh:
        fh.write(",".join(labels) + "\n")
        for row in values:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def _load_matrix_csv(path):
    with open(path) as fh:
        labels = fh.readline().strip().split(",")
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    return labels, values


@dataclass(frozen=True)
class EstimatorDiagnostics:
    """gamma: minimum per-leaf state frequency; clamp_count: entries clamped."""

    gamma: float
    clamp_count: int


def _state_gamma(x: CharacterMatrix):
    """Minimum per-leaf state frequency plus the first starving (leaf, state)."""
    counts = np.stack(
        [np.bincount(row, minlength=x.d + 1)[1:] for row in x.data]
    )
    flat = int(np.argmin(counts))
    leaf, state = divmod(flat, x.d)
    return counts.min() / x.n, x.leaf_labels[leaf], state + 1


def estimate_jc_similarity(x: CharacterMatrix):
    """JC plug-in estimate from pairwise mismatch fractions.

    theta_hat(i,j) = min(mismatch fraction, (d-1)/d) and
    R_hat(i,j) = (1 - d/(d-1) * theta_hat)**(d-1).  Clamping absorbs
    degenerate inputs; the number of clamped pairs is reported.
    """
    m, n, d = x.m, x.n, x.d
    data = x.data
    mismatch = np.zeros((m, m))
    for i in range(m):
        mismatch[i, i + 1:] = np.mean(data[i + 1:] != data[i], axis=1)
    mismatch += mismatch.T
    cap = (d - 1) / d
    clamp_count = int(np.sum(mismatch[np.triu_indices(m, 1)] > cap))
    theta = np.minimum(mismatch, cap)
    r = (1.0 - d / (d - 1) * theta) ** (d - 1)
    np.fill_diagonal(r, 1.0)
    gamma, _, _ = _state_gamma(x)
    return (
        SimilarityMatrix(r, x.leaf_labels),
        EstimatorDiagnostics(gamma=float(gamma), clamp_count=clamp_count),
    )


def estimate_logdet_similarity(x: CharacterMatrix, smoothing: float = 0.0):
    """General-model estimate from empirical conditional determinants.

    For each pair, the d x d joint count table is column-normalized both
    ways to get conditional matrices P(x_i | x_j) and P(x_j | x_i);
    R_hat(i,j) is the geometric mean of the two determinant magnitudes,
    clamped into [0, 1].  ``smoothing`` adds a constant to every joint count
    (default 0, matching the raw-count definition).

    Fails if any state never appears in some row (gamma = 0), naming the
    starving leaf and state: the conditional matrices would be singular by
    construction.
    """
    if smoothing < 0:
        raise SimilarityError("smoothing must be nonnegative")
    m, d = x.m, x.d
    gamma, starving_leaf, starving_state = _state_gamma(x)
    if gamma == 0.0 and smoothing == 0.0:
        raise SimilarityError(
            f"state {starving_state} never appears for leaf "
            f"{starving_leaf!r}; conditional matrices are singular"
        )
    r = np.eye(m)
    clamp_count = 0
    for i in range(m):
        for j in range(i + 1, m):
            joint = np.zeros((d, d))
            np.add.at(joint, (x.data[i] - 1, x.data[j] - 1), 1.0)
            joint += smoothing
            col_j = joint.sum(axis=0)
            col_i = joint.sum(axis=1)
            p_i_given_j = joint / col_j
            p_j_given_i = joint.T / col_i
            value = math.sqrt(
                abs(np.linalg.det(p_i_given_j))
                * abs(np.linalg.det(p_j_given_i))
            )
            if value > 1.0:
                clamp_count += 1
                value = 1.0
            r[i, j] = r[j, i] = value
    return (
        SimilarityMatrix(r, x.leaf_labels),
        EstimatorDiagnostics(gamma=float(gamma), clamp_count=clamp_count),
    )


def affinity_to_distance(r: SimilarityMatrix) -> DistanceMatrix:
    """Paralinear distances D(i,j) = -log R(i,j); rejects zero affinities."""
    v = r.values
    zero = np.argwhere((v <= 0) & ~np.eye(r.m, dtype=bool))
    if zero.size:
        i, j = zero[0]
        raise SimilarityError(
            f"affinity 0 between {r.labels[i]!r} and {r.labels[j]!r} "
            "gives an infinite distance"
        )
    d = -np.log(v)
    np.fill_diagonal(d, 0.0)
    d = (d + d.T) / 2.0
    return DistanceMatrix(d, r.labels)


def distance_to_affinity(d: DistanceMatrix) -> SimilarityMatrix:
    """Inverse transform R(i,j) = exp(-D(i,j))."""
    r = np.exp(-d.values)
    np.fill_diagonal(r, 1.0)
    r = (r + r.T) / 2.0
    return SimilarityMatrix(r, d.labels)


# ---------------------------------------------------------------------------
# Threshold and sample-size formulas
# ---------------------------------------------------------------------------


def _check_bounds(m: int, delta: float, xi: float):
    if m < 4:
        raise SimilarityError("need m >= 4")
    if not (0.0 < delta <= xi < 1.0):
        raise SimilarityError("need 0 < delta <= xi < 1")


def sigma2_population_floor(m: int, delta: float, xi: float) -> float:
    """Lower bound on sigma_2 of a non-adjacent clan-pair cross block:
    f(m, delta, xi) = 0.5 * (2 delta^2)^(log2(m/2)) * delta * (1 - xi^2)
    for delta^2 <= 0.5, and delta^3 (1 - xi^2) otherwise."""
    _check_bounds(m, delta, xi)
    if delta ** 2 <= 0.5:
        return 0.5 * (2 * delta ** 2) ** math.log2(m / 2) * delta * (1 - xi ** 2)
    return delta ** 3 * (1 - xi ** 2)


def snj_error_threshold(m: int, delta: float, xi: float) -> float:
    """Spectral-norm error budget under which the spectral merge criterion
    still ranks every adjacent clan pair below every non-adjacent one:
    half the population sigma_2 floor."""
    return sigma2_population_floor(m, delta, xi) / 2.0


def jc_sample_bound(m: int, d: int, delta: float, xi: float,
                    epsilon: float) -> int:
    """Samples sufficient for the spectral engine to recover the tree with
    probability >= 1 - epsilon under the JC model (a loose upper bound)."""
    _check_bounds(m, delta, xi)
    if d < 2:
        raise SimilarityError("need d >= 2")
    if not (0.0 < epsilon < 1.0):
        raise SimilarityError("epsilon must lie in (0,1)")
    if delta ** 2 <= 0.5:
        f = sigma2_population_floor(m, delta, xi)
        n = 2 * d ** 2 * m ** 2 / f ** 2 * math.log(2 * m ** 2 / epsilon)
    else:
        n = (2 * d ** 2 * m ** 2 / (delta ** 6 * (1 - xi ** 2) ** 2)
             * math.log(2 * m ** 2 / epsilon))
    return math.ceil(n)


def maxq_sample_bound(m: int, d: int, delta: float, depth: int,
                      epsilon: float) -> int:
    """Samples sufficient for the max-quartet engine:
    100 d^2 log(2 m^2 / epsilon) delta^(-4 (depth + 1))."""
    if m < 4 or d < 2 or depth < 1:
        raise SimilarityError("need m >= 4, d >= 2, depth >= 1")
    if not (0.0 < delta < 1.0):
        raise SimilarityError("delta must lie in (0,1)")
    if not (0.0 < epsilon < 1.0):
        raise SimilarityError("epsilon must lie in (0,1)")
    n = 100 * d ** 2 * math.log(2 * m ** 2 / epsilon) * delta ** (-4 * (depth + 1))
    return math.ceil(n)
