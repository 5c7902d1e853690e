"""Latent tree topology reconstruction from character sequences.

Spectral neighbor joining (second-singular-value merging on an affinity
matrix), canonical neighbor joining, and an exhaustive max-quartet variant,
together with tree generators, a Jukes-Cantor sequence simulator, similarity
estimators, and a reproducible benchmark harness.
"""

from .tree import (
    Bipartition,
    EdgeAffinities,
    NewickError,
    Topology,
    TreeError,
    bipartitions,
    cherry_count,
    clan_leafsets,
    is_clan,
    parse_newick,
    parse_newick_with_affinities,
    rf_distance,
    tree_depth,
    tree_diameter,
    write_newick,
)
from .generate import (
    GenSpec,
    assign_constant_affinity,
    assign_gamma_affinity,
    birth_death,
    caterpillar,
    coalescent,
    perfect_binary,
    tight_example_tree,
)
from .model import (
    CharacterMatrix,
    MarkovTreeModel,
    ModelError,
    SiteRates,
    TransitionMatrix,
    affinity_from_theta,
    jc_transition,
    model_from_affinities,
    population_similarity,
    simulate,
    theta_from_affinity,
)
from .similarity import (
    DistanceMatrix,
    EstimatorDiagnostics,
    SimilarityError,
    SimilarityMatrix,
    affinity_to_distance,
    distance_to_affinity,
    estimate_jc_similarity,
    estimate_logdet_similarity,
    jc_sample_bound,
    maxq_sample_bound,
    sigma2_population_floor,
    snj_error_threshold,
)
from .reconstruct import (
    FourPointResult,
    MergeEvent,
    MergeTrace,
    QuartetScore,
    ReconstructionError,
    cross_similarity,
    four_point_check,
    max_quartet_criterion,
    max_quartet_nj,
    nj,
    quartet_determinant,
    quartet_identity_residual,
    second_singular_value,
    snj,
)

__version__ = "0.1.0"
