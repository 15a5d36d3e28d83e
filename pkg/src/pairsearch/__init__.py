"""Rank aggregation from pairwise preference probabilities by merge search."""

from .baselines import (
    EloConfig,
    SamplingSchedule,
    efficiency_curve,
    elo_aggregate,
    sample_pairs,
    winloss_aggregate,
)
from .comparator import (
    CachingComparator,
    CalibratedComparator,
    Comparator,
    ComparatorError,
    ComparisonQuery,
    ConfigError,
    CountingComparator,
    Judge,
    LlmClientConfig,
    LlmComparator,
    MatrixComparator,
    SyntheticComparator,
    SyntheticOracleConfig,
    btl_probability,
    build_prompt,
    extract_preference,
    load_template,
)
from .core import (
    Candidate,
    CandidateSet,
    ComparisonRecord,
    PreferenceMatrix,
    Provenance,
    Ranking,
    entropy_uncertainty,
    kemeny_optimal,
    mle_transitive_exhaustive,
    non_transitive_log_likelihood,
    synthetic_group,
    transitive_log_likelihood,
)
from .metrics import (
    ScorePosterior,
    ScorePrior,
    anchor_kl_experiment,
    calibrate_scores,
    dataset_level_correlation,
    estimate_prior,
    kl_divergence,
    mae,
    quantile_match,
    sample_level_correlation,
    spearman,
    transitivity_error,
)
from .ranker import (
    AnchorConfig,
    RankerConfig,
    anchor_size,
    binary_insert,
    merge_beam,
    merge_greedy,
    pairs_scaled,
    pairs_sort,
    rank,
)

__version__ = "0.1.0"
