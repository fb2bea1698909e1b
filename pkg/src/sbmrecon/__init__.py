"""Community recovery on sparse block models via broadcast trees and local BP."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ConditionReport,
    Model,
    ModelSpec,
    NoiseMatrix,
    Spectrum,
    TransitionSpec,
    analyze,
    check_conditions,
    derive_transition,
    eigendecompose,
    kesten_stigum,
    perturbation_family,
)
from .tree import (  # noqa: E402
    BroadcastTree,
    apply_noise,
    count_leaf_paths,
    level_statistics,
    one_hot,
    sample_forest,
    sample_tree,
)
from .estimators import (  # noqa: E402
    bp_posterior,
    bp_posterior_noisy,
    error_matrix_mc,
    estimate_E_m,
    exact_posterior_bruteforce,
    iterated_majority_classify,
    majority_classify,
    weighted_sum,
)
