"""Block-model graphs and the local amplification algorithm."""

from .algorithm import (
    Algorithm1Config,
    NoiseEstimationConfig,
    coupling_radius,
    draw_U,
    estimate_noise_matrix,
    project_simplex,
    reconstruct_algorithm1,
)
from .partition import (
    Partition,
    align_partitions,
    best_permutation,
    black_box_partition,
    confusion,
    overlap_accuracy,
)
from .sbm import Ball, SbmInstance, ball, from_edges, labels_from_text, labels_to_text, sample_sbm

__all__ = [
    "Algorithm1Config",
    "Ball",
    "NoiseEstimationConfig",
    "Partition",
    "SbmInstance",
    "align_partitions",
    "ball",
    "best_permutation",
    "black_box_partition",
    "confusion",
    "coupling_radius",
    "draw_U",
    "estimate_noise_matrix",
    "from_edges",
    "labels_from_text",
    "labels_to_text",
    "overlap_accuracy",
    "project_simplex",
    "reconstruct_algorithm1",
    "sample_sbm",
]
