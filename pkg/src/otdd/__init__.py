"""Optimal transport dataset distance (OTDD) between labeled datasets."""

__version__ = "0.1.0"

from .dataset import ClassIndex, LabeledDataset, class_partition, load_binary, load_csv, load_dataset, save_binary, save_csv, subsample
from .distance import (
    LabelDistanceMatrix,
    OtddConfig,
    OtddResult,
    augmented_embed,
    coupling_class_mass,
    feature_ot_distance,
    ground_cost,
    label_distance_matrix_exact,
    label_distance_matrix_gaussian,
    label_distance_matrix_means,
    otdd_distance,
    otdd_distance_augmented,
)
from .errors import ConvergenceError, DataError, DimensionMismatchError, OtddError, SizeCapError, SolverError
from .linalg import bures_w2_squared, bures_w2_squared_commuting, spd_sqrt_exact, spd_sqrt_newton_schulz
from .otsolve import TransportPlan, exact_ot, sinkhorn, sinkhorn_divergence
from .stats import MomentSummary, all_moments, class_moments
