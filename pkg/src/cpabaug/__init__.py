"""Learned data augmentation with continuous piecewise-affine diffeomorphisms."""

from .alignment import AlignConfig, AlignResult, log_likelihood, metropolis_align
from .augment import (
    AugmentedDataset,
    LearnedModels,
    PipelineConfig,
    generate_augmented,
    knn_graph,
    learn_class_models,
)
from .basis import CpaBasis, build_basis
from .class_model import ClassModel, TangentSampleSet, close_under_inversion, fit_covariance
from .dataset_io import LabeledDataset, ModelState, read_dataset, read_model, write_model
from .estimator import CpabAugmenter
from .evaluation import EvalReport, NearestNeighborClassifier, compare_augmentation, knn_classify
from .prior import PriorConfig, ThetaPrior, build_prior
from .tessellation import Tessellation, build_crossed_tessellation
from .transform import IntegrationConfig, Transformation, inverse, transform_points, warp_image

__version__ = "0.1.0"

__all__ = [
    "AlignConfig", "AlignResult", "AugmentedDataset", "ClassModel", "CpaBasis", "CpabAugmenter",
    "EvalReport", "IntegrationConfig", "LabeledDataset", "LearnedModels", "ModelState",
    "NearestNeighborClassifier", "PipelineConfig", "PriorConfig", "TangentSampleSet",
    "Tessellation", "ThetaPrior", "Transformation", "build_basis", "build_crossed_tessellation",
    "build_prior", "close_under_inversion", "compare_augmentation", "fit_covariance",
    "generate_augmented", "inverse", "knn_classify", "knn_graph", "learn_class_models",
    "log_likelihood", "metropolis_align", "read_dataset", "read_model", "transform_points",
    "warp_image", "write_model",
]
