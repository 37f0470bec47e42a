"""Scikit-learn style wrapper around the learned-augmentation pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .alignment import AlignConfig
from .augment import PipelineConfig, generate_augmented, learn_class_models
from .dataset_io import LabeledDataset, ModelState
from .prior import PriorConfig
from .transform import IntegrationConfig


class CpabAugmenter(BaseEstimator):
    """Learn per-class deformation models from images and sample new images.

    ``fit`` aligns kNN pairs within each class and fits one tangent-space
    Gaussian per class; ``generate`` warps training images by transformations
    drawn from those models. Parameters mirror ``PipelineConfig`` flattened
    so that ``get_params``/``set_params`` and ``clone`` work as usual.

    Parameters
    ----------
    K : int, default=5
    images_per_class_for_graph : int, default=500
    samples_per_class_out : int, default=10000
    source_pool : {"full_train", "graph_subset"}, default="full_train"
    sigma, iterations, proposal_scale, burn_in, posterior_draw :
        Metropolis alignment settings.
    n_steps, method :
        Integration settings used for alignment and generation.
    lengthscale, amplitude :
        Prior settings.
    tessellation : tuple of int, default=(4, 4)
    shrinkage : float, default=0.0
    both_directions : bool, default=False
    check_jacobian : bool, default=True
    random_state : int, default=0
        Base seed for every derived random stream.
    n_jobs : int, default=1

    Attributes
    ----------
    classes_ : ndarray
    models_ : dict of int to ClassModel
    basis_ : CpaBasis
    learned_ : LearnedModels
    image_shape_ : tuple of int
    """

    def __init__(self, K=5, images_per_class_for_graph=500, samples_per_class_out=10_000,
                 source_pool="full_train", sigma=0.1, iterations=2000, proposal_scale=0.01,
                 burn_in=None, posterior_draw=False, n_steps=50, method="rk4", lengthscale=0.1,
                 amplitude=1.0, tessellation=(4, 4), shrinkage=0.0, both_directions=False,
                 check_jacobian=True, random_state=0, n_jobs=1):
        self.K = K
        self.images_per_class_for_graph = images_per_class_for_graph
        self.samples_per_class_out = samples_per_class_out
        self.source_pool = source_pool
        self.sigma = sigma
        self.iterations = iterations
        self.proposal_scale = proposal_scale
        self.burn_in = burn_in
        self.posterior_draw = posterior_draw
        self.n_steps = n_steps
        self.method = method
        self.lengthscale = lengthscale
        self.amplitude = amplitude
        self.tessellation = tessellation
        self.shrinkage = shrinkage
        self.both_directions = both_directions
        self.check_jacobian = check_jacobian
        self.random_state = random_state
        self.n_jobs = n_jobs

    def to_config(self) -> PipelineConfig:
        align = AlignConfig(sigma=self.sigma, iterations=self.iterations,
                            proposal_scale=self.proposal_scale, burn_in=self.burn_in,
                            posterior_draw=self.posterior_draw,
                            integration=IntegrationConfig(self.n_steps, self.method))
        return PipelineConfig(
            images_per_class_for_graph=self.images_per_class_for_graph, K=self.K,
            samples_per_class_out=self.samples_per_class_out, source_pool=self.source_pool,
            align=align, prior=PriorConfig(self.lengthscale, self.amplitude),
            tessellation=tuple(self.tessellation), base_seed=int(self.random_state),
            shrinkage=self.shrinkage, both_directions=self.both_directions,
            check_jacobian=self.check_jacobian, n_jobs=self.n_jobs)

    def _images(self, X, y=None):
        if y is None:
            X = check_array(X, allow_nd=True, dtype=np.float64)
        else:
            X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        if X.ndim == 2:
            side = int(round(np.sqrt(X.shape[1])))
            if side * side != X.shape[1]:
                raise ValueError("flattened images must be square; pass (n, H, W) instead")
            X = X.reshape(len(X), side, side)
        elif X.ndim != 3:
            raise ValueError(f"expected (n, H, W) or (n, H*W) images, got shape {X.shape}")
        return X, y

    def fit(self, X, y):
        """Learn one deformation model per class of ``(X, y)``."""
        images, y = self._images(X, y)
        cfg = self.to_config()
        data = LabeledDataset(images, y)
        self.learned_ = learn_class_models(data, cfg)
        self.basis_ = self.learned_.basis
        self.models_ = self.learned_.models
        self.classes_ = data.classes
        self.image_shape_ = images.shape[1:]
        self._train = data
        return self

    def generate(self, n_per_class=None, return_provenance=False):
        """Sample augmented images from the fitted models.

        Returns
        -------
        X_aug : ndarray, shape (n_classes * n_per_class, H, W)
        y_aug : ndarray
        provenance : list of dict, only if ``return_provenance``
        """
        check_is_fitted(self, "models_")
        out = generate_augmented(self._train, self.models_, self.basis_, self.to_config(),
                                 n_per_class, self.learned_.graph_indices)
        if return_provenance:
            return out.images, out.labels, out.provenance
        return out.images, out.labels

    def fit_resample(self, X, y, n_per_class=None):
        """Fit, then return the training set with the generated images appended."""
        self.fit(X, y)
        X_aug, y_aug = self.generate(n_per_class)
        return np.concatenate([self._train.images, X_aug]), np.concatenate([self._train.labels, y_aug])

    def model_state(self) -> ModelState:
        """Fitted state in the form written by ``write_model``."""
        check_is_fitted(self, "models_")
        cfg = self.to_config()
        return ModelState(self.basis_, cfg.prior, self.models_, cfg.to_dict(), cfg.base_seed,
                          graph_indices=self.learned_.graph_indices)
