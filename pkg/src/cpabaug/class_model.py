"""Per-class Gaussian over tangent vectors at the identity transformation."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .basis import CpaBasis
from .transform import Transformation

logger = logging.getLogger(__name__)

EIGEN_RTOL = 1e-12
SPAN_TOL = 1e-6


@dataclass(frozen=True)
class TangentSampleSet:
    """Tangent coordinates of the transformations estimated within one class."""

    label: int
    thetas: np.ndarray = field(repr=False)
    closed_under_inversion: bool = False

    def __post_init__(self):
        thetas = np.array(self.thetas, dtype=float)
        if thetas.ndim != 2:
            raise ValueError(f"thetas must be a 2-D array, got shape {thetas.shape}")
        object.__setattr__(self, "thetas", thetas)

    def __len__(self) -> int:
        return len(self.thetas)


def _negation_deficits(thetas: np.ndarray):
    """Yield ``(vector, excess)`` for each {theta, -theta} class, once per class.

    ``excess`` counts how many more copies of ``vector`` than of ``-vector``
    the set holds.
    """
    counts = Counter(tuple(t) for t in thetas)
    first_seen = {}
    for t in thetas:
        first_seen.setdefault(tuple(t), t)
    done = set()
    for key, vec in first_seen.items():
        neg = tuple(-vec)
        if key in done or neg in done:
            continue
        done.add(key)
        if neg == key:  # the zero vector is its own inverse
            continue
        yield vec, counts[key] - counts.get(neg, 0)


def close_under_inversion(samples: TangentSampleSet) -> TangentSampleSet:
    """Append ``-theta`` for every ``theta`` that has no negated partner."""
    if samples.closed_under_inversion:
        return samples
    thetas = samples.thetas
    extra = []
    for vec, excess in _negation_deficits(thetas):
        if excess > 0:
            extra.extend([-vec] * excess)
        elif excess < 0:
            extra.extend([vec] * -excess)
    if extra:
        thetas = np.vstack([thetas, np.array(extra)])
    return TangentSampleSet(samples.label, thetas, True)


def intrinsic_mean_gradient(samples: TangentSampleSet) -> np.ndarray:
    """Sum of the tangent vectors at the identity.

    Each ``theta`` is cancelled against its exact negation before anything
    else is summed, so an inversion-closed set gives an exact zero.
    """
    thetas = samples.thetas
    if len(thetas) == 0:
        raise ValueError("cannot take the gradient of an empty sample set")
    grad = np.zeros(thetas.shape[1])
    for vec, excess in _negation_deficits(thetas):
        if excess:
            grad = grad + excess * vec
    return grad


@dataclass(frozen=True)
class ClassModel:
    """Zero-mean Gaussian ``N(0, sigma)`` over tangent vectors of one class."""

    label: int
    sigma: np.ndarray = field(repr=False)
    n_samples: int
    shrinkage: float = 0.0
    eigenvalues: np.ndarray = field(init=False, repr=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma must be a square matrix")
        if np.abs(sigma - sigma.T).max(initial=0.0) > 1e-10:
            raise ValueError("sigma must be symmetric")
        lam, vec = np.linalg.eigh(sigma)
        lam, vec = lam[::-1], vec[:, ::-1]
        lam = np.where(lam < 0, 0.0, lam)  # only round-off negatives reach here
        idx = np.argmax(np.abs(vec), axis=0)
        signs = np.sign(vec[idx, np.arange(vec.shape[1])])
        vec = vec * np.where(signs == 0, 1.0, signs)
        for arr in (sigma, lam, vec):
            arr.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", vec)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def retained(self) -> np.ndarray:
        lam = self.eigenvalues
        if lam.size == 0 or lam[0] <= 0:
            return np.zeros(lam.shape, dtype=bool)
        return lam > EIGEN_RTOL * lam[0]

    @property
    def rank(self) -> int:
        return int(self.retained.sum())

    def log_density(self, theta) -> float:
        return log_density(self, theta)

    def sample_theta(self, rng: np.random.Generator, scale: float = 1.0, size=None) -> np.ndarray:
        keep = self.retained
        root = self.eigenvectors[:, keep] * np.sqrt(self.eigenvalues[keep])
        if size is None:
            return scale * (root @ rng.standard_normal(root.shape[1]))
        return scale * (rng.standard_normal((size, root.shape[1])) @ root.T)

    def sample(self, basis: CpaBasis, rng: np.random.Generator, scale: float = 1.0) -> Transformation:
        return sample_transformation(self, basis, rng, scale)

    def principal_components(self, k: int):
        return principal_components(self, k)


def fit_covariance(samples: TangentSampleSet, shrinkage: float = 0.0) -> ClassModel:
    """Second moment of the tangent vectors, optionally shrunk towards a scaled identity."""
    if not samples.closed_under_inversion:
        raise ValueError("samples must be closed under inversion; call close_under_inversion first")
    if not 0.0 <= shrinkage < 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1), got {shrinkage}")
    thetas = samples.thetas
    n = len(thetas)
    if n < 2:
        raise ValueError(f"need at least 2 tangent vectors to fit a covariance, got {n}")
    second = thetas.T @ thetas / n
    second = 0.5 * (second + second.T)
    d = second.shape[0]
    sigma = (1.0 - shrinkage) * second + shrinkage * (np.trace(second) / d) * np.eye(d)
    return ClassModel(samples.label, sigma, n, shrinkage)


def log_density(model: ClassModel, theta) -> float:
    """Unnormalized log density ``-0.5 theta^T sigma^+ theta``.

    Uses the pseudo-inverse on the retained spectrum. A ``theta`` with a
    component outside that span gets ``-inf``.
    """
    theta = np.asarray(theta, dtype=float)
    keep = model.retained
    vecs = model.eigenvectors[:, keep]
    coef = vecs.T @ theta
    resid = np.linalg.norm(theta - vecs @ coef)
    if resid > SPAN_TOL * max(np.linalg.norm(theta), 1.0):
        logger.warning("theta lies outside the support of class %s (residual %.3g)",
                       model.label, resid)
        return -np.inf
    return float(-0.5 * np.sum(coef ** 2 / model.eigenvalues[keep]))


def sample_transformation(model: ClassModel, basis: CpaBasis, rng: np.random.Generator,
                          scale: float = 1.0) -> Transformation:
    return Transformation(model.sample_theta(rng, scale), basis)


def principal_components(model: ClassModel, k: int) -> list[tuple[float, np.ndarray]]:
    """Top-``k`` eigenpairs in descending order, largest-magnitude entry positive."""
    if not 1 <= k <= model.d:
        raise ValueError(f"k must lie in [1, {model.d}], got {k}")
    return [(float(model.eigenvalues[i]), model.eigenvectors[:, i].copy()) for i in range(k)]
