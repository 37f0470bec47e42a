"""Squared-exponential smoothness prior over velocity fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .basis import CpaBasis
from .tessellation import Tessellation


@dataclass(frozen=True)
class PriorConfig:
    lengthscale: float = 0.1
    amplitude: float = 1.0

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.amplitude > 0):
            raise ValueError("lengthscale and amplitude must be strictly positive")


@dataclass(frozen=True)
class ThetaPrior:
    """Zero-mean Gaussian over tangent coordinates.

    ``factor`` is a lower Cholesky factor of ``covariance`` (plus any jitter
    that was needed to compute it).
    """

    covariance: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def d(self) -> int:
        return self.covariance.shape[0]

    def whiten(self, theta) -> np.ndarray:
        return solve_triangular(self.factor, np.asarray(theta, dtype=float), lower=True)

    def mahalanobis_norm(self, theta) -> float:
        """Length of ``theta`` measured in prior standard deviations."""
        return float(np.linalg.norm(self.whiten(theta)))

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return sample_prior(self, rng, size)

    def log_density(self, theta) -> float:
        return log_prior_density(theta, self)


def build_pa_covariance(tess: Tessellation, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    """Covariance over the unconstrained affine stack.

    Block ``(i, j)`` is ``amplitude * exp(-|c_i - c_j|^2 / (2 l^2)) * I_6`` for
    triangle centroids ``c_i`` and ``c_j``.
    """
    c = tess.centroids
    sq = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
    k = cfg.amplitude * np.exp(-sq / (2.0 * cfg.lengthscale ** 2))
    return np.kron(k, np.eye(6))


def project_prior(sigma_pa: np.ndarray, basis: CpaBasis) -> ThetaPrior:
    B = basis.B
    if sigma_pa.shape != (B.shape[0], B.shape[0]):
        raise ValueError(f"expected a {B.shape[0]}x{B.shape[0]} covariance, got {sigma_pa.shape}")
    cov = B.T @ sigma_pa @ B
    cov = 0.5 * (cov + cov.T)
    jitter = 0.0
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(cov) / cov.shape[0]
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("projected prior covariance is not positive semi-definite") from exc
    cov.setflags(write=False)
    factor.setflags(write=False)
    return ThetaPrior(cov, factor, jitter)


def build_prior(basis: CpaBasis, cfg: PriorConfig = PriorConfig()) -> ThetaPrior:
    return project_prior(build_pa_covariance(basis.tess, cfg), basis)


def sample_prior(prior: ThetaPrior, rng: np.random.Generator, size=None) -> np.ndarray:
    if size is None:
        return prior.factor @ rng.standard_normal(prior.d)
    z = rng.standard_normal((size, prior.d))
    return z @ prior.factor.T


def log_prior_density(theta, prior: ThetaPrior) -> float:
    z = prior.whiten(theta)
    d = prior.d
    return float(-0.5 * z @ z - 0.5 * prior.log_det() - 0.5 * d * np.log(2 * np.pi))
