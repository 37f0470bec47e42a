"""Bayesian pairwise image alignment by Metropolis sampling over ``theta``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.ndimage import distance_transform_edt

from .basis import CpaBasis
from .prior import ThetaPrior, log_prior_density
from .transform import IntegrationConfig, Transformation, _bilinear, _flow_point, warp_image

logger = logging.getLogger(__name__)

ACCEPTANCE_BAND = (0.05, 0.95)


@dataclass(frozen=True)
class AlignConfig:
    sigma: float = 0.1
    iterations: int = 2000
    proposal_scale: float = 0.01
    burn_in: int | None = None
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    seed: int = 0
    posterior_draw: bool = False
    keep_trace: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.n_burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")

    @property
    def n_burn_in(self) -> int:
        return self.iterations // 2 if self.burn_in is None else int(self.burn_in)


@dataclass(frozen=True)
class AlignResult:
    theta: np.ndarray
    log_posterior: float
    acceptance_rate: float
    ssd_initial: float
    ssd_final: float
    theta_mean: np.ndarray
    trace: list[float] | None = None

    @property
    def ssd_reduction(self) -> float:
        if self.ssd_initial == 0:
            return 0.0
        return 1.0 - self.ssd_final / self.ssd_initial


def _check_pair(x_m, x_n):
    x_m = np.ascontiguousarray(x_m, dtype=float)
    x_n = np.ascontiguousarray(x_n, dtype=float)
    if x_m.shape != x_n.shape:
        raise ValueError(f"image shapes differ: {x_m.shape} vs {x_n.shape}")
    if x_m.ndim != 2 or x_m.size == 0:
        raise ValueError(f"images must be non-empty 2-D arrays, got shape {x_m.shape}")
    return x_m, x_n


def log_likelihood(x_m, x_n, theta, basis: CpaBasis, cfg: AlignConfig = AlignConfig()) -> float:
    """``-|x_m o T - x_n|^2 / (2 sigma^2)``, additive constant dropped."""
    x_m, x_n = _check_pair(x_m, x_n)
    warped = warp_image(x_m, Transformation(theta, basis), cfg.integration)
    return -float(np.sum((warped - x_n) ** 2)) / (2.0 * cfg.sigma ** 2)


@numba.njit(cache=True)
def _max_speed(A, nx, ny):
    vmax = 0.0
    for t in range(A.shape[0]):
        cell = t // 4
        k = t % 4
        cx = cell % nx
        cy = cell // nx
        xs = np.array([cx / nx, (cx + 1) / nx, (cx + 1) / nx, cx / nx, cx / nx])
        ys = np.array([cy / ny, cy / ny, (cy + 1) / ny, (cy + 1) / ny, cy / ny])
        # corners k and k+1 of the cell plus its center span triangle k
        for q in range(3):
            if q == 2:
                x = (cx + 0.5) / nx
                y = (cy + 0.5) / ny
            else:
                x = xs[k + q]
                y = ys[k + q]
            vx = A[t, 0, 0] * x + A[t, 0, 1] * y + A[t, 0, 2]
            vy = A[t, 1, 0] * x + A[t, 1, 1] * y + A[t, 1, 2]
            vmax = max(vmax, math.sqrt(vx * vx + vy * vy))
    return vmax


@numba.njit(cache=True)
def _ssd_sparse(src, dst, A, nx, ny, n_steps, rk4, src_dist):
    """SSD of the warped source against ``dst``.

    Skips pixels that are zero in ``dst`` and farther from the source support
    than the largest displacement the flow can produce; both images are
    exactly zero there.
    """
    H, W = src.shape
    reach = _max_speed(A, nx, ny) * max(H, W) + 1.5
    total = 0.0
    for i in range(H):
        for j in range(W):
            if dst[i, j] == 0.0 and src_dist[i, j] > reach:
                continue
            x, y, _ = _flow_point(A, nx, ny, (j + 0.5) / W, (i + 0.5) / H, n_steps, rk4)
            r = _bilinear(src, y * H - 0.5, x * W - 0.5) - dst[i, j]
            total += r * r
    return total


class _Posterior:
    """Unnormalized log posterior for one image pair."""

    def __init__(self, x_m, x_n, basis: CpaBasis, prior: ThetaPrior, cfg: AlignConfig):
        self.x_m, self.x_n = x_m, x_n
        self.basis = basis
        self.nx, self.ny = basis.tess.nx, basis.tess.ny
        self.n_steps = int(cfg.integration.n_steps)
        self.rk4 = cfg.integration.method == "rk4"
        self.inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma ** 2)
        if np.any(x_m != 0):
            self.src_dist = distance_transform_edt(x_m == 0)
        else:
            self.src_dist = np.full(x_m.shape, np.inf)
        cho = cho_factor(prior.covariance + prior.jitter * np.eye(prior.d), lower=True)
        self.precision = cho_solve(cho, np.eye(prior.d))
        self.log_norm = -0.5 * prior.log_det() - 0.5 * prior.d * math.log(2 * math.pi)

    def ssd(self, theta) -> float:
        if not np.any(theta):
            return float(np.sum((self.x_m - self.x_n) ** 2))
        A = (self.basis.B @ theta).reshape(-1, 2, 3)
        return _ssd_sparse(self.x_m, self.x_n, A, self.nx, self.ny, self.n_steps,
                           self.rk4, self.src_dist)

    def __call__(self, theta):
        ssd = self.ssd(theta)
        lp = -ssd * self.inv_two_sigma2 - 0.5 * theta @ self.precision @ theta + self.log_norm
        return lp, ssd


def metropolis_align(x_m, x_n, basis: CpaBasis, prior: ThetaPrior,
                     cfg: AlignConfig = AlignConfig(), directions=None) -> AlignResult:
    """Random-walk Metropolis over ``theta`` such that ``x_m o T^theta ~ x_n``.

    The chain starts at the identity and proposes ``theta + eps`` with
    ``eps ~ N(0, proposal_scale^2 * prior covariance)``. The returned ``theta``
    is the highest-posterior state among the start and the post-burn-in
    states, or the final state when ``cfg.posterior_draw`` is set.

    Parameters
    ----------
    x_m, x_n : ndarray, shape (H, W)
        Source and destination images, intensities in [0, 1].
    basis : CpaBasis
    prior : ThetaPrior
    cfg : AlignConfig
    directions : ndarray, shape (d, k), optional
        Restrict the chain to ``theta = directions @ a``. The proposal is the
        prior-shaped proposal restricted to that subspace.

    Returns
    -------
    AlignResult
    """
    x_m, x_n = _check_pair(x_m, x_n)
    post = _Posterior(x_m, x_n, basis, prior, cfg)
    rng = np.random.default_rng(cfg.seed)
    d = basis.d

    if directions is None:
        D = np.eye(d)
        prop_factor = prior.factor
    else:
        D = np.asarray(directions, dtype=float).reshape(d, -1)
        prop_factor = np.linalg.cholesky(D.T @ prior.covariance @ D)
    prop_factor = cfg.proposal_scale * prop_factor
    k = D.shape[1]

    a = np.zeros(k)
    theta = np.zeros(d)
    lp, ssd = post(theta)
    if not math.isfinite(lp):
        raise FloatingPointError("non-finite log posterior at the identity")
    ssd_initial = ssd
    best_lp, best_theta, best_ssd = lp, theta, ssd
    burn = cfg.n_burn_in
    accepted = 0
    running = np.zeros(k)
    trace = [] if cfg.keep_trace else None

    for it in range(cfg.iterations):
        a_new = a + prop_factor @ rng.standard_normal(k)
        log_u = math.log(rng.random())
        theta_new = D @ a_new
        lp_new, ssd_new = post(theta_new)
        if log_u < lp_new - lp:
            a, theta, lp, ssd = a_new, theta_new, lp_new, ssd_new
            if it >= burn:
                accepted += 1
        if it >= burn:
            running += a
            if lp > best_lp:
                best_lp, best_theta, best_ssd = lp, theta, ssd
        if trace is not None:
            trace.append(lp)

    n_post = cfg.iterations - burn
    rate = accepted / n_post
    if accepted == 0:
        logger.warning("Metropolis chain accepted no proposals after burn-in (seed %d)", cfg.seed)
    elif not ACCEPTANCE_BAND[0] < rate < ACCEPTANCE_BAND[1]:
        logger.info("acceptance rate %.3f outside %s", rate, ACCEPTANCE_BAND)

    if cfg.posterior_draw:
        best_theta, best_lp, best_ssd = theta, lp, ssd
    return AlignResult(
        theta=np.array(best_theta),
        log_posterior=float(best_lp),
        acceptance_rate=float(rate),
        ssd_initial=float(ssd_initial),
        ssd_final=float(best_ssd),
        theta_mean=D @ (running / n_post),
        trace=trace,
    )


def posterior_log_density(x_m, x_n, theta, basis: CpaBasis, prior: ThetaPrior,
                          cfg: AlignConfig = AlignConfig()) -> float:
    """Unnormalized log posterior via the dense warp; independent of the sampler's kernel."""
    return log_likelihood(x_m, x_n, theta, basis, cfg) + log_prior_density(theta, prior)


def quadrature_posterior_mean(x_m, x_n, basis: CpaBasis, prior: ThetaPrior, directions,
                              cfg: AlignConfig = AlignConfig(), half_width=4.0, n_grid=101):
    """Posterior mean on a 2-D slice ``theta = directions @ a`` by brute-force quadrature.

    A coarse grid over ``[-half_width, half_width]^2`` locates the mass; a
    second grid of the same size spans eight standard deviations around it.
    Used as the oracle for the sampler at micro scale.

    Returns
    -------
    mean : ndarray, shape (d,)
    mean_a : ndarray, shape (2,)
        The mean in slice coordinates.
    """
    D = np.asarray(directions, dtype=float).reshape(basis.d, 2)
    x_m, x_n = _check_pair(x_m, x_n)

    def moments(lo, hi):
        u = np.linspace(lo[0], hi[0], n_grid)
        v = np.linspace(lo[1], hi[1], n_grid)
        L = np.array([[posterior_log_density(x_m, x_n, D @ np.array([s, t]), basis, prior, cfg)
                       for t in v] for s in u])
        P = np.exp(L - L.max())
        P /= P.sum()
        U, V = np.meshgrid(u, v, indexing="ij")
        m = np.array([np.sum(P * U), np.sum(P * V)])
        sd = np.sqrt([np.sum(P * (U - m[0]) ** 2), np.sum(P * (V - m[1]) ** 2)])
        return m, sd

    m, sd = moments(np.full(2, -half_width), np.full(2, half_width))
    step = 2 * half_width / (n_grid - 1)
    sd = np.maximum(sd, step)
    m, _ = moments(m - 8 * sd, m + 8 * sd)
    return D @ m, m
