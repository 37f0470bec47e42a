"""Learned augmentation: kNN pairs, pairwise alignment, class models, sampling."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from .alignment import AlignConfig, AlignResult, metropolis_align
from .basis import CpaBasis, build_basis
from .class_model import ClassModel, TangentSampleSet, close_under_inversion, fit_covariance
from .dataset_io import LabeledDataset
from .prior import PriorConfig, ThetaPrior, build_prior
from .transform import IntegrationConfig, Transformation, jacobian_sign_check, warp_image

logger = logging.getLogger(__name__)

SOURCE_POOLS = ("full_train", "graph_subset")
SMALL_SAMPLE_SHRINKAGE = 0.01

# stream tags for derived seeds
_SUBSAMPLE, _ALIGN, _GENERATE = 0, 1, 2


@dataclass(frozen=True)
class PipelineConfig:
    images_per_class_for_graph: int = 500
    K: int = 5
    samples_per_class_out: int = 10_000
    source_pool: str = "full_train"
    align: AlignConfig = field(default_factory=AlignConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    tessellation: tuple[int, int] = (4, 4)
    base_seed: int = 0
    shrinkage: float = 0.0
    both_directions: bool = False
    check_jacobian: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.images_per_class_for_graph <= self.K:
            raise ValueError("images_per_class_for_graph must exceed K")
        if self.source_pool not in SOURCE_POOLS:
            raise ValueError(f"source_pool must be one of {SOURCE_POOLS}")
        object.__setattr__(self, "tessellation", tuple(int(n) for n in self.tessellation))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["tessellation"] = list(self.tessellation)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        align = dict(data.pop("align", {}) or {})
        if "integration" in align:
            align["integration"] = IntegrationConfig(**align["integration"])
        return cls(align=AlignConfig(**align), prior=PriorConfig(**(data.pop("prior", {}) or {})),
                   **data)


def derive_seed(base_seed: int, *key: int) -> int:
    """Deterministic 63-bit seed for the task identified by ``key``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def knn_graph(images, K: int) -> list[tuple[int, int]]:
    """Undirected K-nearest-neighbour graph under Euclidean pixel distance.

    ``{n, m}`` is an edge iff either endpoint is among the other's ``K``
    nearest. Ties go to the lower index. Edges come back as sorted pairs.
    """
    X = np.asarray(images, dtype=float).reshape(len(images), -1)
    n = len(X)
    if n < K + 1:
        raise ValueError(f"need at least K + 1 = {K + 1} images, got {n}")
    dist = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :K]
    edges = {(min(i, int(j)), max(i, int(j))) for i in range(n) for j in order[i]}
    return sorted(edges)


@dataclass
class ClassDiagnostics:
    label: int
    n_images: int
    n_edges: int
    n_tangent_vectors: int
    mean_acceptance: float
    mean_ssd_reduction: float
    shrinkage: float


@dataclass
class LearnedModels:
    basis: CpaBasis
    prior: ThetaPrior
    models: dict[int, ClassModel]
    graph_indices: dict[int, np.ndarray]
    edges: dict[int, list[tuple[int, int]]]
    diagnostics: dict[int, ClassDiagnostics]
    thetas: dict[int, np.ndarray] = field(repr=False, default_factory=dict)


@dataclass
class AugmentedDataset:
    images: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    provenance: list[dict] = field(repr=False)

    def __post_init__(self):
        if not len(self.images) == len(self.labels) == len(self.provenance):
            raise ValueError("images, labels and provenance must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    def as_labeled(self) -> LabeledDataset:
        return LabeledDataset(self.images, self.labels)


def _align_job(src, dst, basis, prior, cfg: AlignConfig, seed: int) -> AlignResult:
    return metropolis_align(src, dst, basis, prior, dataclasses.replace(cfg, seed=seed))


def learn_class_models(dataset: LabeledDataset, cfg: PipelineConfig = PipelineConfig(),
                       basis: CpaBasis | None = None) -> LearnedModels:
    """Fit one tangent-space Gaussian per class from aligned kNN pairs."""
    basis = build_basis(*cfg.tessellation) if basis is None else basis
    prior = build_prior(basis, cfg.prior)
    models, subsets, all_edges, diags, thetas_by_class = {}, {}, {}, {}, {}

    for label in dataset.classes:
        label = int(label)
        idx = np.flatnonzero(dataset.labels == label)
        if len(idx) < cfg.K + 1:
            raise ValueError(f"class {label} has {len(idx)} images, needs at least {cfg.K + 1}")
        rng = np.random.default_rng(derive_seed(cfg.base_seed, _SUBSAMPLE, label))
        n_take = min(cfg.images_per_class_for_graph, len(idx))
        subset = np.sort(rng.choice(idx, size=n_take, replace=False))
        images = dataset.images[subset]
        edges = knn_graph(images, cfg.K)

        jobs = []
        for e, (a, b) in enumerate(edges):
            jobs.append((images[b], images[a], derive_seed(cfg.base_seed, _ALIGN, label, e, 0)))
            if cfg.both_directions:
                jobs.append((images[a], images[b], derive_seed(cfg.base_seed, _ALIGN, label, e, 1)))
        results = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_align_job)(src, dst, basis, prior, cfg.align, seed) for src, dst, seed in jobs)

        thetas = np.array([r.theta for r in results])
        samples = close_under_inversion(TangentSampleSet(label, thetas))
        shrinkage = cfg.shrinkage
        if shrinkage == 0.0 and len(samples) < 4 * basis.d:
            shrinkage = SMALL_SAMPLE_SHRINKAGE
            logger.info("class %d: %d tangent vectors < 4d, using shrinkage %.2f",
                        label, len(samples), shrinkage)
        models[label] = fit_covariance(samples, shrinkage)
        subsets[label] = subset
        all_edges[label] = edges
        thetas_by_class[label] = samples.thetas
        diags[label] = ClassDiagnostics(
            label=label, n_images=n_take, n_edges=len(edges), n_tangent_vectors=len(samples),
            mean_acceptance=float(np.mean([r.acceptance_rate for r in results])),
            mean_ssd_reduction=float(np.mean([r.ssd_reduction for r in results])),
            shrinkage=shrinkage)
        logger.info("class %d: %d edges, acceptance %.3f, SSD reduction %.3f", label, len(edges),
                    diags[label].mean_acceptance, diags[label].mean_ssd_reduction)
    return LearnedModels(basis, prior, models, subsets, all_edges, diags, thetas_by_class)


def _generate_one(image, T: Transformation, integration, check_jacobian):
    ok = jacobian_sign_check(T, 10, integration) if check_jacobian else None
    return warp_image(image, T, integration), ok


def generate_augmented(dataset: LabeledDataset, models: dict[int, ClassModel], basis: CpaBasis,
                       cfg: PipelineConfig = PipelineConfig(), count_per_class: int | None = None,
                       graph_indices: dict[int, np.ndarray] | None = None) -> AugmentedDataset:
    """Warp uniformly drawn same-class images by transformations sampled per class."""
    count = cfg.samples_per_class_out if count_per_class is None else int(count_per_class)
    if count < 0:
        raise ValueError("count_per_class must be non-negative")
    H, W = dataset.images.shape[1:]
    images, labels, provenance = [], [], []
    for label in dataset.classes:
        label = int(label)
        if label not in models:
            raise ValueError(f"no class model for label {label}")
        if cfg.source_pool == "graph_subset":
            if graph_indices is None or label not in graph_indices:
                raise ValueError("graph_subset source pool needs the graph indices of every class")
            pool = np.asarray(graph_indices[label])
        else:
            pool = np.flatnonzero(dataset.labels == label)
        if count == 0:
            continue
        draws = []
        for i in range(count):
            seed = derive_seed(cfg.base_seed, _GENERATE, label, i)
            rng = np.random.default_rng(seed)
            src = int(pool[rng.integers(len(pool))])
            draws.append((seed, src, models[label].sample_theta(rng)))
        out = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_generate_one)(dataset.images[src], Transformation(theta, basis),
                                   cfg.align.integration, cfg.check_jacobian)
            for _, src, theta in draws)
        for i, ((img, ok), (seed, src, theta)) in enumerate(zip(out, draws)):
            images.append(img)
            labels.append(label)
            provenance.append({"source_index": src, "label": label, "seed": seed,
                               "theta": theta.tolist(), "jacobian_ok": ok})
            if ok is False:
                logger.warning("class %d sample %d: non-positive Jacobian (source %d, seed %d)",
                               label, i, src, seed)
    if images:
        arr = np.clip(np.array(images), 0.0, 1.0)
    else:
        arr = np.zeros((0, H, W))
    return AugmentedDataset(arr, np.array(labels, dtype=np.int64), provenance)
