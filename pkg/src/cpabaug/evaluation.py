"""Nearest-neighbour evaluation of augmented training sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset_io import LabeledDataset


class NearestNeighborClassifier(ClassifierMixin, BaseEstimator):
    """Brute-force k-NN on raw pixels with label-ordered tie-breaking.

    Neighbours are ranked by (distance, label) and the vote goes to the
    lowest label among the most frequent, so predictions do not depend on
    the order of the training set.

    Parameters
    ----------
    n_neighbors : int, default=1
    chunk_size : int, default=512
        Test points per distance block.
    """

    def __init__(self, n_neighbors: int = 1, chunk_size: int = 512):
        self.n_neighbors = n_neighbors
        self.chunk_size = chunk_size

    def fit(self, X, y):
        X = check_array(np.asarray(X).reshape(len(X), -1), dtype=np.float64)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)} labels")
        if not 1 <= self.n_neighbors <= len(X):
            raise ValueError(f"n_neighbors must lie in [1, {len(X)}]")
        self.classes_, self.y_index_ = np.unique(y, return_inverse=True)
        self.X_ = X
        return self

    def predict(self, X):
        check_is_fitted(self, "X_")
        X = check_array(np.asarray(X).reshape(len(X), -1), dtype=np.float64)
        if X.shape[1] != self.X_.shape[1]:
            raise ValueError(f"expected {self.X_.shape[1]} features, got {X.shape[1]}")
        k = self.n_neighbors
        n_classes = len(self.classes_)
        pred = np.empty(len(X), dtype=np.int64)
        for start in range(0, len(X), self.chunk_size):
            dist = cdist(X[start:start + self.chunk_size], self.X_, "sqeuclidean")
            for r, row in enumerate(dist):
                if k == 1:
                    best = np.flatnonzero(row == row.min())
                    pred[start + r] = self.y_index_[best].min()
                    continue
                order = np.lexsort((self.y_index_, row))[:k]
                votes = np.bincount(self.y_index_[order], minlength=n_classes)
                pred[start + r] = int(np.argmax(votes))
        return self.classes_[pred]


def knn_classify(train: LabeledDataset, test: LabeledDataset, k: int = 1) -> float:
    """Misclassification fraction of k-NN trained on ``train``, scored on ``test``."""
    if len(train) == 0 or len(test) == 0:
        raise ValueError("train and test sets must be non-empty")
    if train.images.shape[1:] != test.images.shape[1:]:
        raise ValueError(f"image shapes differ: {train.images.shape[1:]} vs {test.images.shape[1:]}")
    clf = NearestNeighborClassifier(n_neighbors=k).fit(train.images, train.labels)
    return float(np.mean(clf.predict(test.images) != test.labels))


@dataclass
class EvalReport:
    baseline_error: float
    augmented_error: float
    n_train: int
    n_aug: int
    n_test: int
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (f"1-NN test error: baseline {100 * self.baseline_error:.2f}% "
                f"({self.n_train} train), augmented {100 * self.augmented_error:.2f}% "
                f"(+{self.n_aug} generated), {self.n_test} test images")


def compare_augmentation(train: LabeledDataset, augmented, test: LabeledDataset,
                         seed: int | None = None, config: dict | None = None) -> EvalReport:
    """1-NN error on ``train`` alone and on ``train`` plus the augmented images."""
    aug_labels = np.asarray(augmented.labels)
    extra = set(np.unique(aug_labels).tolist()) - set(train.classes.tolist())
    if extra:
        raise ValueError(f"augmented labels {sorted(extra)} do not occur in the training set")
    baseline = knn_classify(train, test, 1)
    if len(aug_labels):
        combined = LabeledDataset(np.concatenate([train.images, augmented.images]),
                                  np.concatenate([train.labels, aug_labels]))
        augmented_error = knn_classify(combined, test, 1)
    else:
        augmented_error = baseline
    return EvalReport(baseline, augmented_error, len(train), len(aug_labels), len(test),
                      seed, config or {})
