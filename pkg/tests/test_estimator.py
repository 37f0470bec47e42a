import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cpabaug.augment import PipelineConfig
from cpabaug.dataset_io import read_model, write_model
from cpabaug.estimator import CpabAugmenter

QUICK = dict(K=2, images_per_class_for_graph=5, iterations=300, n_steps=10, samples_per_class_out=3)


@pytest.fixture(scope="module")
def data(mnist):
    idx = np.concatenate([np.flatnonzero(mnist.labels == c)[:7] for c in (1, 4)])
    return mnist.images[idx], mnist.labels[idx]


@pytest.fixture(scope="module")
def fitted(data):
    return CpabAugmenter(**QUICK).fit(*data)


def test_params_round_trip():
    est = CpabAugmenter(**QUICK)
    params = est.get_params()
    assert params["K"] == 2 and params["random_state"] == 0
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(sigma=0.3, tessellation=(2, 2))
    cfg = twin.to_config()
    assert isinstance(cfg, PipelineConfig)
    assert (cfg.align.sigma, cfg.tessellation, cfg.align.integration.n_steps) == (0.3, (2, 2), 10)


def test_defaults_match_pipeline_config():
    cfg, default = CpabAugmenter().to_config(), PipelineConfig()
    assert cfg == default


def test_invalid_params_raise_at_fit(data):
    with pytest.raises(ValueError):
        CpabAugmenter(**{**QUICK, "K": 0}).fit(*data)
    with pytest.raises(ValueError):
        CpabAugmenter(**QUICK).fit(data[0][:, :5, :], data[1][:3])


def test_generate_before_fit():
    with pytest.raises(NotFittedError):
        CpabAugmenter().generate(1)


def test_fit_and_generate(fitted, data):
    assert list(fitted.classes_) == [1, 4]
    assert fitted.image_shape_ == (28, 28)
    assert fitted.basis_.d == 50
    X, y = fitted.generate()
    assert X.shape == (6, 28, 28) and list(y) == [1, 1, 1, 4, 4, 4]
    X2, y2, prov = fitted.generate(2, return_provenance=True)
    assert len(prov) == 4
    np.testing.assert_array_equal(X2, fitted.generate(2)[0])


def test_flattened_input_equivalent(fitted, data):
    X, y = data
    flat = CpabAugmenter(**QUICK).fit(X.reshape(len(X), -1), y)
    for label in fitted.models_:
        np.testing.assert_array_equal(flat.models_[label].sigma, fitted.models_[label].sigma)
    with pytest.raises(ValueError):
        CpabAugmenter(**QUICK).fit(X.reshape(len(X), -1)[:, :-1], y)


def test_fit_resample(data):
    X, y = data
    Xr, yr = CpabAugmenter(**QUICK).fit_resample(X, y, n_per_class=4)
    assert len(Xr) == len(X) + 8
    np.testing.assert_array_equal(Xr[:len(X)], X)
    np.testing.assert_array_equal(yr[:len(y)], y)


def test_model_state_round_trip(fitted, tmp_path):
    write_model(fitted.model_state(), tmp_path / "m")
    back = read_model(tmp_path / "m")
    assert PipelineConfig.from_dict(back.config) == fitted.to_config()
    for label, m in fitted.models_.items():
        assert back.class_models[label].sigma.tobytes() == m.sigma.tobytes()
