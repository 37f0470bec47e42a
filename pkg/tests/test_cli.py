import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from cpabaug.cli import load_config, main
from cpabaug.dataset_io import (
    read_dataset,
    read_idx_images,
    read_model,
    read_pgm,
    write_idx_images,
    write_idx_labels,
    write_image_grid,
)

TINY = {"K": 2, "images_per_class_for_graph": 5, "samples_per_class_out": 4,
        "align": {"iterations": 300, "integration": {"n_steps": 10}}}


@pytest.fixture(scope="module")
def ws(tmp_path_factory, mnist):
    root = tmp_path_factory.mktemp("cli")
    idx = np.concatenate([np.flatnonzero(mnist.labels == c)[:6] for c in (2, 5)])
    write_idx_images(mnist.images[idx], root / "train-images-idx3-ubyte")
    write_idx_labels(mnist.labels[idx], root / "train-labels-idx1-ubyte")
    # the bundled digits are grouped by class, so split within each class
    test = np.concatenate([np.flatnonzero(mnist.labels == c)[-15:] for c in (2, 5)])
    write_idx_images(mnist.images[test], root / "t10k-images-idx3-ubyte")
    write_idx_labels(mnist.labels[test], root / "t10k-labels-idx1-ubyte")
    (root / "cfg.yaml").write_text(yaml.safe_dump(TINY))
    return root


def learn(ws, out, *extra):
    return main(["--threads", "1", "learn", "--train-images", str(ws / "train-images-idx3-ubyte"),
                 "--train-labels", str(ws / "train-labels-idx1-ubyte"), "--config", str(ws / "cfg.yaml"),
                 "--out-model", str(ws / out), *extra])


def augment(ws, model, prefix, *extra):
    return main(["--threads", "1", "augment", "--model", str(model),
                 "--train-images", str(ws / "train-images-idx3-ubyte"),
                 "--train-labels", str(ws / "train-labels-idx1-ubyte"), "--out-prefix", str(ws / prefix),
                 *extra])


@pytest.fixture(scope="module")
def model(ws):
    assert learn(ws, "model.bin") == 0
    return ws / "model.bin"


def test_config_merging(tmp_path):
    (tmp_path / "c.yaml").write_text("K: 3\nalign:\n  sigma: 0.2\n")
    cfg = load_config(tmp_path / "c.yaml", ["align.iterations=50", "source_pool=graph_subset"], seed=9)
    assert (cfg.K, cfg.align.sigma, cfg.align.iterations, cfg.base_seed) == (3, 0.2, 50, 9)
    assert cfg.source_pool == "graph_subset"
    assert cfg.align.integration.n_steps == 50


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["learn", "--train-images", "x"],
    ["eval", "--train", "a", "--test", "b", "--train-limit", "many"],
    ["--threads", "0", "eval", "--train", "a", "--test", "b"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_bad_config_exit_1(ws, tmp_path):
    base = ["align", "--src", f"{ws / 'train-images-idx3-ubyte'}:0",
            "--dst", f"{ws / 'train-images-idx3-ubyte'}:1", "--out", str(tmp_path)]
    assert main(base + ["--set", "K=0"]) == 1
    assert main(base + ["--set", "nonsense=3"]) == 1
    assert main(base + ["--set", "novalue"]) == 1
    assert main(base + ["--config", str(tmp_path / "missing.yaml")]) == 1
    assert main(base[:-1] + [str(tmp_path / "nope")]) == 1


def test_data_errors_exit_2(ws, tmp_path):
    (tmp_path / "bad-images-idx3-ubyte").write_bytes(b"\x00\x00\x08\x02" + b"\x00" * 12)
    (tmp_path / "bad-labels-idx1-ubyte").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x00")
    assert main(["eval", "--train", str(tmp_path / "bad"), "--test", str(ws / "t10k")]) == 2
    assert main(["eval", "--train", str(tmp_path / "absent"), "--test", str(ws / "t10k")]) == 2
    write_image_grid([np.zeros((5, 5))], 1, tmp_path / "small.pgm")
    assert main(["align", "--src", str(tmp_path / "small.pgm"),
                 "--dst", f"{ws / 'train-images-idx3-ubyte'}:0", "--out", str(tmp_path)]) == 2
    assert main(["align", "--src", f"{ws / 'train-images-idx3-ubyte'}:999",
                 "--dst", f"{ws / 'train-images-idx3-ubyte'}:0", "--out", str(tmp_path)]) == 2
    (tmp_path / "model.bin").write_bytes(b"\x01")
    assert augment(ws, tmp_path / "model.bin", "x") == 2


def test_numerical_failure_exit_3(ws, tmp_path):
    # an amplitude at the bottom of the float range leaves nothing to factorize
    assert main(["align", "--src", f"{ws / 'train-images-idx3-ubyte'}:0",
                 "--dst", f"{ws / 'train-images-idx3-ubyte'}:1", "--out", str(tmp_path),
                 "--set", "prior.amplitude=5e-324"]) == 3


def test_align(ws, tmp_path, capsys):
    src = f"{ws / 'train-images-idx3-ubyte'}:0"
    assert main(["align", "--src", src, "--dst", f"{ws / 'train-images-idx3-ubyte'}:1",
                 "--out", str(tmp_path), "--set", "align.iterations=400"]) == 0
    assert "SSD" in capsys.readouterr().out
    rec = json.loads((tmp_path / "theta.json").read_text())
    assert rec["ssd_final"] <= rec["ssd_initial"]
    assert rec["config"]["align"]["iterations"] == 400
    grid = read_pgm(tmp_path / "overlay.pgm")
    assert grid.shape == (28, 3 * 29 - 1)
    assert b"# config" in (tmp_path / "overlay.pgm").read_bytes()[:2000]

    write_image_grid([read_idx_images(ws / "train-images-idx3-ubyte")[0]], 1, tmp_path / "a.pgm")
    assert main(["align", "--src", str(tmp_path / "a.pgm"), "--dst", str(tmp_path / "a.pgm"),
                 "--out", str(tmp_path), "--set", "align.iterations=100"]) == 0
    assert np.linalg.norm(json.loads((tmp_path / "theta.json").read_text())["theta"]) == 0


def test_learn_is_deterministic(ws, model, capsys):
    assert learn(ws, "again.bin") == 0
    out = capsys.readouterr().out
    assert "class 2" in out and "class 5" in out
    assert (ws / "again.bin").read_bytes() == model.read_bytes()
    state = read_model(model)
    assert sorted(state.class_models) == [2, 5]
    assert state.config["K"] == 2
    assert all(len(v) == 5 for v in state.graph_indices.values())


def test_augment(ws, model):
    assert augment(ws, model, "aug", "--count-per-class", "3") == 0
    aug = read_dataset(ws / "aug-images-idx3-ubyte", ws / "aug-labels-idx1-ubyte")
    assert len(aug) == 6 and sorted(set(aug.labels)) == [2, 5]
    prov = json.loads((ws / "aug-provenance.json").read_text())
    assert len(prov["records"]) == 6
    assert prov["config"]["K"] == 2
    train = read_dataset(ws / "train-images-idx3-ubyte", ws / "train-labels-idx1-ubyte")
    for label, rec in zip(aug.labels, prov["records"]):
        assert train.labels[rec["source_index"]] == label

    assert augment(ws, model, "aug2", "--count-per-class", "3") == 0
    assert (ws / "aug2-images-idx3-ubyte").read_bytes() == (ws / "aug-images-idx3-ubyte").read_bytes()
    # default count comes from the stored config
    assert augment(ws, model, "aug3", "--set", "source_pool=graph_subset") == 0
    assert len(read_idx_images(ws / "aug3-images-idx3-ubyte")) == 8


def test_augment_zero_count(ws, model):
    assert augment(ws, model, "empty", "--count-per-class", "0") == 0
    assert read_idx_images(ws / "empty-images-idx3-ubyte").shape == (0, 28, 28)
    assert json.loads((ws / "empty-provenance.json").read_text())["records"] == []
    assert augment(ws, model, "neg", "--count-per-class", "-1") == 1


def test_viz_pc(ws, model, tmp_path):
    img = f"{ws / 'train-images-idx3-ubyte'}:0"
    out = tmp_path / "pc.pgm"
    assert main(["viz-pc", "--model", str(model), "--class", "2", "--component", "1",
                 "--image", img, "--out", str(out)]) == 0
    grid = read_pgm(out)
    frames = [grid[:, 29 * k:29 * k + 28] for k in range(3)]
    np.testing.assert_array_equal(frames[1], read_idx_images(ws / "train-images-idx3-ubyte")[0])
    assert not np.array_equal(frames[0], frames[1]) and not np.array_equal(frames[2], frames[1])
    assert not np.array_equal(frames[0], frames[2])
    assert main(["viz-pc", "--model", str(model), "--class", "2", "--component", "51",
                 "--image", img, "--out", str(out)]) == 1
    assert main(["viz-pc", "--model", str(model), "--class", "7", "--image", img, "--out", str(out)]) == 1


def test_eval(ws, model, tmp_path, capsys):
    assert augment(ws, model, "ev", "--count-per-class", "4") == 0
    report = tmp_path / "r.json"
    assert main(["eval", "--train", str(ws / "train"), "--aug", str(ws / "ev"), "--test", str(ws / "t10k"),
                 "--json", str(report)]) == 0
    assert "baseline" in capsys.readouterr().out
    r = json.loads(report.read_text())
    assert (r["n_train"], r["n_aug"]) == (12, 8)
    assert 0 <= r["augmented_error"] <= 1
    assert main(["eval", "--train", str(ws / "train"), "--test", str(ws / "t10k"), "--test-limit", "5"]) == 0


def test_console_entry_point(ws, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cpabaug.cli", "eval", "--train", str(ws / "train"),
                           "--test", str(ws / "t10k")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "1-NN test error" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "cpabaug.cli", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1
