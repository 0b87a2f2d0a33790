import json

import pytest

from inspecta.cli import main


@pytest.fixture
def hyper(tmp_path):
    p = tmp_path / "hyper.json"
    p.write_text(json.dumps({"epochs": 3, "augment_copies": 0, "extractor": {"expand": 16}}))
    return str(p)


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "u.json").write_text(json.dumps({"family": "uniform", "n_train_val": 16, "n_holdout": 8, "seed": 2}))
    (root / "d.json").write_text(json.dumps({"family": "diverse", "n_train_val": 16, "n_holdout": 8, "seed": 2}))
    assert main(["gen", "--config", str(root / "u.json"), "--out", str(root / "data")]) == 0
    assert main(["gen", "--config", str(root / "d.json"), "--out", str(root / "data")]) == 0
    return root


def test_gen_is_byte_identical(gen_dir, tmp_path):
    assert main(["gen", "--config", str(gen_dir / "u.json"), "--out", str(tmp_path)]) == 0
    a = (gen_dir / "data" / "uniform" / "manifest.json").read_bytes()
    assert (tmp_path / "uniform" / "manifest.json").read_bytes() == a


def test_train_eval_plot(gen_dir, tmp_path, hyper, capsys):
    man = str(gen_dir / "data" / "uniform" / "manifest.json")
    for name in ("a", "b"):
        assert main(["train", "--manifest", man, "--kind", "detector", "--seed", "4",
                     "--hyper", hyper, "--out", str(tmp_path / f"{name}.bin")]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    for agg in ("max", "min"):
        rc = main(["eval", "--model", str(tmp_path / "a.bin"), "--manifest", man, "--split", "holdout",
                   "--aggregation", agg, "--out", str(tmp_path / f"{agg}.json")])
        assert rc == 0
    doc = json.loads((tmp_path / "max.json").read_text())
    assert doc["aggregation"] == "max_box" and len(doc["scores"]) == 8
    assert (tmp_path / "max.roc.csv").is_file() and (tmp_path / "max.predictions.json").is_file()
    reports = f"{tmp_path / 'max.json'},{tmp_path / 'min.json'}"
    assert main(["plot-roc", "--reports", reports, "--out", str(tmp_path / "roc.svg")]) == 0
    assert (tmp_path / "roc.svg").read_text().count("<polyline") == 2
    assert "auc=" in capsys.readouterr().out


def test_matrix_and_ablate(gen_dir, tmp_path, hyper):
    data = gen_dir / "data"
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"experiments": [
        {"experiment_id": 1, "model_kind": "classifier", "train": str(data / "uniform/manifest.json"),
         "test": str(data / "uniform/manifest.json") + ":holdout", "hyperparameters": {"epochs": 2}},
    ]}))
    assert main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "mx")]) == 0
    assert (tmp_path / "mx" / "exp1-classifier" / "report.json").is_file()
    rc = main(["ablate", "--manifest", str(data / "diverse/manifest.json"), "--kind", "classifier",
               "--test", str(data / "uniform/manifest.json") + ":holdout", "--hyper", hyper,
               "--out", str(tmp_path / "ab")])
    assert rc == 0 and (tmp_path / "ab" / "ablation.json").is_file()


def test_matrix_failure_exit_code(gen_dir, tmp_path):
    data = gen_dir / "data"
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"experiments": [
        {"experiment_id": 1, "model_kind": "detector", "train": str(data / "uniform/manifest.json"),
         "test": str(data / "uniform/manifest.json") + ":holdout",
         "hyperparameters": {"pos_threshold": 2.0, "epochs": 1}},
    ]}))
    assert main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "mx")]) == 1
    empty = tmp_path / "e.json"
    empty.write_text(json.dumps({"experiments": []}))
    assert main(["matrix", "--config", str(empty), "--out", str(tmp_path / "e")]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["train", "--manifest", "m.json", "--kind", "svm", "--out", "x"],
        ["gen", "--config", "/nonexistent.json", "--out", "x"],
        ["matrix", "--config", "/nonexistent.json", "--out", "x"],
        ["eval", "--model", "/nonexistent.bin", "--manifest", "m.json", "--split", "holdout", "--out", "x"],
        ["plot-roc", "--reports", ",", "--out", "x.svg"],
        ["train", "--manifest", "/nonexistent.json", "--kind", "classifier", "--out", "x"],
    ],
)
def test_config_errors_exit_2(argv):
    assert main(argv) == 2


def test_corrupt_model_exit_2(gen_dir, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"INSP\x01\x00\x00\x00junk")
    man = str(gen_dir / "data" / "uniform" / "manifest.json")
    assert main(["eval", "--model", str(bad), "--manifest", man, "--split", "holdout", "--out", str(tmp_path / "r.json")]) == 2
