import json

import pytest

from inspecta import harness
from inspecta.harness import (
    ConfigError,
    DatasetRef,
    ExperimentConfig,
    Workspace,
    default_matrix,
    load_matrix_config,
    run_ablation,
    run_experiment,
    run_matrix,
)
from inspecta.metrics import ScoredLabel, auc
from inspecta.plot import render_roc_svg, roc_svg
from inspecta.metrics import roc_curve
from inspecta.dataset import Label

FAST = {
    "classifier": {"epochs": 5},
    "detector": {"epochs": 3, "augment_copies": 0, "extractor": {"expand": 32}},
}


def cfg(data, kind="classifier", test_split="validation", train="uniform", test="uniform", eid="1", **kw):
    return ExperimentConfig(
        eid, kind, DatasetRef(str(data[f"{train}_path"]), "train"),
        DatasetRef(str(data[f"{test}_path"]), test_split), seed=1, hyperparameters=FAST[kind], **kw,
    )


def test_dataset_ref_parse():
    assert DatasetRef.parse("a/b.json:holdout") == DatasetRef("a/b.json", "holdout")
    assert DatasetRef.parse("c:/x/m.json", "validation") == DatasetRef("c:/x/m.json", "validation")
    with pytest.raises(ConfigError):
        DatasetRef("m.json", "test")


def test_config_validation():
    ref = DatasetRef("m.json", "train")
    with pytest.raises(ConfigError):
        ExperimentConfig("1", "svm", ref, ref)
    with pytest.raises(ConfigError):
        ExperimentConfig("1", "classifier", ref, ref, aggregation="mean_box")
    with pytest.raises(ConfigError, match="unknown hyperparameters"):
        ExperimentConfig("1", "classifier", ref, ref, hyperparameters={"momentum": 0.9})
    with pytest.raises(ConfigError, match="extractor"):
        ExperimentConfig("1", "classifier", ref, ref, hyperparameters={"extractor": {"colour": 1}})
    c = ExperimentConfig("1", "detector", ref, ref, hyperparameters={"epochs": 2})
    assert ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    assert c.train_config().epochs == 2 and c.train_config().gamma == 2.0


@pytest.mark.parametrize("kind", ["classifier", "detector"])
def test_run_experiment_outputs(small_data, tmp_path, kind):
    r = run_experiment(cfg(small_data, kind, "holdout"), tmp_path)
    files = {p.name for p in tmp_path.iterdir()}
    assert files == {"report.json", "roc.csv", "predictions.json", "timing.json"}
    doc = harness.load_report(tmp_path / "report.json")
    assert 0.0 <= doc["auc"] <= 1.0
    assert doc["auc"] == auc([ScoredLabel.from_dict(s) for s in doc["scores"]])
    assert (doc["ap"] is None) == (kind == "classifier")
    cm = doc["confusion"]
    assert cm["tp"] + cm["fn"] + cm["fp"] + cm["tn"] == 8
    assert doc["test_dataset"] == "uniform:holdout" and doc["seed"] == 1
    assert (tmp_path / "roc.csv").read_text().startswith("threshold,fpr,tpr\n")
    preds = json.loads((tmp_path / "predictions.json").read_text())
    assert preds["model_id"] == r.model_id and len(preds["images"]) == 8


def test_reports_are_reproducible(small_data, tmp_path):
    c = cfg(small_data, "detector", "holdout")
    run_experiment(c, tmp_path / "a")
    run_experiment(c, tmp_path / "b", Workspace())
    for name in ("report.json", "roc.csv", "predictions.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_dataset(tmp_path):
    ref = DatasetRef(str(tmp_path / "none.json"), "train")
    with pytest.raises(ConfigError, match="not found"):
        run_experiment(ExperimentConfig("1", "classifier", ref, ref))


def test_default_matrix_shape():
    rows = default_matrix("u.json", "d.json")
    assert len(rows) == 12
    pairs = {(c.model_kind, c.train.manifest, c.test.manifest, c.test.split) for c in rows}
    for kind in ("classifier", "detector"):
        for own, other in (("u.json", "d.json"), ("d.json", "u.json")):
            assert {(kind, own, own, "validation"), (kind, own, own, "holdout"),
                    (kind, own, other, "holdout")} <= pairs


def test_matrix_with_failure(small_data, tmp_path):
    good = [cfg(small_data, "classifier", "holdout", eid=str(i)) for i in range(1, 4)]
    bad = ExperimentConfig("9", "detector", DatasetRef(str(small_data["uniform_path"]), "train"),
                           DatasetRef(str(small_data["uniform_path"]), "holdout"),
                           hyperparameters={"pos_threshold": 2.0, "epochs": 1})
    res = run_matrix(good + [bad], tmp_path)
    assert res.failed
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "experiment,kind,train,test,auc,ap,tp,fn,fp,tn"
    assert len(lines) == 5 and lines[-1].split(",")[4] == "FAILED"
    assert sum("FAILED" in line for line in lines) == 1


def test_empty_matrix(tmp_path):
    res = run_matrix([], tmp_path)
    assert not res.failed
    assert (tmp_path / "summary.csv").read_text() == "experiment,kind,train,test,auc,ap,tp,fn,fp,tn\n"


def test_matrix_threads_match_serial(small_data, tmp_path, monkeypatch):
    configs = [cfg(small_data, "classifier", s, eid=str(i)) for i, s in enumerate(("validation", "holdout"))]
    serial = run_matrix(configs, tmp_path / "s", threads=1)
    monkeypatch.setenv("INSPECTA_THREADS", "2")
    parallel = run_matrix(configs, tmp_path / "p")
    assert serial.summary_csv() == parallel.summary_csv()
    monkeypatch.setenv("INSPECTA_THREADS", "zero")
    with pytest.raises(ConfigError):
        harness.thread_count()


def test_matrix_config_files(tmp_path, small_data):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"uniform": "u/manifest.json", "diverse": "/abs/d.json", "seed": 7}))
    rows = load_matrix_config(p)
    assert len(rows) == 12 and rows[0].seed == 7
    assert rows[0].train.manifest == str(tmp_path / "u/manifest.json")
    p.write_text(json.dumps({"experiments": [
        {"experiment_id": 3, "model_kind": "detector", "train": "x.json", "test": "y.json:holdout"}]}))
    (row,) = load_matrix_config(p)
    assert row.experiment_id == "3" and row.test == DatasetRef(str(tmp_path / "y.json"), "holdout")
    p.write_text("[]")
    with pytest.raises(ConfigError):
        load_matrix_config(p)
    with pytest.raises(ConfigError):
        load_matrix_config(tmp_path / "missing.json")


def test_ablation_small(small_data, tmp_path):
    test = DatasetRef(str(small_data["uniform_path"]), "holdout")
    rep = run_ablation(small_data["diverse_path"], "classifier", test, seed=3, out_dir=tmp_path,
                       hyperparameters=FAST["classifier"], k_max=6)
    d = json.loads((tmp_path / "ablation.json").read_text())
    k = d["k"]
    assert 3 <= k <= 6 and len(d["clusters"]) == k
    n_train = len(small_data["diverse"].split("train"))
    assert sum(c["excluded"] for c in d["clusters"]) == n_train
    for c in d["clusters"]:
        assert c["delta_auc"] == pytest.approx(c["auc"] - d["baseline"]["auc"])
        assert (tmp_path / f"excl-{c['cluster']}" / "report.json").is_file()
        assert (tmp_path / "manifests" / f"{c['manifest']}.json").is_file()
    assert json.loads((tmp_path / "clusters.json").read_text())["chosen_k"] == k
    big, small = rep.largest(), rep.smallest()
    assert big[0].excluded >= small[0].excluded
    # rerun is byte-identical
    run_ablation(small_data["diverse_path"], "classifier", test, seed=3, out_dir=tmp_path / "again",
                 hyperparameters=FAST["classifier"], k_max=6)
    assert (tmp_path / "ablation.json").read_bytes() == (tmp_path / "again" / "ablation.json").read_bytes()


def test_ablation_manifest_loads(small_data, tmp_path):
    from inspecta.dataset import load_manifest

    test = DatasetRef(str(small_data["uniform_path"]), "holdout")
    run_ablation(small_data["diverse_path"], "classifier", test, out_dir=tmp_path,
                 hyperparameters=FAST["classifier"], k_max=4)
    m = load_manifest(next((tmp_path / "manifests").iterdir()))
    assert m.load_image(m.samples[0]).shape == (128, 128)


def test_ablation_needs_enough_images(small_data):
    test = DatasetRef(str(small_data["uniform_path"]), "holdout")
    with pytest.raises(ConfigError):
        run_ablation(small_data["diverse_path"], "classifier", test, k_min=20)


def test_roc_svg_structure(tmp_path):
    perfect = roc_curve([ScoredLabel("a", 0.9, Label.NG), ScoredLabel("b", 0.1, Label.OK)])
    rand = roc_curve([ScoredLabel(str(i), s, t) for i, (s, t) in enumerate(
        [(0.9, Label.NG), (0.8, Label.OK), (0.3, Label.NG), (0.2, Label.OK), (0.5, Label.OK), (0.4, Label.NG)])])
    svg = roc_svg([("perfect", perfect), ("random", rand)])
    assert svg.count("<polyline") == 2
    assert "(AUC 1.000)" in svg and f"(AUC {rand.area():.3f})" in svg and "0.5" in f"{rand.area():.3f}"
    assert 'class="chance"' in svg
    out = render_roc_svg([("one", perfect)], tmp_path / "r.svg")
    assert out.read_text().count("<polyline") == 1
    with pytest.raises(ValueError):
        roc_svg([])
    with pytest.raises(OSError):
        render_roc_svg([("one", perfect)], tmp_path / "r.svg" / "x.svg")
