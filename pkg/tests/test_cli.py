import csv
import json
import os

import numpy as np
import pytest

from hfvoice import cli, model as mdl
from hfvoice.features import matrix_from_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    """Ten-patient cohort pushed through synth and extract."""
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", d / "cohort", "--seed", 5, "--n-patients", 10) == 0
    assert run("extract", d / "cohort" / "manifest.jsonl", "--out", d / "m.csv", "--with-clinical") == 0
    return d


def test_synth_writes_manifest_and_summary(small):
    summary = json.loads((small / "cohort" / "synth.json").read_text())
    assert summary["n_patients"] == 10 and summary["seed"] == 5
    assert summary["tool"] == "hfvoice" and "config" in summary
    assert len((small / "cohort" / "manifest.jsonl").read_text().splitlines()) == 10


def test_extract_embeds_provenance(small):
    meta = json.loads((small / "m.csv.meta.json").read_text())
    assert meta["n_patients"] == 10 and meta["version"] and meta["seed"] == 0
    fm = matrix_from_csv(small / "m.csv")
    assert fm.names[-1] == "clinical/nt_probnp"


def test_loocv_on_default_cohort(matrix29_csv, tmp_path):
    out = tmp_path / "cv.json"
    assert run("loocv", "--matrix", matrix29_csv, "--out", out, "--predictions", tmp_path / "p.csv",
               "--seed", 7) == 0
    doc = json.loads(out.read_text())
    assert doc["summary"]["n_folds"] == 29 and len(doc["summary"]["folds"]) == 29
    assert doc["config"]["hyper"]["C"] == 0.2 and doc["config"]["hyper"]["penalty"] == "L2"
    with open(tmp_path / "p.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 29


def test_missing_clinical_column(matrix29_csv, tmp_path, capsys):
    code = run("train", matrix29_csv, "--out", tmp_path / "m.json", "--clinical", "nt_probnp")
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "UnknownFeature" and err["feature"] == "clinical/nt_probnp"
    assert not (tmp_path / "m.json").exists()


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["train"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        cli.main(["frobnicate"])
    assert ei.value.code == 2
    (tmp_path / "bad.json").write_text('{"nonsense": {}}')
    assert run("select", "x.csv", "--config", tmp_path / "bad.json") == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "UsageError"
    assert run("select", tmp_path / "absent.csv") == 1


def test_chain_reproduces_training_z(small, tmp_path):
    sel = tmp_path / "sel.json"
    model = tmp_path / "model.json"
    assert run("select", small / "m.csv", "--out", sel, "--clinical", "nt_probnp") == 0
    assert run("train", small / "m.csv", "--selection", sel, "--out", model, "--clinical", "nt_probnp",
               "--metrics", tmp_path / "train.json") == 0
    rep = json.loads(sel.read_text())["report"]
    m = mdl.load(model)
    assert m.feature_names == rep["selected"] and m.feature_names[-1] == "clinical/nt_probnp"
    fm = matrix_from_csv(small / "m.csv")
    z_train = m.acoustic_predictor(m.align(fm.names, fm.raw))
    assert run("predict", model, "--manifest", small / "cohort" / "manifest.jsonl",
               "--out", tmp_path / "pred.csv") == 0
    with open(tmp_path / "pred.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["patient_id"] for r in rows] == fm.patient_ids
    assert np.allclose([float(r["z"]) for r in rows], z_train, rtol=0, atol=1e-9)
    metrics = json.loads((tmp_path / "train.json").read_text())
    assert metrics["odds_ratio"]["feature"] == "clinical/nt_probnp"

    # a single patient through --sections gives the same z
    pdir = small / "cohort" / fm.patient_ids[0]
    wavs = [pdir / f"Section{k}.wav" for k in range(1, 5)]
    nt = fm.raw[0, -1]
    assert run("predict", model, "--sections", *wavs, "--nt-probnp", repr(float(nt)),
               "--out", tmp_path / "one.json") == 0
    one = json.loads((tmp_path / "one.json").read_text())["predictions"][0]
    assert abs(one["z"] - z_train[0]) <= 1e-9


def test_evaluate_and_stats(small, tmp_path):
    model = tmp_path / "model.json"
    assert run("train", small / "m.csv", "--out", model, "--holdout", "--test-ratio", 0.4,
               "--metrics", tmp_path / "tm.json") == 0
    tm = json.loads((tmp_path / "tm.json").read_text())
    assert len(tm["train_rows"]) == 6 and len(tm["test_rows"]) == 4
    assert run("evaluate", model, small / "m.csv", "--rows", ",".join(tm["test_rows"]),
               "--out", tmp_path / "ev.json") == 0
    ev = json.loads((tmp_path / "ev.json").read_text())
    assert ev["n"] == 4 and ev["metrics"] == tm["test_metrics"]
    assert run("loocv", "--matrix", small / "m.csv", "--predictions", tmp_path / "p.csv",
               "--out", tmp_path / "cv.json") == 0
    assert run("stats", small / "cohort" / "manifest.jsonl", tmp_path / "p.csv",
               "--out", tmp_path / "table.csv") == 0
    with open(tmp_path / "table.csv") as fh:
        names = [r["variable"] for r in csv.DictReader(fh)]
    assert names == ["N", "NT-proBNP", "Acoustic Predictor"]


def test_flags_override_config(small, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"hyper": {"C": 0.5, "penalty": "L1"}}))
    out = tmp_path / "m.json"
    assert run("train", small / "m.csv", "--out", out, "--config", tmp_path / "c.json", "--C", 0.1) == 0
    hyper = json.loads(out.read_text())["provenance"]["config"]["hyper"]
    assert hyper["C"] == 0.1 and hyper["penalty"] == "L1"


def test_outputs_are_byte_identical(small, tmp_path):
    for tag in ("a", "b"):
        assert run("select", small / "m.csv", "--out", tmp_path / f"s{tag}.json", "--seed", 3) == 0
        assert run("train", small / "m.csv", "--out", tmp_path / f"m{tag}.json", "--seed", 3) == 0
    assert (tmp_path / "sa.json").read_bytes() == (tmp_path / "sb.json").read_bytes()
    assert (tmp_path / "ma.json").read_bytes() == (tmp_path / "mb.json").read_bytes()
    assert run("select", small / "m.csv", "--out", tmp_path / "s4.json", "--seed", 4) == 0
    seed3 = json.loads((tmp_path / "sa.json").read_text())["config"]["selection"]["seed"]
    seed4 = json.loads((tmp_path / "s4.json").read_text())["config"]["selection"]["seed"]
    assert seed3 != seed4


def test_jobs_do_not_change_extraction(small, tmp_path):
    assert run("extract", small / "cohort" / "manifest.jsonl", "--out", tmp_path / "m2.csv",
               "--with-clinical", "--jobs", 2) == 0
    assert (tmp_path / "m2.csv").read_bytes() == (small / "m.csv").read_bytes()


def test_figures(small, tmp_path):
    fig = tmp_path / "fig"
    assert run("select", small / "m.csv", "--out", tmp_path / "s.json", "--figures", fig) == 0
    assert run("train", small / "m.csv", "--out", tmp_path / "m.json", "--figures", fig) == 0
    assert run("loocv", "--matrix", small / "m.csv", "--out", tmp_path / "cv.json", "--figures", fig) == 0
    made = sorted(os.listdir(fig))
    assert {"select_mi.png", "train_coefficients.png", "train_objective.png",
            "loocv_confusion.png", "loocv_predictor.png"} <= set(made)
    assert all((fig / f).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for f in made)
