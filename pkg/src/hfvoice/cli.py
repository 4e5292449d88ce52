"""Command-line entry point: ``hfvoice <command> ...``.

Every JSON artifact embeds the tool version, the resolved configuration
and the seed; CSV artifacts get a ``.meta.json`` sidecar with the same.
Errors go to stderr as one JSON object with exit status 1; usage errors
exit with 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, eval as ev, features, model as mdl, plotting
from .audio import Cohort, PatientRecord, SectionId, load_cohort, load_wav, parse_manifest
from .config import ExtractionConfig
from .errors import HFVoiceError, UnknownFeature
from .features import CLINICAL_PREFIX, FeatureMatrix
from .model import Hyper
from .selection import SelectionConfig, SelectionReport, select
from .synth import CohortSpec, mix_seed, synth_cohort

TOOL = "hfvoice"
# sub-seed tags: every random stream derives from --seed through mix_seed
SEED_SELECTION, SEED_SPLIT, SEED_GRID = 1, 2, 3
CONFIG_KEYS = ("extraction", "selection", "hyper", "split", "grid")


class UsageError(Exception):
    pass


# -- configuration ------------------------------------------------------------

def resolve_config(args) -> dict:
    """Defaults, then the JSON config file, then command-line flags."""
    raw = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(raw) - set(CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
    seed = int(args.seed)
    try:
        extraction = ExtractionConfig.from_dict(raw.get("extraction"))
        sel = dict(raw.get("selection", {}))
        for flag, key in (("mi_threshold", "mi_threshold"), ("lasso_strength", "lasso_strength"),
                          ("target_k", "target_k")):
            if getattr(args, flag, None) is not None:
                sel[key] = getattr(args, flag)
        sel["seed"] = mix_seed(seed, SEED_SELECTION)
        selection = SelectionConfig.from_dict(sel)
        hyp = dict(raw.get("hyper", {}))
        if getattr(args, "C", None) is not None:
            hyp["C"] = args.C
        if getattr(args, "penalty", None) is not None:
            hyp["penalty"] = args.penalty
        hyper = Hyper(**hyp)
        split = {"test_ratio": 0.35, "stratified": True, **raw.get("split", {})}
        if getattr(args, "test_ratio", None) is not None:
            split["test_ratio"] = args.test_ratio
        if set(split) - {"test_ratio", "stratified"}:
            raise ValueError(f"unknown split keys: {sorted(set(split) - {'test_ratio', 'stratified'})}")
        grid = raw.get("grid")
        if getattr(args, "grid", False) and grid is None:
            grid = ev.DEFAULT_GRID
        if grid is not None:
            ev.expand_grid(grid)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return {"extraction": extraction.to_dict(), "selection": asdict(selection),
            "hyper": hyper.to_dict(), "split": split, "grid": grid, "seed": seed}


def _extraction(conf) -> ExtractionConfig:
    return ExtractionConfig.from_dict(conf["extraction"])


def _pipeline(conf, passthrough=()) -> ev.PipelineConfig:
    return ev.PipelineConfig(SelectionConfig(**conf["selection"]), Hyper(**conf["hyper"]),
                             tuple(passthrough))


def provenance(conf, command) -> dict:
    return {"tool": TOOL, "version": __version__, "command": command,
            "config": conf, "seed": conf["seed"]}


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    text = _dump(obj)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _figure(args, name):
    if not getattr(args, "figures", None):
        return None
    os.makedirs(args.figures, exist_ok=True)
    return os.path.join(args.figures, name)


# -- helpers ------------------------------------------------------------------

def _clinical_column(name):
    return name if name.startswith(CLINICAL_PREFIX) else CLINICAL_PREFIX + name


def _acoustic_and_clinical(matrix: FeatureMatrix, clinical):
    """Drop clinical columns except the requested one (which must exist)."""
    keep = list(matrix.acoustic_names)
    passthrough = ()
    if clinical:
        col = _clinical_column(clinical)
        if col not in matrix.names:
            raise UnknownFeature(f"matrix has no column {col!r}", feature=col)
        keep.append(col)
        passthrough = (col,)
    return matrix.columns(keep), passthrough


def _load_matrix(path) -> FeatureMatrix:
    try:
        return features.matrix_from_csv(path)
    except OSError as exc:
        raise HFVoiceError(f"cannot read {path}: {exc.strerror}", path=path) from None


def _matrix_from_manifest(manifest, conf, jobs, with_clinical=False) -> FeatureMatrix:
    cohort = load_cohort(manifest)
    fm = features.build_matrix(cohort, _extraction(conf), jobs=jobs)
    if with_clinical:
        nt = features.cohort_clinical(cohort)
        if np.all(np.isfinite(nt)):
            fm = features.append_clinical(fm, "nt_probnp", nt)
    return fm


# -- commands -----------------------------------------------------------------

def cmd_synth(args, conf):
    spec = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    if args.n_patients is not None:
        spec["n_patients"] = args.n_patients
    spec["seed"] = conf["seed"]
    if args.full_scale:
        spec["full_scale"] = True
    cs = CohortSpec.from_dict(spec)
    cohort = synth_cohort(cs, args.out)
    summary = {**provenance(conf, "synth"), "cohort_spec": cs.to_dict(),
               "manifest": os.path.join(args.out, "manifest.jsonl"),
               "n_patients": len(cohort), "n_positive": int(cohort.labels.sum())}
    write_json(os.path.join(args.out, "synth.json"), summary)
    if getattr(args, "figures", None):
        p = cohort.patients[0]
        for sec in (SectionId.S1_Sentences, SectionId.S2_VowelA):
            plotting.waveform(p.sections[sec], _figure(args, f"synth_{p.patient_id}_section{int(sec)}.png"),
                              f"{p.patient_id} {sec.filename}")
    return summary


def cmd_extract(args, conf):
    fm = _matrix_from_manifest(args.manifest, conf, args.jobs, args.with_clinical)
    features.matrix_to_csv(fm, args.out)
    meta = {**provenance(conf, "extract"), "n_patients": fm.shape[0], "n_features": fm.shape[1],
            "n_missing": int(np.isnan(fm.raw).sum())}
    write_json(args.out + ".meta.json", meta)
    if getattr(args, "figures", None):
        plotting.missing_map(fm, _figure(args, "extract_missing.png"))
    return meta


def cmd_select(args, conf):
    fm, passthrough = _acoustic_and_clinical(_load_matrix(args.matrix), args.clinical)
    rep = select(fm.values, fm.labels, fm.names, SelectionConfig(**conf["selection"]), passthrough)
    out = {**provenance(conf, "select"), "report": asdict(rep)}
    write_json(args.out, out)
    if getattr(args, "figures", None):
        plotting.mi_scatter(rep, _figure(args, "select_mi.png"))
    return out


def cmd_train(args, conf):
    fm, passthrough = _acoustic_and_clinical(_load_matrix(args.matrix), args.clinical)
    n = fm.shape[0]
    train_idx, test_idx = np.arange(n), np.array([], dtype=int)
    if args.holdout:
        sp = conf["split"]
        train_idx, test_idx = ev.train_test_split(fm.labels, sp["test_ratio"],
                                                  mix_seed(conf["seed"], SEED_SPLIT), sp["stratified"])
    pipe = _pipeline(conf, passthrough)
    grid_res = None
    if conf["grid"] is not None:
        grid_res = ev.grid_search(fm, train_idx, conf["grid"], pipe,
                                  seed=mix_seed(conf["seed"], SEED_GRID))
        pipe = pipe.with_point(grid_res.best)
    if args.selection:
        with open(args.selection, encoding="utf-8") as fh:
            doc = json.load(fh)
        rep = SelectionReport(**doc.get("report", doc))
        vals, med = features.impute(fm.raw, train_idx)
        cols = [fm.column_index(c) for c in rep.selected]
        m = mdl.train(vals[np.ix_(train_idx, cols)], fm.labels[train_idx], rep.selected,
                      pipe.hyper, imputation=med[cols], seed=conf["seed"])
        fitted = ev.FittedPipeline(m, rep, med)
    else:
        fitted = ev.fit_pipeline(fm, train_idx, pipe)
    m = fitted.model
    m.train_meta["seed"] = conf["seed"]
    doc = mdl.to_dict(m)
    doc["provenance"] = provenance(conf, "train")
    doc["provenance"]["selected"] = list(fitted.report.selected)
    if grid_res is not None:
        doc["provenance"]["grid_best"] = grid_res.best
    write_json(args.out, doc)
    Xtr = m.align(fm.names, fm.raw[train_idx])
    result = {**provenance(conf, "train"), "model": args.out, "selected": m.feature_names,
              "train_metrics": ev.evaluate(m, Xtr, fm.labels[train_idx]).to_dict(),
              "train_rows": [fm.patient_ids[i] for i in train_idx],
              "converged": m.train_meta["converged"]}
    if test_idx.size:
        Xte = m.align(fm.names, fm.raw[test_idx])
        result["test_metrics"] = ev.evaluate(m, Xte, fm.labels[test_idx]).to_dict()
        result["test_rows"] = [fm.patient_ids[i] for i in test_idx]
    if grid_res is not None:
        result["grid"] = grid_res.to_dict()
    if passthrough:
        result["odds_ratio"] = mdl.odds_ratio_report(m, passthrough[0])
    if args.metrics:
        write_json(args.metrics, result)
    if getattr(args, "figures", None):
        plotting.coefficients(m, _figure(args, "train_coefficients.png"))
        trace = m.train_meta.get("objective_trace")
        if trace:
            plotting.objective_trace(trace, _figure(args, "train_objective.png"))
    return result


def _load_model(path):
    try:
        return mdl.load(path)
    except OSError as exc:
        raise HFVoiceError(f"cannot read {path}: {exc.strerror}", path=path) from None


def cmd_evaluate(args, conf):
    m = _load_model(args.model)
    fm = _load_matrix(args.matrix)
    rows = np.arange(fm.shape[0])
    if args.rows:
        wanted = set(args.rows.split(","))
        rows = np.array([i for i, p in enumerate(fm.patient_ids) if p in wanted], dtype=int)
    met = ev.evaluate(m, m.align(fm.names, fm.raw[rows]), fm.labels[rows])
    out = {**provenance(conf, "evaluate"), "model": args.model, "n": int(rows.size),
           "metrics": met.to_dict()}
    write_json(args.out, out)
    if getattr(args, "figures", None):
        plotting.confusion(met, _figure(args, "evaluate_confusion.png"))
    return out


def cmd_loocv(args, conf):
    if args.matrix:
        fm = _load_matrix(args.matrix)
    else:
        fm = _matrix_from_manifest(args.manifest, conf, args.jobs, with_clinical=bool(args.clinical))
    fm, passthrough = _acoustic_and_clinical(fm, args.clinical)
    cv = ev.loocv(fm, _pipeline(conf, passthrough), conf["grid"], leaky=args.leaky, jobs=args.jobs,
                  seed=mix_seed(conf["seed"], SEED_GRID))
    out = {**provenance(conf, "loocv"), "summary": cv.to_dict(include_models=args.include_models)}
    write_json(args.out, out)
    if args.predictions:
        _write_predictions(args.predictions, [
            {"patient_id": f.patient_id, "label": f.label, "z": f.z, "p": f.p,
             "label_hat": f.label_hat} for f in cv.folds])
    if getattr(args, "figures", None):
        plotting.confusion(cv.pooled, _figure(args, "loocv_confusion.png"),
                           f"LOOCV pooled accuracy {cv.pooled.accuracy:.3f}")
        plotting.predictor_by_class([f.z for f in cv.folds], [f.label for f in cv.folds],
                                    _figure(args, "loocv_predictor.png"))
    return out


PRED_COLUMNS = ("patient_id", "label", "z", "p", "label_hat")


def _write_predictions(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRED_COLUMNS)
        for r in rows:
            w.writerow([r["patient_id"], "" if r.get("label") is None else int(r["label"]),
                        repr(float(r["z"])), repr(float(r["p"])), int(r["label_hat"])])


def _read_predictions(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "patient_id" not in rows[0] or "z" not in rows[0]:
        raise HFVoiceError(f"{path}: expected columns patient_id and z", path=path)
    return {r["patient_id"]: float(r["z"]) for r in rows}


def cmd_predict(args, conf):
    m = _load_model(args.model)
    try:
        with open(args.model, encoding="utf-8") as fh:
            prov = json.load(fh).get("provenance", {})
    except (OSError, json.JSONDecodeError):
        prov = {}
    ext = ExtractionConfig.from_dict(prov["config"]["extraction"]) if prov.get("config") else _extraction(conf)
    if args.manifest:
        cohort = load_cohort(args.manifest)
    else:
        if len(args.sections) != 4:
            raise UsageError("--sections needs the four section WAVs in order")
        secs = {sec: load_wav(p, sec) for sec, p in zip(SectionId, args.sections)}
        cohort = Cohort((PatientRecord(args.patient_id, secs, 0, args.nt_probnp),))
    names = features.registry(ext)
    records = []
    for p in cohort.patients:
        vec = features.extract_patient(p, ext)
        row_names = list(names)
        if any(n.startswith(CLINICAL_PREFIX) for n in m.feature_names):
            row_names.append(CLINICAL_PREFIX + "nt_probnp")
            nt = args.nt_probnp if args.nt_probnp is not None else p.nt_probnp
            vec = np.append(vec, np.nan if nt is None else float(nt))
        raw = m.align(row_names, vec)
        z = m.acoustic_predictor(raw)
        prob = m.predict_proba(raw)
        records.append({"patient_id": p.patient_id, "z": z, "p": prob,
                        "label_hat": int(prob >= m.decision_threshold),
                        "label": p.label if args.manifest else None})
    out = {**provenance(conf, "predict"), "model": args.model, "predictions": records}
    if args.out and args.out.endswith(".csv"):
        _write_predictions(args.out, records)
        write_json(args.out + ".meta.json", {k: v for k, v in out.items() if k != "predictions"})
    else:
        write_json(args.out, out)
    return out


def cmd_stats(args, conf):
    cohort_rows = {r["patient_id"]: r for r in parse_manifest(args.manifest)}
    z = _read_predictions(args.predictions)
    missing = [p for p in cohort_rows if p not in z]
    if missing:
        raise HFVoiceError(f"no prediction for patients {missing[:5]}", patients=missing)
    pids = list(cohort_rows)
    labels = [cohort_rows[p]["label"] for p in pids]
    cont = {}
    nt = [cohort_rows[p]["nt_probnp"] for p in pids]
    if all(v is not None for v in nt):
        cont["NT-proBNP"] = nt
    rows = ev.cohort_table(labels, [z[p] for p in pids], cont)
    ev.table_to_csv(rows, args.out)
    write_json(args.out + ".meta.json", provenance(conf, "stats"))
    if getattr(args, "figures", None):
        plotting.predictor_by_class([z[p] for p in pids], labels, _figure(args, "stats_predictor.png"))
    return rows


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--figures", metavar="DIR", help="also write PNG figures to DIR")

    sel = argparse.ArgumentParser(add_help=False)
    sel.add_argument("--mi-threshold", dest="mi_threshold", type=float)
    sel.add_argument("--lasso-strength", dest="lasso_strength", type=float)
    sel.add_argument("--target-k", dest="target_k", type=int)

    hyp = argparse.ArgumentParser(add_help=False)
    hyp.add_argument("--C", dest="C", type=float, help="inverse regularization strength")
    hyp.add_argument("--penalty", choices=("L1", "L2"))
    hyp.add_argument("--grid", action="store_true", help="nested grid search (default grid)")
    hyp.add_argument("--clinical", metavar="NAME",
                     help="clinical column to add as a fixed predictor (e.g. nt_probnp)")

    p = argparse.ArgumentParser(prog=TOOL, description="Voice-biomarker risk prediction pipeline.")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--spec", help="CohortSpec JSON")
    s.add_argument("--n-patients", dest="n_patients", type=int)
    s.add_argument("--full-scale", dest="full_scale", action="store_true")

    s = sub.add_parser("extract", parents=[common], help="manifest -> feature matrix CSV")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--with-clinical", dest="with_clinical", action="store_true",
                   help="append the manifest's nt_probnp as clinical/nt_probnp")

    s = sub.add_parser("select", parents=[common, sel], help="feature selection report")
    s.add_argument("matrix")
    s.add_argument("--out", default="-")
    s.add_argument("--clinical", metavar="NAME")

    s = sub.add_parser("train", parents=[common, sel, hyp], help="fit the logistic model")
    s.add_argument("matrix")
    s.add_argument("--out", required=True, help="model JSON")
    s.add_argument("--metrics", help="write train (and test) metrics JSON here")
    s.add_argument("--holdout", action="store_true", help="train on a stratified split, report test")
    s.add_argument("--test-ratio", dest="test_ratio", type=float)
    s.add_argument("--selection", help="use the features of a select report instead of reselecting")

    s = sub.add_parser("evaluate", parents=[common], help="metrics of a model on a matrix")
    s.add_argument("model")
    s.add_argument("matrix")
    s.add_argument("--rows", help="comma-separated patient ids (default: all)")
    s.add_argument("--out", default="-")

    s = sub.add_parser("loocv", parents=[common, sel, hyp], help="leave-one-out cross-validation")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--matrix")
    s.add_argument("--out", default="-")
    s.add_argument("--predictions", help="write per-patient out-of-fold predictions CSV")
    s.add_argument("--leaky", action="store_true", help="select once on all rows (comparison only)")
    s.add_argument("--include-models", dest="include_models", action="store_true")

    s = sub.add_parser("predict", parents=[common], help="acoustic predictor for new recordings")
    s.add_argument("model")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--sections", nargs="+", metavar="WAV", help="Section1..4 WAVs in order")
    s.add_argument("--patient-id", dest="patient_id", default="patient")
    s.add_argument("--nt-probnp", dest="nt_probnp", type=float)
    s.add_argument("--out", default="-", help="JSON, or CSV when the name ends in .csv")

    s = sub.add_parser("stats", parents=[common], help="two-group cohort table CSV")
    s.add_argument("manifest")
    s.add_argument("predictions", help="CSV with patient_id and z columns")
    s.add_argument("--out", required=True)
    return p


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "select": cmd_select, "train": cmd_train,
            "evaluate": cmd_evaluate, "loocv": cmd_loocv, "predict": cmd_predict, "stats": cmd_stats}


def _fail(payload, code):
    sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        conf = resolve_config(args)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        COMMANDS[args.command](args, conf)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail({"error": "UsageError", "message": str(exc)}, 2)
    except HFVoiceError as exc:
        return _fail(exc.to_dict(), 1)
    except (OSError, ValueError) as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
