"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL`` line straight to the
terminal (bypassing capture) before asserting.
"""

import json
import math
import shutil
import time

import numpy as np
import pytest

from hfvoice import cli, dsp, eval as ev, glottal, model as mdl, phonation
from hfvoice.features import FeatureMatrix, append_clinical, build_matrix
from hfvoice.model import Hyper, LogisticModel, Scaler
from hfvoice.selection import SelectionConfig, select, stability_filter
from hfvoice.synth import SynthSpec, synth_cohort, synth_from_cycles, synth_voice

from helpers import MARGINAL, SEPARABLE, clinical_column, null_spec, planted, planted_matrix


def verdict(capsys, n, checks, elapsed=None, limit=None):
    """Print one line for criterion n and fail on any unmet check."""
    if limit is not None:
        checks = {**checks, f"runtime {elapsed:.1f}s < {limit}s": elapsed < limit}
    failed = [k for k, ok in checks.items() if not ok]
    line = f"[criterion {n}] {'PASS' if not failed else 'FAIL'}: " + "; ".join(checks)
    with capsys.disabled():
        print("\n" + line)
    assert not failed, failed


def test_criterion_1_split_shape(capsys):
    t0 = time.perf_counter()
    y = np.array([0] * 15 + [1] * 14)
    tr, te = ev.train_test_split(y, 0.35, seed=0)
    fm = planted_matrix(0, n=29, n_cols=12, n_planted=4)
    cv = ev.loocv(fm)
    pooled = cv.pooled.tp + cv.pooled.fp + cv.pooled.tn + cv.pooled.fn
    elapsed = time.perf_counter() - t0
    verdict(capsys, 1, {
        f"split {len(tr)}/{len(te)} == 18/11": (len(tr), len(te)) == (18, 11),
        f"LOOCV folds {cv.n_folds} == 29": cv.n_folds == 29,
        f"pooled predictions {pooled} == 29": pooled == 29,
    }, elapsed, 1.0)


def test_criterion_2_dsp_oracles(capsys):
    t0 = time.perf_counter()
    c = dsp.estimate_f0(synth_voice(SynthSpec(f0_hz=150, duration_s=1.0, snr_db=None)))
    f0 = float(np.median(c.f0_hz[c.voiced]))

    jit = [phonation.phonation_features(synth_voice(SynthSpec(f0_hz=150, jitter_pct=3.0, seed=s)))
           ["Section2.wav/phonation/avg Jitter"] for s in range(10)]

    seg, _ = synth_from_cycles(np.full(200, 1 / 150), np.tile([0.9, 1.1], 100), amplitude_stage="output")
    runs = phonation.extract_cycles(seg.samples, 16000, dsp.estimate_f0(seg))
    shim = phonation.shimmer(np.concatenate([r.amplitudes for r in runs]))

    key = "Section2.wav/glottal/global avg avg "
    oq = glottal.glottal_features(synth_voice(SynthSpec(f0_hz=150, oq=0.6, seed=3)))[key + "OQ"]
    rich = glottal.glottal_features(synth_voice(SynthSpec(oq=0.6)))[key + "HRF"]
    smooth = glottal.glottal_features(synth_voice(SynthSpec(oq=0.99, pulse_shape="raised_cosine")))[key + "HRF"]
    elapsed = time.perf_counter() - t0
    verdict(capsys, 2, {
        f"F0 {f0:.2f} within 150 +/- 2": abs(f0 - 150) <= 2,
        f"jitter {min(jit):.2f}..{max(jit):.2f}% in [2, 4]": all(2 <= j <= 4 for j in jit),
        f"alternating shimmer {shim:.2f}% within 20 +/- 2": abs(shim - 20) <= 2,
        f"OQ {oq:.3f} within 0.6 +/- 0.1": abs(oq - 0.6) <= 0.1,
        f"HRF gap {rich - smooth:.1f} dB >= 6": rich - smooth >= 6,
    }, elapsed, 30.0)


def test_criterion_3_optimization(capsys):
    h = 1e-5
    worst = 0.0
    monotone = True
    agree = 0.0
    for s in range(20):
        rng = np.random.default_rng(s)
        n, d = int(rng.integers(15, 60)), int(rng.integers(2, 8))
        y = rng.permutation(np.arange(n) % 2).astype(float)
        X = rng.standard_normal((n, d)) + y[:, None] * rng.uniform(0, 1.5, d)
        C = float(rng.uniform(0.05, 2.0))
        beta = rng.standard_normal(d + 1)
        _, g = mdl.loss_and_gradient((beta[0], beta[1:]), X, y, C, "L2")
        fd = np.empty(d + 1)
        for k in range(d + 1):
            e = np.zeros(d + 1)
            e[k] = h
            up = mdl.loss_and_gradient((beta[0] + e[0], beta[1:] + e[1:]), X, y, C, "L2")[0]
            dn = mdl.loss_and_gradient((beta[0] - e[0], beta[1:] - e[1:]), X, y, C, "L2")[0]
            fd[k] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))

        a = mdl.newton_l2(X, y, C)
        b = mdl.newton_l2(X, y, C, init=rng.normal(0, 3, d + 1))
        agree = max(agree, float(np.max(np.abs(a.theta - b.theta))), abs(a.theta0 - b.theta0))
        l1 = mdl.prox_cd_l1(X, y, C)
        monotone &= all(np.all(np.diff(t.trace) <= 0) for t in (a, b, l1))
    verdict(capsys, 3, {
        f"gradient rel. error {worst:.1e} <= 1e-5": worst <= 1e-5,
        f"L2 fits from two inits differ by {agree:.1e} <= 1e-6": agree <= 1e-6,
        "objective traces non-increasing": monotone,
    })


def test_criterion_4_selection_recovery(capsys):
    kept, top5 = [], 0
    for s in range(5):
        X, y, names, signal = planted(s, n=30, n_cols=200, n_planted=12)
        cfg = SelectionConfig(seed=s)
        kept.append(len(signal & set(stability_filter(X, y, names, cfg).survivors)))
        top5 += set(select(X, y, names, cfg).selected) <= signal
    X, y, names, _ = planted(0, n=30, n_cols=200, n_planted=12)
    sets = [set(stability_filter(X, y, names, SelectionConfig(mi_threshold=t)).survivors)
            for t in (0.0, 0.05, 0.105, 0.2)]
    nested = all(hi <= lo for lo, hi in zip(sets, sets[1:]))
    verdict(capsys, 4, {
        f"stage-1 keeps {kept} of 12 planted (each >= 10)": min(kept) >= 10,
        f"top-5 inside planted in {top5}/5 seeds (>= 4)": top5 >= 4,
        f"survivor sets nested {[len(s) for s in sets]}": nested,
    })


@pytest.mark.slow
def test_criterion_5_end_to_end(capsys):
    t0 = time.perf_counter()
    sep = ev.loocv(build_matrix(synth_cohort(SEPARABLE))).test_avg["accuracy"]
    null = [ev.loocv(build_matrix(synth_cohort(null_spec(100 + s)))).test_avg["accuracy"] for s in range(5)]
    elapsed = time.perf_counter() - t0
    verdict(capsys, 5, {
        f"separable LOOCV accuracy {sep:.3f} >= 0.90": sep >= 0.90,
        f"null accuracies {[round(a, 3) for a in null]} in [0.2, 0.8]": all(0.2 <= a <= 0.8 for a in null),
    }, elapsed, 180.0)


@pytest.mark.slow
def test_criterion_6_clinical_fusion(capsys):
    fm = build_matrix(synth_cohort(MARGINAL))
    nt = clinical_column(fm.labels, seed=0, target_std=9800.0)
    base = ev.loocv(fm).test_avg["accuracy"]
    fused_fm = append_clinical(fm, "nt_probnp", nt)
    fused = ev.loocv(fused_fm, ev.PipelineConfig(passthrough=("clinical/nt_probnp",))).test_avg["accuracy"]

    m = LogisticModel(0.0, np.array([0.39]), ["clinical/nt_probnp"],
                      Scaler(np.array([float(nt.mean())]), np.array([float(nt.std())]), np.array([False])))
    rep = mdl.odds_ratio_report(m, "clinical/nt_probnp")
    verdict(capsys, 6, {
        f"LOOCV {base:.3f} -> {fused:.3f} (gain >= 0.05)": fused - base >= 0.05,
        f"clinical std {nt.std():.1f} == 9800": abs(nt.std() - 9800) < 1e-6,
        f"odds ratio {rep['odds_ratio_scaled']:.4f} == exp(0.39)":
            abs(rep["odds_ratio_scaled"] - math.exp(0.39)) < 1e-12 and round(rep["odds_ratio_scaled"], 2) == 1.48,
        f"statement '{rep['statement']}'": rep["statement"] == "per 9800-unit increase, odds ×1.477",
    })


def test_criterion_7_no_leakage(capsys):
    fm = planted_matrix(3, n=20, n_cols=60, n_planted=6)
    cfg = ev.PipelineConfig()
    ref = ev.loocv(fm, cfg)
    rng = np.random.default_rng(0)
    changed = []
    for i in range(fm.shape[0]):
        raw = fm.raw.copy()
        raw[i] = rng.standard_normal(raw.shape[1]) * 1e3
        raw[i, rng.random(raw.shape[1]) < 0.3] = np.nan
        bad = FeatureMatrix(fm.names, raw, fm.labels, fm.patient_ids)
        cv = ev.loocv(bad, cfg)
        # the mutated row is held out only in fold i
        if json.dumps(cv.folds[i].model) != json.dumps(ref.folds[i].model):
            changed.append(i)
    verdict(capsys, 7, {f"folds whose model changed when their test row was mutated: {changed}": not changed})


def test_criterion_8_statistics(capsys):
    rng = np.random.default_rng(0)
    same = ev.t_test([1.0, 2.0, 3.0, 5.0], [1.0, 2.0, 3.0, 5.0])
    extreme = ev.t_test(1e-3 * rng.standard_normal(5), 1 + 1e-3 * rng.standard_normal(5))
    chi = ev.chi_square([[10, 0], [0, 10]])
    y = np.array([0] * 15 + [1] * 14)
    z = np.where(y == 1, 0.81, 0.21) + 0.18 * rng.standard_normal(29)
    row = ev.cohort_table(y, z)[-1]
    verdict(capsys, 8, {
        f"identical groups p = {same['p_two_sided']}": same["p_two_sided"] == 1.0,
        f"extreme separation p = {extreme['p_two_sided']:.1e} < 0.001": extreme["p_two_sided"] < 0.001,
        f"chi2 = {chi['chi2']:.6f} == 20": abs(chi["chi2"] - 20) < 1e-12,
        f"acoustic predictor row p = {row['p']:.1e} < 0.001": row["variable"] == "Acoustic Predictor"
        and row["p"] < 0.001,
    })


def _chain(root, cohort):
    root.mkdir()
    m = root / "matrix.csv"
    steps = [
        ["extract", cohort / "manifest.jsonl", "--out", m, "--with-clinical"],
        ["select", m, "--out", root / "select.json"],
        ["train", m, "--out", root / "model.json", "--metrics", root / "train.json"],
        ["loocv", "--matrix", m, "--out", root / "loocv.json", "--predictions", root / "pred.csv"],
    ]
    codes = [cli.main([str(a) for a in s] + ["--seed", "11"]) for s in steps]
    return codes, {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_criterion_9_determinism(capsys, tmp_path):
    cohort = tmp_path / "cohort"
    assert cli.main(["synth", "--out", str(cohort), "--seed", "11", "--n-patients", "10"]) == 0
    # same output directory both times: artifacts echo their own paths
    ca, a = _chain(tmp_path / "run", cohort)
    shutil.rmtree(tmp_path / "run")
    cb, b = _chain(tmp_path / "run", cohort)
    same = [k for k in a if a[k] == b.get(k)]
    verdict(capsys, 9, {
        f"exit codes {ca} and {cb} all zero": not any(ca + cb),
        f"{len(same)}/{len(a)} artifacts byte-identical": a.keys() == b.keys() and len(same) == len(a) >= 7,
    })
