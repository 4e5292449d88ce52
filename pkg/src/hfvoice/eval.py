"""Splits, metrics, nested grid search, leave-one-out CV and two-group
statistics.

Every train/test evaluation refits the whole pipeline (median imputation,
stage-1 MI filter, RFE, standardization and the logistic fit) on the
training rows only.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betainc, gammaincc

from .errors import DegenerateGroups, DegenerateSplit, FoldFailure, HFVoiceError, InfeasibleFolds
from .features import FeatureMatrix, impute
from .model import Hyper, LogisticModel, to_dict, train
from .selection import SelectionConfig, SelectionReport, select

DEFAULT_GRID = {
    "C": [0.05, 0.1, 0.2, 0.5, 1.0],
    "penalty": ["L1", "L2"],
    "mi_threshold": [0.05, 0.105, 0.15],
    "lasso_strength": [0.8, 1.2, 1.6],
}


# -- splitting ----------------------------------------------------------------

def _allocate(counts, total):
    """Largest-remainder split of ``total`` proportional to ``counts``."""
    counts = np.asarray(counts, dtype=np.float64)
    quota = counts * total / counts.sum()
    base = np.floor(quota).astype(int)
    left = total - base.sum()
    # larger remainders first, ties to the lower class index
    order = sorted(range(len(counts)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def train_test_split(labels, test_ratio: float = 0.35, seed: int = 0,
                     stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Sorted (train, test) row indices with test size ceil(n * ratio)."""
    y = np.asarray(labels, dtype=int)
    n = len(y)
    if not 0 < test_ratio < 1:
        raise ValueError("test_ratio must lie in (0, 1)")
    if len(np.unique(y)) < 2:
        raise DegenerateSplit("both classes must be present")
    n_test = int(math.ceil(n * test_ratio - 1e-9))
    if not 0 < n_test < n:
        raise DegenerateSplit(f"test size {n_test} leaves an empty side", n=n)
    rng = np.random.default_rng(seed)
    if stratified:
        classes = [np.nonzero(y == c)[0] for c in (0, 1)]
        take = _allocate([len(c) for c in classes], n_test)
        test = np.concatenate([rng.permutation(c)[:k] for c, k in zip(classes, take)])
    else:
        test = rng.permutation(n)[:n_test]
    test = np.sort(test)
    train_idx = np.setdiff1d(np.arange(n), test)
    if not stratified and (len(np.unique(y[test])) < 2 or len(np.unique(y[train_idx])) < 2):
        raise DegenerateSplit("a side of the split is single-class", seed=seed)
    return train_idx, test


def stratified_kfold(labels, k: int, seed: int = 0) -> list[np.ndarray]:
    """Test-index arrays of k folds, each class dealt round-robin after a
    seeded shuffle."""
    y = np.asarray(labels, dtype=int)
    minority = min(int((y == 0).sum()), int((y == 1).sum()))
    if k < 2 or k > minority:
        raise InfeasibleFolds(f"{k} folds need at least {k} rows of each class "
                              f"(smallest class has {minority})", k=k, minority=minority)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in (0, 1):
        idx = rng.permutation(np.nonzero(y == c)[0])
        for i, row in enumerate(idx):
            folds[(offset + i) % k].append(int(row))
        offset += len(idx)
    return [np.sort(np.array(f, dtype=int)) for f in folds]


# -- metrics ------------------------------------------------------------------

@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision_undefined: bool = False
    recall_undefined: bool = False

    @property
    def confusion(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_counts(tp, fp, tn, fn) -> Metrics:
    total = tp + fp + tn + fn
    p_undef = tp + fp == 0
    r_undef = tp + fn == 0
    prec = 0.0 if p_undef else tp / (tp + fp)
    rec = 0.0 if r_undef else tp / (tp + fn)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    acc = (tp + tn) / total if total else 0.0
    return Metrics(acc, prec, rec, f1, int(tp), int(fp), int(tn), int(fn), p_undef, r_undef)


def metrics_from_labels(y_true, y_pred) -> Metrics:
    y = np.asarray(y_true, dtype=int)
    h = np.asarray(y_pred, dtype=int)
    if y.shape != h.shape:
        raise ValueError("label vectors differ in shape")
    return metrics_from_counts(int(((h == 1) & (y == 1)).sum()), int(((h == 1) & (y == 0)).sum()),
                               int(((h == 0) & (y == 0)).sum()), int(((h == 0) & (y == 1)).sum()))


def evaluate(model: LogisticModel, X, y) -> Metrics:
    """Metrics of the model's 0/1 predictions on raw rows X (label 1 positive)."""
    return metrics_from_labels(y, np.atleast_1d(model.classify(np.atleast_2d(X))))


def average_metrics(items) -> dict:
    items = list(items)
    keys = ("accuracy", "precision", "recall", "f1")
    return {k: float(np.mean([getattr(m, k) for m in items])) for k in keys}


# -- pipeline -----------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    selection: SelectionConfig = SelectionConfig()
    hyper: Hyper = Hyper()
    # columns that bypass selection and always enter the model
    passthrough: tuple = ()

    def to_dict(self) -> dict:
        return {"selection": asdict(self.selection), "hyper": self.hyper.to_dict(),
                "passthrough": list(self.passthrough)}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - {"selection", "hyper", "passthrough"}
        if unknown:
            raise ValueError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(SelectionConfig.from_dict(d.get("selection", {})), Hyper(**d.get("hyper", {})),
                   tuple(d.get("passthrough", ())))

    def with_point(self, point: dict) -> "PipelineConfig":
        sel = {**asdict(self.selection)}
        hyp = self.hyper.to_dict()
        for k, v in point.items():
            if k in sel:
                sel[k] = v
            elif k in hyp:
                hyp[k] = v
            else:
                raise ValueError(f"unknown grid key {k!r}")
        return PipelineConfig(SelectionConfig(**sel), Hyper(**hyp), self.passthrough)


@dataclass
class FittedPipeline:
    model: LogisticModel
    report: SelectionReport
    medians: np.ndarray  # all columns, from the training rows

    def predict_rows(self, matrix: FeatureMatrix, rows) -> dict:
        raw = self.model.align(matrix.names, matrix.raw[np.asarray(rows, dtype=int)])
        z = np.atleast_1d(self.model.acoustic_predictor(raw))
        p = np.atleast_1d(self.model.predict_proba(raw))
        return {"z": z, "p": p, "label_hat": (p >= self.model.decision_threshold).astype(int)}


def _select_stage(matrix, train_idx, scfg, passthrough):
    vals, med = impute(matrix.raw, train_idx)
    Xtr = vals[train_idx]
    rep = select(Xtr, matrix.labels[train_idx], matrix.names, scfg, passthrough)
    return rep, Xtr, med


def _model_stage(matrix, train_idx, rep, Xtr, med, hyper, seed):
    cols = [matrix.names.index(n) for n in rep.selected]
    return train(Xtr[:, cols], matrix.labels[train_idx], rep.selected, hyper,
                 imputation=med[cols], seed=seed)


def fit_pipeline(matrix: FeatureMatrix, train_idx, cfg: PipelineConfig = PipelineConfig()) -> FittedPipeline:
    train_idx = np.asarray(train_idx, dtype=int)
    rep, Xtr, med = _select_stage(matrix, train_idx, cfg.selection, cfg.passthrough)
    model = _model_stage(matrix, train_idx, rep, Xtr, med, cfg.hyper, cfg.selection.seed)
    return FittedPipeline(model, rep, med)


# -- grid search --------------------------------------------------------------

def expand_grid(grid: dict) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be non-empty")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class GridResult:
    best: dict
    best_score: float
    table: list  # {"point", "mean_score", "fold_scores"} in grid order

    def to_dict(self) -> dict:
        return asdict(self)


def grid_search(matrix: FeatureMatrix, train_idx, grid: dict | None = None,
                base: PipelineConfig = PipelineConfig(), inner_folds: int = 3,
                scoring: str = "accuracy", seed: int = 0) -> GridResult:
    """Exhaustive search with the whole pipeline refit on inner folds.

    Selection depends only on the selection keys of a point, so it runs
    once per (fold, selection setting) and is shared by the model settings.
    Ties go to lower C, then L2, then lower MI threshold, then grid order.
    """
    points = expand_grid(grid or DEFAULT_GRID)
    train_idx = np.asarray(train_idx, dtype=int)
    folds = stratified_kfold(matrix.labels[train_idx], inner_folds, seed)
    sel_keys = set(asdict(base.selection))
    scores = np.zeros((len(points), len(folds)))
    for f, test_local in enumerate(folds):
        te = train_idx[test_local]
        tr = np.setdiff1d(train_idx, te)
        cache = {}
        for i, pt in enumerate(points):
            cfg = base.with_point(pt)
            key = tuple(sorted((k, v) for k, v in pt.items() if k in sel_keys))
            if key not in cache:
                cache[key] = _select_stage(matrix, tr, cfg.selection, cfg.passthrough)
            rep, Xtr, med = cache[key]
            model = _model_stage(matrix, tr, rep, Xtr, med, cfg.hyper, cfg.selection.seed)
            pred = FittedPipeline(model, rep, med).predict_rows(matrix, te)["label_hat"]
            m = metrics_from_labels(matrix.labels[te], pred)
            scores[i, f] = getattr(m, scoring)
    mean = scores.mean(axis=1)

    def rank(i):
        pt = base.with_point(points[i])
        return (-mean[i], pt.hyper.C, pt.hyper.penalty != "L2", pt.selection.mi_threshold, i)

    best = min(range(len(points)), key=rank)
    table = [{"point": pt, "mean_score": float(mean[i]), "fold_scores": scores[i].tolist()}
             for i, pt in enumerate(points)]
    return GridResult(points[best], float(mean[best]), table)


# -- cross-validation ---------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    test_index: int
    patient_id: str
    label: int
    z: float
    p: float
    label_hat: int
    train: Metrics
    test: Metrics
    selected: list
    point: dict | None = None
    model: dict = field(default=None, repr=False)


@dataclass
class CvSummary:
    folds: list
    train_avg: dict
    test_avg: dict
    pooled: Metrics
    config: dict
    leaky: bool = False

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def to_dict(self, include_models: bool = False) -> dict:
        folds = []
        for fr in self.folds:
            d = asdict(fr)
            if not include_models:
                d.pop("model")
            folds.append(d)
        return {"n_folds": self.n_folds, "leaky": self.leaky, "config": self.config,
                "train_avg": self.train_avg, "test_avg": self.test_avg,
                "pooled_test": self.pooled.to_dict(), "folds": folds}


def _run_fold(args):
    matrix, i, cfg, grid, seed, shared = args
    n = matrix.shape[0]
    tr = np.setdiff1d(np.arange(n), [i])
    try:
        point = None
        if grid is not None:
            gr = grid_search(matrix, tr, grid, cfg, seed=seed)
            point = gr.best
            cfg = cfg.with_point(point)
        if shared is None:
            fp = fit_pipeline(matrix, tr, cfg)
        else:
            rep, vals, med = shared
            model = _model_stage(matrix, tr, rep, vals[tr], med, cfg.hyper, cfg.selection.seed)
            fp = FittedPipeline(model, rep, med)
        pred = fp.predict_rows(matrix, [i])
        tr_pred = fp.predict_rows(matrix, tr)["label_hat"]
    except HFVoiceError as exc:
        raise FoldFailure(f"fold {i}: {exc.code}: {exc}", fold=i, cause=exc.code) from exc
    y = matrix.labels
    return FoldResult(i, i, matrix.patient_ids[i], int(y[i]), float(pred["z"][0]),
                      float(pred["p"][0]), int(pred["label_hat"][0]),
                      metrics_from_labels(y[tr], tr_pred), metrics_from_labels(y[[i]], pred["label_hat"]),
                      list(fp.report.selected), point, to_dict(fp.model))


def loocv(matrix: FeatureMatrix, cfg: PipelineConfig = PipelineConfig(), grid: dict | None = None,
          leaky: bool = False, jobs: int = 1, seed: int = 0) -> CvSummary:
    """Leave-one-out CV over the rows of ``matrix``.

    ``leaky=True`` reproduces the shortcut of imputing and selecting once on
    all rows and refitting only the classifier per fold; it is there for
    comparison and overstates accuracy.
    """
    n = matrix.shape[0]
    if n < 3 or len(np.unique(matrix.labels)) < 2:
        raise DegenerateSplit("LOOCV needs at least 3 rows covering both labels", n=n)
    shared = None
    if leaky:
        shared = _select_stage(matrix, np.arange(n), cfg.selection, cfg.passthrough)
        vals, med = impute(matrix.raw)
        shared = (shared[0], vals, med)
    jobs_args = [(matrix, i, cfg, grid, seed, shared) for i in range(n)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            folds = list(ex.map(_run_fold, jobs_args))
    else:
        folds = [_run_fold(a) for a in jobs_args]
    pooled = metrics_from_labels([f.label for f in folds], [f.label_hat for f in folds])
    conf = cfg.to_dict()
    conf["grid"] = grid
    return CvSummary(folds, average_metrics(f.train for f in folds),
                     average_metrics(f.test for f in folds), pooled, conf, leaky)


# -- statistics ---------------------------------------------------------------

def t_test(group_a, group_b) -> dict:
    """Welch two-sample t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateGroups("each group needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return {"t": 0.0, "dof": float(a.size + b.size - 2), "p_two_sided": 1.0}
        raise DegenerateGroups("both groups are constant with different means")
    t = float(diff / math.sqrt(se2))
    dof = float(se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1)))
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return {"t": t, "dof": dof, "p_two_sided": min(p, 1.0)}


def chi_square(table) -> dict:
    """Pearson chi-square on a 2x2 table, 1 dof, no continuity correction."""
    O = np.asarray(table, dtype=np.float64)
    if O.shape != (2, 2) or np.any(O < 0):
        raise DegenerateGroups("need a 2x2 table of non-negative counts")
    rows, cols = O.sum(axis=1), O.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise DegenerateGroups("every row and column margin must be positive")
    E = np.outer(rows, cols) / O.sum()
    chi2 = float(((O - E) ** 2 / E).sum())
    return {"chi2": chi2, "dof": 1, "p": float(gammaincc(0.5, chi2 / 2.0))}


def _fmt_p(p):
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def cohort_table(labels, predictors, continuous: dict | None = None,
                 categorical: dict | None = None) -> list[dict]:
    """Two-group summary rows: group sizes, each continuous variable as
    mean ± SD with a Welch p, each 0/1 categorical variable as count (%)
    with a chi-square p, and the acoustic predictor last."""
    y = np.asarray(labels, dtype=int)
    g0, g1 = y == 0, y == 1
    if not g0.any() or not g1.any():
        raise DegenerateGroups("both groups must be non-empty")
    n0, n1 = int(g0.sum()), int(g1.sum())
    rows = [{"variable": "N", "kind": "count", "class0": f"{n0} ({100 * n0 / len(y):.1f}%)",
             "class1": f"{n1} ({100 * n1 / len(y):.1f}%)", "p_value": "", "test": "",
             "mean0": "", "sd0": "", "mean1": "", "sd1": "", "p": ""}]
    for name, vals in (categorical or {}).items():
        v = np.asarray(vals, dtype=int)
        tab = [[int(((v == 1) & g0).sum()), int(((v == 0) & g0).sum())],
               [int(((v == 1) & g1).sum()), int(((v == 0) & g1).sum())]]
        res = chi_square(tab)
        rows.append({"variable": name, "kind": "categorical",
                     "class0": f"{tab[0][0]} ({100 * tab[0][0] / n0:.1f}%)",
                     "class1": f"{tab[1][0]} ({100 * tab[1][0] / n1:.1f}%)",
                     "p_value": _fmt_p(res["p"]), "test": "chi-square",
                     "mean0": "", "sd0": "", "mean1": "", "sd1": "", "p": res["p"]})
    items = list((continuous or {}).items()) + [("Acoustic Predictor", predictors)]
    for name, vals in items:
        v = np.asarray(vals, dtype=np.float64)
        a, b = v[g0], v[g1]
        a, b = a[np.isfinite(a)], b[np.isfinite(b)]
        res = t_test(a, b)
        m0, s0, m1, s1 = a.mean(), a.std(ddof=1), b.mean(), b.std(ddof=1)
        rows.append({"variable": name, "kind": "continuous",
                     "class0": f"{m0:.2f} ± {s0:.2f}", "class1": f"{m1:.2f} ± {s1:.2f}",
                     "p_value": _fmt_p(res["p_two_sided"]), "test": "welch-t",
                     "mean0": float(m0), "sd0": float(s0), "mean1": float(m1), "sd1": float(s1),
                     "p": res["p_two_sided"]})
    return rows


TABLE_COLUMNS = ("variable", "kind", "class0", "class1", "p_value", "test",
                 "mean0", "sd0", "mean1", "sd1", "p")


def table_to_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
