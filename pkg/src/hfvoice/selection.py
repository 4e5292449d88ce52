"""Two-stage feature selection.

Stage 1 keeps features whose mutual information with the label exceeds a
threshold both on the full training set and on average over random
subsamples.  Stage 2 recursively drops the feature with the smallest
|coefficient| in an L1-penalized logistic fit until ``target_k`` remain.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma

from .errors import DegenerateInput, NonConvergence, TooFewSurvivors
from .model import prox_cd_l1, standardize_apply, standardize_fit

MI_NEIGHBORS = 3
JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class SelectionConfig:
    mi_threshold: float = 0.105
    n_subsets: int = 15
    subset_fraction: float = 0.8
    lasso_strength: float = 1.2  # inverse regularization strength of the L1 fit
    target_k: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must lie in (0, 1]")
        if self.target_k < 1 or self.n_subsets < 1:
            raise ValueError("target_k and n_subsets must be >= 1")
        if not self.lasso_strength > 0:
            raise ValueError("lasso_strength must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown selection keys: {sorted(unknown)}")
        return cls(**d)


def _check_labels(y):
    y = np.asarray(y)
    if y.ndim != 1 or not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be a 1-D 0/1 vector")
    if len(np.unique(y)) < 2:
        raise DegenerateInput("mutual information needs both labels present")
    return y.astype(int)


def mi_scores(X, y, seed: int = 0, k: int = MI_NEIGHBORS) -> np.ndarray:
    """Continuous-feature / binary-label MI (nats) for every column of X.

    Nearest-neighbour estimator: for sample i, d_i is the distance to its
    k-th nearest neighbour within its own class (k capped at class size -
    1), m_i the number of samples of either class strictly closer than d_i
    (i included), and

        MI = psi(N) + <psi(k_i)> - <psi(N_c(i))> - <psi(m_i)>.

    Columns are scaled to unit std and given N(0, 1e-10) jitter from a
    generator seeded with ``seed`` to break exact ties.  Constant columns
    score 0 and negative estimates are clipped to 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = _check_labels(y)
    n, p = X.shape
    if n < 4:
        raise DegenerateInput(f"need at least 4 samples, got {n}")
    if len(y) != n:
        raise ValueError("X and y differ in length")
    sd = X.std(axis=0)
    const = sd <= 1e-12 * np.maximum(np.abs(X.mean(axis=0)), 1.0)
    Z = (X - X.mean(axis=0)) / np.where(const, 1.0, sd)
    Z = Z + JITTER_SCALE * np.random.default_rng(seed).standard_normal(Z.shape)

    counts = np.bincount(y, minlength=2)[y]
    # samples alone in their class carry no neighbour information
    keep = counts > 1
    Z, yk, counts = Z[keep], y[keep], counts[keep]
    nk = len(yk)
    kk = np.minimum(k, counts - 1)
    D = np.abs(Z[:, None, :] - Z[None, :, :])  # (n, n, p)
    same = yk[:, None] == yk[None, :]
    np.fill_diagonal(same, False)
    Ds = np.where(same[:, :, None], D, np.inf)
    Ds.sort(axis=1)
    radius = np.take_along_axis(Ds, (kk - 1)[:, None, None], axis=1)[:, 0, :]  # (n, p)
    m = (D < radius[:, None, :]).sum(axis=1)  # includes i itself (distance 0)
    # averages over sorted terms do not depend on the row order
    mi = (digamma(nk) + digamma(np.sort(kk)).mean() - digamma(np.sort(counts)).mean()
          - digamma(np.sort(m, axis=0)).mean(axis=0))
    mi = np.maximum(mi, 0.0)
    mi[const] = 0.0
    return mi


def mi_score(column, labels, seed: int = 0) -> float:
    return float(mi_scores(np.asarray(column, dtype=np.float64)[:, None], labels, seed)[0])


def subset_rows(n: int, cfg: SelectionConfig) -> list[np.ndarray]:
    """Row sets of the stage-1 subsamples; a pure function of (n, cfg)."""
    size = int(math.floor(cfg.subset_fraction * n))
    rng = np.random.default_rng(cfg.seed)
    return [np.sort(rng.permutation(n)[:size]) for _ in range(cfg.n_subsets)]


@dataclass
class StabilityResult:
    survivors: list
    mi_full: dict
    mi_subset_avg: dict
    empty: bool = False  # warning flag: nothing passed the threshold


def stability_filter(X, y, names, cfg: SelectionConfig) -> StabilityResult:
    """Keep names whose full-data MI and subsample-mean MI both exceed the
    threshold (strictly)."""
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    n = len(y)
    if n < math.ceil(1.0 / cfg.subset_fraction):
        raise DegenerateInput("too few rows for the subsample fraction")
    full = mi_scores(X, y, cfg.seed)
    subs = []
    for i, rows in enumerate(subset_rows(n, cfg)):
        if len(np.unique(y[rows])) < 2:
            # a single-class subsample has no information about the label
            subs.append(np.zeros(X.shape[1]))
            continue
        subs.append(mi_scores(X[rows], y[rows], cfg.seed + 1 + i))
    avg = np.mean(subs, axis=0)
    t = cfg.mi_threshold
    surv = [nm for nm, a, b in zip(names, full, avg) if a > t and b > t]
    return StabilityResult(surv, dict(zip(names, full.tolist())), dict(zip(names, avg.tolist())),
                           empty=not surv)


def _l1_fit(Z, y, strength, tol, max_sweeps, init=None):
    res = prox_cd_l1(Z, np.asarray(y, dtype=np.float64), strength, tol, max_sweeps, init=init)
    if not res.converged:
        raise NonConvergence(f"L1 fit did not reach tolerance {tol}", gap=res.residual)
    return res


def l1_importance(X, y, names, strength: float = 1.2, tol: float = 1e-6,
                  max_sweeps: int = 10000) -> dict:
    """|coefficient| of each column in an L1 logistic fit on standardized X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] < 1:
        raise TooFewSurvivors("l1_importance needs at least one feature")
    sc = standardize_fit(X)
    Z = standardize_apply(sc, X)
    active = ~sc.frozen
    coef = np.zeros(X.shape[1])
    coef[active] = _l1_fit(Z[:, active], y, strength, tol, max_sweeps).theta
    return dict(zip(names, np.abs(coef).tolist()))


@dataclass
class SelectionReport:
    mi_full: dict
    mi_subset_avg: dict
    stage1_survivors: list
    rfe_elimination_order: list
    selected: list
    config: dict
    seed: int
    passthrough: list = field(default_factory=list)
    empty_stage1: bool = False
    backfilled: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SelectionReport":
        return cls(**json.loads(text))


def rfe(X, y, names, cfg: SelectionConfig, order=None) -> tuple[list, list]:
    """Recursive elimination to cfg.target_k features, one per refit.

    Ties on importance remove the name that comes later in ``order``
    (default: the given name order).  Returns (selected, elimination order).
    """
    names = list(names)
    if len(names) < cfg.target_k:
        raise TooFewSurvivors(f"{len(names)} features for target {cfg.target_k}",
                              n=len(names), target_k=cfg.target_k)
    rank = {nm: i for i, nm in enumerate(order if order is not None else names)}
    sc = standardize_fit(np.asarray(X, dtype=np.float64))
    # standardization is per column, so one pass serves every refit;
    # constant columns keep importance 0
    Z = standardize_apply(sc, X)
    current = list(range(len(names)))
    eliminated = []
    b, coef = None, np.zeros(len(names))
    while len(current) > cfg.target_k:
        live = [j for j in current if not sc.frozen[j]]
        if live:
            # warm start from the previous fit without the removed feature
            init = None if b is None else (b, coef[live])
            res = _l1_fit(Z[:, live], y, cfg.lasso_strength, 1e-6, 10000, init)
            b = res.theta0
            coef[live] = res.theta
        imp = {j: abs(coef[j]) for j in current}
        worst = min(current, key=lambda j: (imp[j], -rank[names[j]]))
        current.remove(worst)
        coef[worst] = 0.0
        eliminated.append(names[worst])
    current = [names[j] for j in current]
    return current, eliminated


def select(X, y, names, cfg: SelectionConfig = SelectionConfig(), passthrough=()) -> SelectionReport:
    """Run both stages on the training rows.

    ``passthrough`` names (e.g. clinical variables) skip stage 1 and RFE and
    are appended to the selection.  When fewer than target_k features pass
    stage 1, the highest-scoring remaining features (by full-data MI, then
    name order) fill the gap so RFE always has target_k inputs.
    """
    names = list(names)
    X = np.asarray(X, dtype=np.float64)
    passthrough = [p for p in passthrough if p in names]
    cand = [nm for nm in names if nm not in passthrough]
    idx = [names.index(nm) for nm in cand]
    st = stability_filter(X[:, idx], y, cand, cfg)
    survivors = list(st.survivors)
    backfilled = []
    if len(survivors) < cfg.target_k:
        rest = sorted((nm for nm in cand if nm not in survivors),
                      key=lambda nm: (-st.mi_full[nm], cand.index(nm)))
        backfilled = rest[:cfg.target_k - len(survivors)]
        pool = [nm for nm in cand if nm in survivors or nm in backfilled]
    else:
        pool = survivors
    sub = X[:, [names.index(nm) for nm in pool]]
    selected, order = rfe(sub, y, pool, cfg, order=cand)
    return SelectionReport(st.mi_full, st.mi_subset_avg, survivors, order,
                           selected + passthrough, asdict(cfg), cfg.seed,
                           passthrough, st.empty, backfilled)
