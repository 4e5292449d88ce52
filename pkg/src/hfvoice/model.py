"""Binary logistic regression on standardized features.

The objective is

    J(theta) = R(theta) + C * sum_i l_i,
    l_i = -[y_i log p_i + (1 - y_i) log(1 - p_i)],  p_i = sigmoid(theta0 + x_i . theta)

with R = 0.5 ||theta||^2 (L2) or ||theta||_1 (L1) and the intercept left
unpenalized, so C is an inverse regularization strength.  L2 is solved by
damped Newton with Armijo backtracking, L1 by proximal coordinate descent on
successive quadratic models of the data term.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptModel,
    DimensionMismatch,
    NonConvergence,
    SingleClass,
    UnknownFeature,
    VersionMismatch,
)

SCHEMA_VERSION = 1
EXP_CLAMP = 500.0
_P_MAX = float(np.nextafter(1.0, 0.0))
_ARMIJO = 1e-4


def sigmoid(z):
    """Logistic function with the exponent clamped to +/-500.

    The result is clipped just below 1 so probabilities stay strictly
    inside (0, 1); exp(-500) keeps the lower side positive on its own.
    """
    z = np.clip(np.asarray(z, dtype=np.float64), -EXP_CLAMP, EXP_CLAMP)
    p = 1.0 / (1.0 + np.exp(-z))
    p = np.minimum(p, _P_MAX)
    return float(p) if p.ndim == 0 else p


# -- standardization ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scaler:
    means: np.ndarray
    stds: np.ndarray  # 1.0 where frozen
    frozen: np.ndarray  # zero training std

    def __len__(self):
        return len(self.means)


def standardize_fit(rows) -> Scaler:
    """Per-column mean and population std.  Zero-std columns are frozen."""
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least two rows")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    # std of a constant column can come out as a few ulps
    frozen = sd <= 1e-12 * np.maximum(np.abs(mu), 1.0)
    return Scaler(mu, np.where(frozen, 1.0, sd), frozen)


def standardize_apply(scaler: Scaler, rows) -> np.ndarray:
    X = np.asarray(rows, dtype=np.float64)
    if X.shape[-1] != len(scaler):
        raise DimensionMismatch(f"expected {len(scaler)} columns, got {X.shape[-1]}",
                                expected=len(scaler), got=int(X.shape[-1]))
    Z = (X - scaler.means) / scaler.stds
    return np.where(scaler.frozen, 0.0, Z)


# -- model --------------------------------------------------------------------

@dataclass(frozen=True)
class Hyper:
    C: float = 0.2
    penalty: str = "L2"
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self):
        if self.penalty not in ("L1", "L2"):
            raise ValueError(f"penalty must be 'L1' or 'L2', got {self.penalty!r}")
        if not self.C > 0:
            raise ValueError("C must be > 0")

    def to_dict(self):
        return {"C": self.C, "penalty": self.penalty, "tol": self.tol, "max_iter": self.max_iter}


@dataclass(eq=False)
class LogisticModel:
    theta0: float
    theta: np.ndarray
    feature_names: list
    scaler: Scaler
    hyper: Hyper = Hyper()
    decision_threshold: float = 0.5
    train_meta: dict = field(default_factory=dict)
    # column medians for filling missing values at predict time
    imputation: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.feature_names = list(self.feature_names)
        if not (len(self.theta) == len(self.feature_names) == len(self.scaler)):
            raise DimensionMismatch("theta, feature_names and scaler differ in length")

    def _rows(self, raw):
        X = np.asarray(raw, dtype=np.float64)
        if X.shape[-1] != len(self.theta):
            raise DimensionMismatch(f"expected {len(self.theta)} features, got {X.shape[-1]}",
                                    expected=len(self.theta), got=int(X.shape[-1]))
        if self.imputation is not None and np.isnan(X).any():
            X = np.where(np.isnan(X), self.imputation, X)
        return X

    def align(self, names, raw) -> np.ndarray:
        """Reorder columns of ``raw`` (labelled by ``names``) to this model."""
        names = list(names)
        try:
            idx = [names.index(n) for n in self.feature_names]
        except ValueError:
            missing = [n for n in self.feature_names if n not in names]
            raise UnknownFeature(f"missing model features: {missing}", feature=missing[0]) from None
        return np.asarray(raw, dtype=np.float64)[..., idx]

    def acoustic_predictor(self, raw):
        """z = theta0 + theta . standardized(raw); scalar for one row."""
        z = self.theta0 + standardize_apply(self.scaler, self._rows(raw)) @ self.theta
        return float(z) if np.ndim(z) == 0 else z

    def predict_proba(self, raw):
        return sigmoid(self.acoustic_predictor(raw))

    def classify(self, raw):
        p = np.asarray(self.predict_proba(raw))
        lab = (p >= self.decision_threshold).astype(int)
        return int(lab) if lab.ndim == 0 else lab


def acoustic_predictor(model: LogisticModel, raw_row):
    return model.acoustic_predictor(raw_row)


def predict_proba(model: LogisticModel, raw_row):
    return model.predict_proba(raw_row)


def classify(model: LogisticModel, raw_row):
    return model.classify(raw_row)


# -- objective ----------------------------------------------------------------

def _data_term(z, y):
    # sum of -[y log p + (1-y) log(1-p)] = sum log(1 + e^z) - y z
    return float(np.sum(np.logaddexp(0.0, z) - y * z))


def objective(theta0, theta, X, y, C, penalty="L2") -> float:
    theta = np.asarray(theta, dtype=np.float64)
    z = theta0 + X @ theta
    reg = 0.5 * float(theta @ theta) if penalty == "L2" else float(np.abs(theta).sum())
    return reg + C * _data_term(z, y)


def loss_and_gradient(model_or_params, X, y, C=None, penalty=None):
    """Objective J and its gradient w.r.t. (theta0, theta).

    ``model_or_params`` is a LogisticModel or a (theta0, theta) pair; C and
    penalty default to the model's.  For L1 the returned gradient is the
    proximal residual: the minimum-norm subgradient of J, which is zero
    exactly at the optimum.
    """
    if isinstance(model_or_params, LogisticModel):
        theta0, theta = model_or_params.theta0, model_or_params.theta
        C = model_or_params.hyper.C if C is None else C
        penalty = model_or_params.hyper.penalty if penalty is None else penalty
    else:
        theta0, theta = model_or_params
    C = 1.0 if C is None else C
    penalty = penalty or "L2"
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if X.shape != (len(y), len(theta)):
        raise DimensionMismatch(f"X is {X.shape}, expected ({len(y)}, {len(theta)})")
    z = theta0 + X @ theta
    r = C * (sigmoid(z) - y)
    g0 = float(r.sum())
    gd = X.T @ r
    J = objective(theta0, theta, X, y, C, penalty)
    if penalty == "L2":
        return J, np.concatenate([[g0], gd + theta])
    return J, np.concatenate([[g0], _l1_residual(theta, gd)])


def _l1_residual(w, gd):
    s = np.where(w > 0, gd + 1.0, np.where(w < 0, gd - 1.0, 0.0))
    at0 = np.sign(gd) * np.maximum(np.abs(gd) - 1.0, 0.0)
    return np.where(w != 0, s, at0)


# -- solvers ------------------------------------------------------------------

@dataclass
class FitResult:
    theta0: float
    theta: np.ndarray
    converged: bool
    n_iter: int
    trace: list  # objective after each iteration, starting from the initial point
    residual: float


def _check_labels(y):
    y = np.asarray(y)
    if y.ndim != 1 or not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be a 1-D 0/1 vector")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes must be present to fit")
    return y.astype(np.float64)


def newton_l2(X, y, C, tol=1e-8, max_iter=1000, init=None) -> FitResult:
    """Damped Newton on 0.5||theta||^2 + C * sum l_i to gradient norm ``tol``."""
    n, d = X.shape
    A = np.column_stack([np.ones(n), X])
    beta = np.zeros(d + 1) if init is None else np.array(init, dtype=np.float64)
    reg = np.ones(d + 1)
    reg[0] = 0.0

    def f(b):
        return 0.5 * float(b[1:] @ b[1:]) + C * _data_term(A @ b, y)

    J = f(beta)
    trace = [J]
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        p = sigmoid(A @ beta)
        g = C * (A.T @ (p - y)) + reg * beta
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return FitResult(beta[0], beta[1:], True, it - 1, trace, gnorm)
        w = C * p * (1.0 - p)
        H = (A.T * w) @ A + np.diag(reg)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ step)
        if slope >= 0:  # numerically flat; fall back to steepest descent
            step, slope = -g, -float(g @ g)
        if -slope <= 1e3 * np.finfo(float).eps * max(1.0, abs(J)):
            # the predicted decrease -slope/2 is below the rounding of J, so a
            # line search cannot tell steps apart; take the full Newton step
            # if it shrinks the gradient and keep the recorded J non-increasing
            cand = beta + step
            gc = C * (A.T @ (sigmoid(A @ cand) - y)) + reg * cand
            if np.linalg.norm(gc) >= gnorm:
                break
            beta, J = cand, min(J, f(cand))
            trace.append(J)
            continue
        alpha = 1.0
        while True:
            cand = beta + alpha * step
            Jc = f(cand)
            if Jc <= J + _ARMIJO * alpha * slope or alpha < 1e-12:
                break
            alpha *= 0.5
        if Jc > J:  # no decrease possible at machine precision
            break
        beta, J = cand, Jc
        trace.append(J)
    p = sigmoid(A @ beta)
    gnorm = float(np.linalg.norm(C * (A.T @ (p - y)) + reg * beta))
    return FitResult(beta[0], beta[1:], gnorm <= tol, len(trace) - 1, trace, gnorm)


def prox_cd_l1(X, y, C, tol=1e-6, max_sweeps=10000, inner_sweeps=50, init=None) -> FitResult:
    """Proximal coordinate descent for ||theta||_1 + C * sum l_i.

    Each outer step builds the quadratic model of the data term at the
    current point, minimizes model + L1 by cyclic coordinate descent
    (soft-thresholding, intercept unpenalized) and backtracks along the
    resulting direction.  Coordinate sweeps run over an active set (nonzero
    weights plus coordinates violating the zero-subgradient condition),
    which is re-checked against all coordinates before the inner problem
    is declared solved, so the result equals full cyclic descent.  Stops
    when the largest accepted coordinate step is below ``tol``;
    ``max_sweeps`` bounds the total number of inner sweeps.  ``init`` is an
    optional warm start (theta0, theta).
    """
    n, d = X.shape
    Xt = np.ascontiguousarray(X.T)
    if init is None:
        # start the intercept at the log-odds of the class balance
        ybar = float(y.mean())
        b, w = math.log(ybar / (1.0 - ybar)), np.zeros(d)
    else:
        b, w = float(init[0]), np.array(init[1], dtype=np.float64)
    sq = (Xt * Xt)
    F = objective(b, w, X, y, C, "L1")
    trace = [F]
    sweeps = 0
    step_size = np.inf
    while sweeps < max_sweeps:
        p = sigmoid(b + X @ w)
        g = C * (p - y)
        h = np.maximum(C * p * (1.0 - p), 1e-12)
        a = sq @ h
        gx = Xt @ g
        hsum = float(h.sum())
        gsum = float(g.sum())
        db = 0.0
        u = w.copy()  # w + dw
        r = np.zeros(n)  # X~ (db, dw)
        active = np.nonzero((u != 0) | (np.abs(gx) > 1.0))[0]
        while True:
            for _ in range(inner_sweeps):
                sweeps += 1
                delta = -(gsum + float(h @ r)) / hsum
                db += delta
                r += delta
                biggest = abs(delta)
                for j in active:
                    aj = a[j]
                    if aj <= 0.0:
                        continue
                    xj = Xt[j]
                    z = u[j] - (gx[j] + float((h * r) @ xj)) / aj
                    t = 1.0 / aj
                    un = z - t if z > t else (z + t if z < -t else 0.0)
                    delta = un - u[j]
                    if delta != 0.0:
                        u[j] = un
                        r += delta * xj
                        if abs(delta) > biggest:
                            biggest = abs(delta)
                if biggest <= 0.1 * tol or sweeps >= max_sweeps:
                    break
            grad = gx + Xt @ (h * r)
            viol = np.nonzero((u == 0) & (np.abs(grad) > 1.0) & (a > 0))[0]
            viol = np.setdiff1d(viol, active)
            if viol.size == 0 or sweeps >= max_sweeps:
                break
            active = np.union1d(active, viol)
        dw = u - w
        # sufficient decrease along (db, dw)
        decrease = gsum * db + float(gx @ dw) + float(np.abs(u).sum()) - float(np.abs(w).sum())
        alpha = 1.0
        while True:
            bc, wc = b + alpha * db, w + alpha * dw
            Fc = objective(bc, wc, X, y, C, "L1")
            if Fc <= F + _ARMIJO * alpha * decrease or alpha < 1e-12:
                break
            alpha *= 0.5
        if Fc > F:
            Fc, bc, wc = F, b, w
        step_size = alpha * max(abs(db), float(np.abs(dw).max()) if d else 0.0)
        b, w, F = bc, wc, Fc
        trace.append(F)
        if step_size <= tol:
            break
    resid = loss_and_gradient((b, w), X, y, C, "L1")[1]
    return FitResult(b, w, step_size <= tol, len(trace) - 1, trace, float(np.abs(resid).max()))


def fit(X, y, hyper: Hyper = Hyper(), feature_names=None, scaler: Scaler | None = None,
        init=None, seed=None) -> LogisticModel:
    """Fit on already standardized ``X``.

    Columns frozen in ``scaler`` (or constant in ``X``) keep weight 0.  A
    fit that misses the tolerance is returned with train_meta["converged"]
    false and a NonConvergence warning.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    yv = _check_labels(y)
    if X.shape[0] != len(yv):
        raise DimensionMismatch(f"{X.shape[0]} rows but {len(yv)} labels")
    d = X.shape[1]
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(d)]
    if scaler is None:
        scaler = Scaler(np.zeros(d), np.ones(d), np.zeros(d, dtype=bool))
    active = ~scaler.frozen & (np.ptp(X, axis=0) > 0) if X.shape[0] else ~scaler.frozen
    Xa = X[:, active]
    if hyper.penalty == "L2":
        start = None
        if init is not None:
            init = np.asarray(init, dtype=np.float64)
            start = np.concatenate([[init[0]], init[1:][active]])
        res = newton_l2(Xa, yv, hyper.C, hyper.tol, hyper.max_iter, start)
    else:
        res = prox_cd_l1(Xa, yv, hyper.C, hyper.tol, max_sweeps=max(hyper.max_iter, 10000))
    theta = np.zeros(d)
    theta[active] = res.theta
    if not res.converged:
        warnings.warn(str(NonConvergence(f"{hyper.penalty} fit stopped with residual {res.residual:.3g}")),
                      RuntimeWarning, stacklevel=2)
    meta = {"n_train": int(X.shape[0]), "seed": seed, "converged": bool(res.converged),
            "final_objective": float(res.trace[-1]), "n_iter": int(res.n_iter),
            "objective_trace": [float(v) for v in res.trace]}
    return LogisticModel(float(res.theta0), theta, names, scaler, hyper, 0.5, meta)


def train(raw_X, y, feature_names, hyper: Hyper = Hyper(), imputation=None, seed=None) -> LogisticModel:
    """standardize_fit on the training rows, then fit."""
    raw_X = np.asarray(raw_X, dtype=np.float64)
    scaler = standardize_fit(raw_X)
    m = fit(standardize_apply(scaler, raw_X), y, hyper, feature_names, scaler, seed=seed)
    if imputation is not None:
        m.imputation = np.asarray(imputation, dtype=np.float64)
    return m


# -- interpretation -----------------------------------------------------------

def odds_ratio_report(model: LogisticModel, feature_name: str) -> dict:
    """Odds multiplier per one training std of ``feature_name``."""
    try:
        j = model.feature_names.index(feature_name)
    except ValueError:
        raise UnknownFeature(f"{feature_name!r} is not a model feature", feature=feature_name) from None
    coef = float(model.theta[j])
    odds = math.exp(coef)
    delta = float(model.scaler.stds[j]) if not model.scaler.frozen[j] else 0.0
    return {
        "feature": feature_name,
        "coef_scaled": coef,
        "odds_ratio_scaled": odds,
        "original_unit_delta_for_or": delta,
        "statement": f"per {delta:g}-unit increase, odds ×{odds:.3f}",
    }


# -- persistence --------------------------------------------------------------

def to_dict(model: LogisticModel) -> dict:
    meta = {k: v for k, v in model.train_meta.items() if k != "objective_trace"}
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_names": model.feature_names,
        "theta0": model.theta0,
        "theta": model.theta.tolist(),
        "scaler": {"means": model.scaler.means.tolist(), "stds": model.scaler.stds.tolist(),
                   "frozen": model.scaler.frozen.tolist()},
        "hyper": model.hyper.to_dict(),
        "decision_threshold": model.decision_threshold,
        "train_meta": meta,
        "imputation": None if model.imputation is None else model.imputation.tolist(),
    }


def from_dict(d: dict) -> LogisticModel:
    if not isinstance(d, dict) or "schema_version" not in d:
        raise CorruptModel("model file lacks schema_version")
    if d["schema_version"] != SCHEMA_VERSION:
        raise VersionMismatch(f"model schema {d['schema_version']} (supported: {SCHEMA_VERSION})",
                              found=d["schema_version"], supported=SCHEMA_VERSION)
    try:
        sc = d["scaler"]
        scaler = Scaler(np.array(sc["means"], dtype=np.float64), np.array(sc["stds"], dtype=np.float64),
                        np.array(sc["frozen"], dtype=bool))
        imp = d.get("imputation")
        m = LogisticModel(float(d["theta0"]), np.array(d["theta"], dtype=np.float64),
                          list(d["feature_names"]), scaler, Hyper(**d["hyper"]),
                          float(d["decision_threshold"]), dict(d.get("train_meta", {})),
                          None if imp is None else np.array(imp, dtype=np.float64))
    except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
        raise CorruptModel(f"malformed model: {exc}") from None
    if not (np.all(np.isfinite(m.theta)) and math.isfinite(m.theta0)):
        raise CorruptModel("non-finite weights")
    return m


def save(model: LogisticModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(path) -> LogisticModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path}: not valid JSON ({exc.msg})") from None
    except UnicodeDecodeError:
        raise CorruptModel(f"{path}: not a text file") from None
    return from_dict(d)
