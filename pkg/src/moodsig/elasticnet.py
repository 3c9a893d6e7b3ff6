"""Elastic-net penalized logistic regression.

The fitted objective is::

    (1/n) sum_i log(1 + exp(-s_i (x_i . w + b)))
        + alpha * (mix * ||w||_1 + (1 - mix) / 2 * ||w||_2^2)

with ``s_i = 2 y_i - 1`` and an unpenalized intercept ``b``. It is minimized
by a proximal Newton method: each outer step builds the quadratic model of
the log-loss, solves the penalized model exactly with an active-set
(feature-sign) search, and accepts the step through an Armijo backtracking
search on the full objective, so the objective never increases.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .features import FEATURE_SCHEMA_VERSION
from .metrics import auc

LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
ALPHA_GRID = (0.001, 0.01, 0.1, 1.0)


class ConvergenceError(RuntimeError):
    """The optimizer could not make progress; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message} ({diagnostics})")
        self.diagnostics = diagnostics


# --------------------------------------------------------------------------
# standardization


@dataclass(frozen=True, eq=False)
class StandardizerState:
    means: np.ndarray
    scales: np.ndarray
    constant_columns: tuple[int, ...]
    n_rows: int

    @property
    def width(self) -> int:
        return len(self.means)


def standardize_fit(X) -> StandardizerState:
    """Column means and population SDs; zero-variance columns get scale 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("standardize_fit needs a non-empty 2-D matrix")
    means = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(means)))
    scales = sd.copy()
    scales[constant] = 1.0
    for a in (means, scales):
        a.setflags(write=False)
    return StandardizerState(means, scales, tuple(int(c) for c in constant), X.shape[0])


def standardize_apply(state: StandardizerState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != state.width:
        raise ValueError(f"expected {state.width} columns, got shape {X.shape}")
    return (X - state.means) / state.scales


# --------------------------------------------------------------------------
# objective pieces


def _check_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"X must be (n, p) and y (n,), got {X.shape} and {y.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    y = y.astype(np.float64)
    if y.min() == y.max():
        raise ValueError("labels contain a single class; logistic regression is undefined")
    return X, y


def _softplus_neg(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(-x)), overflow-free
    return np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _loss(eta: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
          sign: np.ndarray | None = None) -> float:
    # log(1 + exp(-s * eta)) with s = 2y - 1; weights (summing to 1) replace the mean
    terms = _softplus_neg((2.0 * y - 1.0 if sign is None else sign) * eta)
    return float(np.mean(terms) if weights is None else weights @ terms)


def objective(X, y, weights, intercept, mix: float, alpha: float) -> float:
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    eta = X @ w + intercept
    return _loss(eta, np.asarray(y, np.float64)) + alpha * (mix * np.abs(w).sum() + 0.5 * (1 - mix) * w @ w)


def smooth_gradient(X, y, weights, intercept, mix: float, alpha: float) -> tuple[np.ndarray, float]:
    """Gradient of the differentiable part (log-loss plus ridge term)."""
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    r = expit(X @ w + intercept) - np.asarray(y, np.float64)
    return X.T @ r / len(r) + alpha * (1 - mix) * w, float(r.mean())


def kkt_violation(grad_w: np.ndarray, grad_b: float, weights: np.ndarray, l1: float) -> float:
    """Largest subgradient-optimality violation over all coordinates."""
    nz = weights != 0
    viol = np.where(nz, np.abs(grad_w + l1 * np.sign(weights)), np.maximum(0.0, np.abs(grad_w) - l1))
    return float(max(viol.max(initial=0.0), abs(grad_b)))


# --------------------------------------------------------------------------
# solver


@dataclass(frozen=True, eq=False)
class ModelCoefficients:
    weights: np.ndarray
    intercept: float
    mix: float
    alpha: float
    n_iter: int
    objective: float
    kkt: float
    converged: bool
    history: tuple[float, ...] = field(repr=False, default=())

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.weights):
            raise ValueError(f"expected {len(self.weights)} features, got {X.shape[1]}")
        with np.errstate(over="ignore", invalid="ignore"):
            return X @ self.weights + self.intercept


def _inner_cd(H: np.ndarray, c: np.ndarray, z: np.ndarray, l1: float, tol: float,
              max_sweeps: int = 500) -> np.ndarray:
    """Cyclic coordinate descent on the penalized quadratic model (fallback)."""
    A = H.tolist()
    cl = c.tolist()
    zl = z.tolist()
    m = len(zl)
    diag = [max(A[j][j], 1e-300) for j in range(m)]
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(m):
            row = A[j]
            grad = cl[j]
            for i in range(m):
                if zl[i]:
                    grad += row[i] * zl[i]
            u = diag[j] * zl[j] - grad
            if j == m - 1:
                new = u / diag[j]
            else:
                new = (u - l1 if u > l1 else u + l1 if u < -l1 else 0.0) / diag[j]
            delta = new - zl[j]
            if delta:
                zl[j] = new
                biggest = max(biggest, abs(delta) * math.sqrt(diag[j]))
        if biggest < tol:
            break
    return np.array(zl)


def _solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        out = np.linalg.solve(A, rhs)
        if np.all(np.isfinite(out)):
            return out
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def _segment_min(H, c, z, S, target, l1, current):
    """Exact minimizer of the penalized quadratic on the segment from ``z`` to ``target``.

    Along the segment the objective is convex and piecewise quadratic, with
    breaks where a penalized coordinate changes sign, so the pieces are
    scanned in order until the derivative turns non-negative. Returns
    ``None`` if no point beats ``z``. A point that zeroes a coordinate also
    counts as progress when it is no worse than ``z`` up to rounding, since
    it shrinks the active set.
    """
    start = z[S]
    step = target - start
    pen = np.ones(len(S), dtype=bool)
    pen[-1] = False
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = np.where(pen & (step != 0.0), -start / step, np.nan)
    inside = tb[(tb > 0.0) & (tb < 1.0)]
    breaks = np.concatenate([[0.0], np.unique(inside), [1.0]]) if inside.size else np.array([0.0, 1.0])
    curv = float(step @ (H[np.ix_(S, S)] @ step))
    slope0 = float(step @ (H[S] @ z + c[S]))
    t = 1.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        sgn = np.sign(start + 0.5 * (lo + hi) * step) * pen
        # derivative on this piece: lin + curv * t
        lin = slope0 + l1 * float(sgn @ step)
        if lin + curv * hi >= 0.0:
            t = lo if lin + curv * lo >= 0.0 else -lin / curv
            break
    point = z.copy()
    point[S] = start + t * step
    hit = pen & (np.abs(tb - t) <= 1e-15)
    point[S[hit]] = 0.0
    val = 0.5 * point @ H @ point + c @ point + l1 * np.abs(point[:-1]).sum()
    if val < current or (hit.any() and val <= current + 1e-14 * max(1.0, abs(current))):
        return point
    return None


def _quad_lasso(H: np.ndarray, c: np.ndarray, z: np.ndarray, l1: float, tol: float) -> np.ndarray:
    """Minimize ``z'Hz/2 + c'z + l1 * ||z[:-1]||_1``; the last entry is unpenalized.

    Active-set (feature-sign) search: guess the signs of the non-zero
    coefficients, solve the resulting linear system exactly, and walk
    towards it stopping at sign changes. Each accepted move lowers the
    objective; if none does, coordinate descent takes over.
    """
    m = len(z)
    if l1 == 0.0:
        return _solve(H, -c)

    def q(v):
        return 0.5 * v @ H @ v + c @ v + l1 * np.abs(v[:-1]).sum()

    z = z.copy()
    theta = np.sign(z)
    theta[-1] = 0.0
    active = z != 0.0
    active[-1] = True
    current = q(z)
    for _ in range(20 * m + 50):
        g = H @ z + c
        if np.abs(g + l1 * theta)[active].max() <= tol:
            viol = np.where(active, -np.inf, np.abs(g) - l1)
            j = int(np.argmax(viol))
            if viol[j] <= tol:
                return z
            active[j] = True
            theta[j] = -np.sign(g[j])
        S = np.flatnonzero(active)
        target = _solve(H[np.ix_(S, S)], -(c[S] + l1 * theta[S]))
        best = _segment_min(H, c, z, S, target, l1, current)
        if best is None:
            break
        best_val = q(best)
        if best_val > current + 1e-14 * max(1.0, abs(current)):
            break
        z = best
        current = best_val
        zero = z == 0.0
        zero[-1] = False
        active &= ~zero
        theta = np.sign(z)
        theta[-1] = 0.0
    return _inner_cd(H, c, z, l1, tol)


def train_elastic_net(X, y, mix: float, alpha: float, tol: float = 1e-6, max_iter: int = 100,
                      init: tuple[np.ndarray, float] | None = None,
                      rel_tol: float = 1e-13, counts=None) -> ModelCoefficients:
    """Fit elastic-net logistic regression on a standardized matrix.

    Parameters
    ----------
    X : array, shape (n, p)
        Standardized features.
    y : array, shape (n,)
        0/1 labels; both classes must be present.
    mix : float
        L1 share of the penalty, in ``[0, 1]``.
    alpha : float
        Overall penalty strength, ``>= 0``.
    tol : float
        Stop once the KKT violation is at most ``tol``.
    max_iter : int
        Outer (Newton) iteration cap.
    init : (weights, intercept), optional
        Warm start. Defaults to zero weights and the log-odds of the base rate.
    rel_tol : float
        Also stop when an accepted step improves the objective by less than
        ``rel_tol`` relative (no further progress in floating point).
    counts : array, shape (n,), optional
        Multiplicity of each row. A row with count ``c`` contributes exactly
        as ``c`` identical rows would, so duplicated data can be collapsed
        with :func:`collapse_duplicates` without changing the objective.
    """
    X, y = _check_data(X, y)
    if counts is None:
        sw = None
    else:
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != y.shape or np.any(counts <= 0):
            raise ValueError("counts must be positive, one per row")
        sw = counts / counts.sum()
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must lie in [0, 1], got {mix}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    n, p = X.shape
    l1 = alpha * mix
    l2 = alpha * (1.0 - mix)
    if init is None:
        base = y.mean() if sw is None else float(sw @ y)
        w = np.zeros(p)
        b = math.log(base / (1.0 - base))
    else:
        w = np.array(init[0], dtype=np.float64)
        b = float(init[1])

    eta = X @ w + b

    sign = 2.0 * y - 1.0
    # the Hessian is accumulated in single precision from a transposed copy
    # with an intercept row; gradient, objective and stopping test stay exact
    XaT = np.empty((p + 1, n), dtype=np.float32)
    XaT[:p] = X.T
    XaT[p] = 1.0
    buf = np.empty_like(XaT)

    def full_objective(eta_, w_):
        return _loss(eta_, y, sw, sign) + l1 * np.abs(w_).sum() + 0.5 * l2 * (w_ @ w_)

    def gradient(r_):
        if sw is None:
            return X.T @ r_ / n + l2 * w, float(r_.mean())
        r_ = r_ * sw
        return X.T @ r_ + l2 * w, float(r_.sum())

    F = full_objective(eta, w)
    history = [F]
    converged = False
    kkt = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        prob = expit(eta)
        gw, gb = gradient(prob - y)
        kkt = kkt_violation(gw, gb, w, l1)
        if kkt <= tol:
            converged = True
            it -= 1
            break
        h = prob * (1.0 - prob)
        h *= (1.0 / n) if sw is None else sw
        np.multiply(XaT, np.sqrt(h).astype(np.float32), out=buf)
        H = (buf @ buf.T).astype(np.float64)
        H[np.diag_indices(p)] += l2
        H[p, p] = max(H[p, p], 1e-300)
        z0 = np.append(w, b)
        g = np.append(gw, gb)
        z = _quad_lasso(H, g - H @ z0, z0, l1, tol=0.1 * tol)
        dw = z[:p] - w
        db = float(z[p] - b)

        w_full = w + dw
        decrease = float(gw @ dw + gb * db + l1 * (np.abs(w_full).sum() - np.abs(w).sum()))
        if decrease >= 0.0:
            # no descent direction left at machine precision
            converged = kkt <= math.sqrt(tol)
            break
        xd = X @ dw + db
        t = 1.0
        while True:
            w_new = w + t * dw if t != 1.0 else w_full
            eta_new = eta + t * xd
            F_new = full_objective(eta_new, w_new)
            if F_new <= F + 1e-4 * t * decrease:
                break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("line search failed", {
                    "iteration": it, "objective": F, "kkt": kkt, "decrease": decrease})
        if F_new > F:
            raise ConvergenceError("objective increased", {"iteration": it, "objective": F, "new": F_new})
        improvement = F - F_new
        w, b, eta = w_new, b + t * db, eta_new
        F = F_new
        history.append(F)
        if improvement <= rel_tol * abs(F):
            kkt = kkt_violation(*gradient(expit(eta) - y), w, l1)
            converged = kkt <= math.sqrt(tol)
            break
    else:
        kkt = kkt_violation(*gradient(expit(eta) - y), w, l1)
        converged = kkt <= tol
    w.setflags(write=False)
    return ModelCoefficients(w, float(b), float(mix), float(alpha), it, F, kkt, converged, tuple(history))


def collapse_duplicates(X, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique ``(row, label)`` pairs with their counts, in sorted order."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    joint = np.column_stack([X, y.astype(np.float64)])
    uniq, counts = np.unique(joint, axis=0, return_counts=True)
    return np.ascontiguousarray(uniq[:, :-1]), uniq[:, -1].astype(y.dtype), counts


def predict_proba(model: ModelCoefficients, X) -> np.ndarray:
    """Logistic link ``sigmoid(Xw + b)``; saturates cleanly, never NaN."""
    return expit(model.decision_function(X))


# --------------------------------------------------------------------------
# fitted model (standardizer + coefficients) and its JSON form


@dataclass(frozen=True, eq=False)
class FittedModel:
    standardizer: StandardizerState
    coefficients: ModelCoefficients

    def predict_proba(self, X_raw) -> np.ndarray:
        return predict_proba(self.coefficients, standardize_apply(self.standardizer, X_raw))

    def to_json(self) -> str:
        c = self.coefficients
        return json.dumps({
            "weights": [float(v) for v in c.weights],
            "intercept": c.intercept,
            "lambda": c.mix,
            "alpha": c.alpha,
            "standardizer": {
                "means": [float(v) for v in self.standardizer.means],
                "scales": [float(v) for v in self.standardizer.scales],
            },
            "feature_schema_version": FEATURE_SCHEMA_VERSION,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        d = json.loads(text)
        if d.get("feature_schema_version") != FEATURE_SCHEMA_VERSION:
            raise ValueError(f"unsupported feature schema version {d.get('feature_schema_version')}")
        means = np.array(d["standardizer"]["means"], dtype=np.float64)
        scales = np.array(d["standardizer"]["scales"], dtype=np.float64)
        std = StandardizerState(means, scales, tuple(int(i) for i in np.flatnonzero(scales == 1.0)), 0)
        w = np.array(d["weights"], dtype=np.float64)
        coef = ModelCoefficients(w, float(d["intercept"]), float(d["lambda"]), float(d["alpha"]),
                                 0, math.nan, math.nan, True)
        return cls(std, coef)


def fit_model(X_raw, y, mix: float, alpha: float, tol: float = 1e-6, max_iter: int = 100) -> FittedModel:
    """Standardize on ``X_raw`` then fit; the state never sees other data."""
    state = standardize_fit(X_raw)
    Z = standardize_apply(state, X_raw)
    Zu, yu, cu = collapse_duplicates(Z, y)
    if len(cu) <= 0.8 * len(Z):
        coef = train_elastic_net(Zu, yu, mix, alpha, tol=tol, max_iter=max_iter, counts=cu)
    else:
        coef = train_elastic_net(Z, y, mix, alpha, tol=tol, max_iter=max_iter)
    return FittedModel(state, coef)


# --------------------------------------------------------------------------
# grouped, stratified cross-validation


def grouped_stratified_folds(groups, y, folds: int, seed: int) -> np.ndarray:
    """Fold id per row; every group lands in exactly one fold.

    Groups are shuffled by ``seed``, ordered by positive count (descending),
    and each is dealt to the fold with the fewest positives so far (ties:
    fewest rows, then lowest fold id).
    """
    groups = np.asarray(groups)
    y = np.asarray(y, dtype=bool)
    uniq, inverse = np.unique(groups, return_inverse=True)
    if len(uniq) < folds:
        raise ValueError(f"only {len(uniq)} patients for {folds}-fold CV; reduce the number of folds")
    pos = np.bincount(inverse, weights=y, minlength=len(uniq))
    size = np.bincount(inverse, minlength=len(uniq))
    order = np.random.default_rng(seed).permutation(len(uniq))
    order = order[np.argsort(-pos[order], kind="stable")]
    fold_pos = np.zeros(folds)
    fold_size = np.zeros(folds)
    assign = np.empty(len(uniq), dtype=int)
    for g in order:
        f = min(range(folds), key=lambda i: (fold_pos[i], fold_size[i], i))
        assign[g] = f
        fold_pos[f] += pos[g]
        fold_size[f] += size[g]
    return assign[inverse]


@dataclass(frozen=True, eq=False)
class CVResult:
    mix: float
    alpha: float
    lambda_grid: tuple[float, ...]
    alpha_grid: tuple[float, ...]
    fold_auc: np.ndarray         # (n_lambda, n_alpha, folds); NaN for one-class folds
    n_fits: int

    @property
    def mean_auc(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.fold_auc, axis=2)


def _pick(mean_auc: np.ndarray, lambda_grid, alpha_grid) -> tuple[int, int]:
    best = np.nanmax(mean_auc)
    candidates = [(lambda_grid[i], alpha_grid[j], i, j)
                  for i in range(len(lambda_grid)) for j in range(len(alpha_grid))
                  if not np.isnan(mean_auc[i, j]) and mean_auc[i, j] >= best - 1e-12]
    # ties go to the stronger penalty: larger mix, then larger alpha
    _, _, i, j = max(candidates)
    return i, j


def cv_select(X, y, groups, lambda_grid: Sequence[float] = LAMBDA_GRID,
              alpha_grid: Sequence[float] = ALPHA_GRID, folds: int = 10, seed: int = 0,
              tol: float = 1e-6, max_iter: int = 100) -> CVResult:
    """Pick ``(mix, alpha)`` maximizing mean validation AUC over grouped folds.

    ``X`` is the raw training matrix; each fold standardizes on its own
    training part only.
    """
    lambda_grid = tuple(float(v) for v in lambda_grid)
    alpha_grid = tuple(float(v) for v in alpha_grid)
    if not lambda_grid or not alpha_grid:
        raise ValueError("hyperparameter grids must be non-empty")
    if len(lambda_grid) == 1 and len(alpha_grid) == 1:
        return CVResult(lambda_grid[0], alpha_grid[0], lambda_grid, alpha_grid, np.zeros((1, 1, 0)), 0)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    fold_of = grouped_stratified_folds(groups, y, folds, seed)
    # collapse repeated rows when that shrinks the data materially
    collapse = len(collapse_duplicates(X, y)[2]) <= 0.8 * len(y)
    scores = np.full((len(lambda_grid), len(alpha_grid), folds), np.nan)
    alpha_desc = sorted(range(len(alpha_grid)), key=lambda j: -alpha_grid[j])
    n_fits = 0
    for f in range(folds):
        tr = fold_of != f
        va = ~tr
        y_tr, y_va = y[tr], y[va]
        if y_tr.min() == y_tr.max():
            continue
        state = standardize_fit(X[tr])
        Z_tr = standardize_apply(state, X[tr])
        Z_va = standardize_apply(state, X[va])
        score_fold = y_va.min() != y_va.max()
        counts = None
        if collapse:
            Z_tr, y_tr, counts = collapse_duplicates(Z_tr, y_tr)
        for i, mix in enumerate(lambda_grid):
            init = None
            for j in alpha_desc:
                coef = train_elastic_net(Z_tr, y_tr, mix, alpha_grid[j], tol=tol, max_iter=max_iter,
                                         init=init, counts=counts)
                n_fits += 1
                init = (coef.weights, coef.intercept)
                if score_fold:
                    scores[i, j, f] = auc(coef.decision_function(Z_va), y_va)
    if np.all(np.isnan(scores)):
        raise ValueError("no validation fold contained both classes")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(scores, axis=2)
    i, j = _pick(mean, lambda_grid, alpha_grid)
    return CVResult(lambda_grid[i], alpha_grid[j], lambda_grid, alpha_grid, scores, n_fits)
