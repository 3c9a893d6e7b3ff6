"""Independent reference computations used by the test-suite.

Nothing here imports from ``moodsig``: each oracle takes a different route
to the quantity it checks.
"""

import itertools

import numpy as np
from scipy.integrate import cumulative_simpson


def quadrature_signature(points, depth, nodes_per_segment=8):
    """Iterated integrals by nested composite-Simpson quadrature.

    Each word ``(i1, ..., ik)`` is evaluated as
    ``F_k(1)`` where ``F_0 = 1`` and ``F_j(t) = int_0^t F_{j-1}(s) dX^{i_j}(s)``,
    integrating numerically along every linear segment. Returned in
    level-major, lexicographic order.
    """
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    if len(points) == 1:
        return np.zeros(sum(d**k for k in range(1, depth + 1)))
    inc = np.diff(points, axis=0)
    n_seg = len(inc)
    m = nodes_per_segment
    dx = 1.0 / m

    def extend(prev, letter):
        out = np.empty_like(prev)
        start = 0.0
        for s in range(n_seg):
            cum = cumulative_simpson(prev[s] * inc[s, letter], dx=dx, initial=0.0)
            out[s] = start + cum
            start = out[s, -1]
        return out

    values = []
    level = {(): np.ones((n_seg, m + 1))}
    for _ in range(depth):
        nxt = {}
        for word in sorted(level):
            for letter in range(d):
                nxt[word + (letter,)] = extend(level[word], letter)
        for word in sorted(nxt):
            values.append(nxt[word][-1, -1])
        level = nxt
    return np.array(values)


def irls_logistic(X, y, max_iter=100, tol=1e-13):
    """Unpenalized logistic regression with intercept by Newton-Raphson/IRLS."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    A = np.column_stack([X, np.ones(len(X))])
    beta = np.zeros(A.shape[1])
    for _ in range(max_iter):
        eta = A @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = p * (1 - p)
        z = eta + (y - p) / w
        new = np.linalg.solve(A.T @ (A * w[:, None]), A.T @ (w * z))
        if np.max(np.abs(new - beta)) < tol:
            beta = new
            break
        beta = new
    return beta[:-1], beta[-1]


def pairwise_auc(scores, labels):
    """Mann-Whitney AUC by enumerating every positive/negative pair."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def trapezoid_auc(scores, labels):
    """Area under the empirical ROC curve by the trapezoid rule."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels, bool)
    thresholds = np.unique(scores)[::-1]
    n_pos = labels.sum()
    n_neg = (~labels).sum()
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        pred = scores >= t
        tpr.append((pred & labels).sum() / n_pos)
        fpr.append((pred & ~labels).sum() / n_neg)
    tpr = np.array(tpr)
    fpr = np.array(fpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def sigmoid_reference(z):
    z = np.asarray(z, float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
