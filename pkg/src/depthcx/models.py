"""Linear (logistic) and non-linear (CART) evaluators, AUC-ROC and CV fitness.

The hot paths are numba kernels: a GA run issues thousands of 5-fold CV
evaluations, each of which fits and scores a model on a few hundred rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numba import njit

from .dataset import Dataset, Partition, stratified_kfold

EvaluatorKind = Literal["linear", "nonlinear"]

# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


@njit(cache=True)
def _auc_kernel(scores, labels):
    m = scores.shape[0]
    order = np.argsort(scores, kind="mergesort")
    npos = 0
    for i in range(m):
        if labels[i] == 1:
            npos += 1
    nneg = m - npos
    if npos == 0 or nneg == 0:
        return -1.0
    rank_sum = 0.0
    i = 0
    while i < m:
        j = i
        while j + 1 < m and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        # ranks i+1..j+1 share their average
        avg = 0.5 * (i + j + 2)
        for t in range(i, j + 1):
            if labels[order[t]] == 1:
                rank_sum += avg
        i = j + 1
    u = rank_sum - 0.5 * npos * (npos + 1)
    return u / (npos * nneg)


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the Mann-Whitney rank-sum statistic.

    Tied scores get average ranks, which half-credits tied positive/negative
    pairs. O(m log m).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int8)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if np.any(np.isnan(s)):
        raise ValueError("scores contain NaN")
    a = _auc_kernel(s, y)
    if a < 0:
        raise ValueError("auc_roc needs both classes present")
    return float(a)


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------


@njit(cache=True)
def _grow_tree(codes, values, ncodes, y, cols, rows_in, max_depth, min_split):
    m = rows_in.shape[0]
    p = cols.shape[0]
    cap = 2 * m + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    frac = np.zeros(cap, np.float64)
    count = np.zeros(cap, np.int64)

    rows = rows_in.copy()
    vmax = values.shape[1]
    hist_n = np.zeros(vmax, np.int64)
    hist_p = np.zeros(vmax, np.int64)
    buf = np.empty(m, np.int64)

    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_depth[sp]
        n = hi - lo
        npos = 0
        for t in range(lo, hi):
            npos += y[rows[t]]
        count[node] = n
        frac[node] = npos / n
        if npos == 0 or npos == n or n < min_split or (max_depth >= 0 and depth >= max_depth):
            continue

        best = -1.0
        best_f = -1
        best_code = -1
        best_thr = 0.0
        for jf in range(p):
            col = cols[jf]
            nv = ncodes[col]
            use_sort = 4 * n < nv
            if use_sort:
                for t in range(lo, hi):
                    buf[t - lo] = codes[rows[t], col]
                sb = np.sort(buf[:n])
                # histogram over touched codes only; sorted buffer gives the walk order
                for t in range(lo, hi):
                    c = codes[rows[t], col]
                    hist_n[c] += 1
                    hist_p[c] += y[rows[t]]
                nl = 0
                pl = 0
                t = 0
                prev = -1
                while t < n:
                    c = sb[t]
                    while t < n and sb[t] == c:
                        t += 1
                    if prev >= 0:
                        nr = n - nl
                        pr = npos - pl
                        proxy = (pl * pl + (nl - pl) * (nl - pl)) / nl + (pr * pr + (nr - pr) * (nr - pr)) / nr
                        if proxy > best * (1.0 + 1e-12):
                            best = proxy
                            best_f = jf
                            best_code = prev
                            best_thr = 0.5 * (values[col, prev] + values[col, c])
                    nl += hist_n[c]
                    pl += hist_p[c]
                    prev = c
                for t in range(lo, hi):
                    c = codes[rows[t], col]
                    hist_n[c] = 0
                    hist_p[c] = 0
            else:
                for t in range(lo, hi):
                    c = codes[rows[t], col]
                    hist_n[c] += 1
                    hist_p[c] += y[rows[t]]
                nl = 0
                pl = 0
                prev = -1
                for c in range(nv):
                    if hist_n[c] == 0:
                        continue
                    if prev >= 0:
                        nr = n - nl
                        pr = npos - pl
                        proxy = (pl * pl + (nl - pl) * (nl - pl)) / nl + (pr * pr + (nr - pr) * (nr - pr)) / nr
                        if proxy > best * (1.0 + 1e-12):
                            best = proxy
                            best_f = jf
                            best_code = prev
                            best_thr = 0.5 * (values[col, prev] + values[col, c])
                    nl += hist_n[c]
                    pl += hist_p[c]
                    prev = c
                    hist_n[c] = 0
                    hist_p[c] = 0

        if best_f < 0:
            continue
        col = cols[best_f]
        # partition rows[lo:hi] so codes <= best_code come first
        i = lo
        j = hi - 1
        while i <= j:
            if codes[rows[i], col] <= best_code:
                i += 1
            else:
                tmp = rows[i]
                rows[i] = rows[j]
                rows[j] = tmp
                j -= 1
        feat[node] = best_f
        thr[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is expanded first
        st_node[sp] = rnode
        st_lo[sp] = i
        st_hi[sp] = hi
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lnode
        st_lo[sp] = lo
        st_hi[sp] = i
        st_depth[sp] = depth + 1
        sp += 1

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], frac[:n_nodes], count[:n_nodes]


@njit(cache=True)
def _predict_tree(X, cols, rows, feat, thr, left, right, frac):
    out = np.empty(rows.shape[0], np.float64)
    for i in range(rows.shape[0]):
        r = rows[i]
        node = 0
        while feat[node] >= 0:
            if X[r, cols[feat[node]]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = frac[node]
    return out


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int | None = None
    min_samples_split: int = 2

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Array-encoded binary tree. Leaves have ``split_feature == -1``."""

    split_feature: np.ndarray
    split_threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    positive_fraction: np.ndarray
    sample_count: np.ndarray
    n_features: int
    config: TreeConfig = field(default_factory=TreeConfig)

    @property
    def n_nodes(self) -> int:
        return len(self.split_feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.split_feature < 0))


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.int8)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[1] < 1:
        raise ValueError("need at least one feature")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return X, y


def _rank_encode(X):
    m, p = X.shape
    codes = np.empty((m, p), np.int32)
    uniq = []
    for j in range(p):
        u, inv = np.unique(X[:, j], return_inverse=True)
        codes[:, j] = inv
        uniq.append(u)
    ncodes = np.array([len(u) for u in uniq], np.int32)
    values = np.zeros((p, int(ncodes.max())), np.float64)
    for j, u in enumerate(uniq):
        values[j, : len(u)] = u
    return codes, values, ncodes


def fit_tree(X, y, config: TreeConfig | None = None) -> TreeModel:
    """Greedy CART with weighted Gini impurity and midpoint thresholds.

    Ties between candidate splits go to the lowest feature index, then the
    lowest threshold. Nodes keep splitting until pure, too small, or at
    ``max_depth``; a zero-gain split is still taken when one exists.
    """
    config = config or TreeConfig()
    X, y = _check_xy(X, y)
    codes, values, ncodes = _rank_encode(X)
    m, p = X.shape
    cols = np.arange(p, dtype=np.int64)
    rows = np.arange(m, dtype=np.int64)
    md = -1 if config.max_depth is None else config.max_depth
    arrs = _grow_tree(codes, values, ncodes, y, cols, rows, md, config.min_samples_split)
    return TreeModel(*arrs, n_features=p, config=config)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


@njit(cache=True)
def _standardize_stats(X, rows, cols):
    m = rows.shape[0]
    p = cols.shape[0]
    mean = np.zeros(p)
    std = np.ones(p)
    for j in range(p):
        s = 0.0
        for i in range(m):
            s += X[rows[i], cols[j]]
        mu = s / m
        v = 0.0
        for i in range(m):
            dlt = X[rows[i], cols[j]] - mu
            v += dlt * dlt
        sd = np.sqrt(v / m)
        mean[j] = mu
        if sd > 1e-12 * max(1.0, abs(mu)):
            std[j] = sd
    return mean, std


@njit(cache=True)
def _softplus(z):
    if z > 0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@njit(cache=True)
def _logistic_loss(Z, y, w, b, lam):
    m, p = Z.shape
    total = 0.0
    for i in range(m):
        z = b
        for j in range(p):
            z += Z[i, j] * w[j]
        total += _softplus(z) - y[i] * z
    reg = 0.0
    for j in range(p):
        reg += w[j] * w[j]
    return total / m + 0.5 * lam * reg


@njit(cache=True)
def _fit_logistic(Z, y, lam, tol, max_iter):
    """Full-batch gradient descent with Armijo backtracking from zero weights."""
    m, p = Z.shape
    w = np.zeros(p)
    b = 0.0
    gw = np.zeros(p)
    wn = np.zeros(p)
    loss = _logistic_loss(Z, y, w, b, lam)
    step = 1.0
    it = 0
    monotone = True
    while it < max_iter:
        gw[:] = 0.0
        gb = 0.0
        for i in range(m):
            z = b
            for j in range(p):
                z += Z[i, j] * w[j]
            if z >= 0:
                s = 1.0 / (1.0 + np.exp(-z))
            else:
                ez = np.exp(z)
                s = ez / (1.0 + ez)
            r = s - y[i]
            gb += r
            for j in range(p):
                gw[j] += r * Z[i, j]
        gb /= m
        gnorm2 = gb * gb
        for j in range(p):
            gw[j] = gw[j] / m + lam * w[j]
            gnorm2 += gw[j] * gw[j]
        if np.sqrt(gnorm2) < tol:
            break
        step = min(step * 2.0, 1e6)
        accepted = False
        while step > 1e-14:
            for j in range(p):
                wn[j] = w[j] - step * gw[j]
            bn = b - step * gb
            new_loss = _logistic_loss(Z, y, wn, bn, lam)
            if new_loss <= loss - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if new_loss > loss:
            monotone = False
        w[:] = wn
        b = bn
        loss = new_loss
        it += 1
    return w, b, it, loss, monotone


@njit(cache=True)
def _gather_standardized(X, rows, cols, mean, std):
    m = rows.shape[0]
    p = cols.shape[0]
    Z = np.empty((m, p))
    for i in range(m):
        for j in range(p):
            Z[i, j] = (X[rows[i], cols[j]] - mean[j]) / std[j]
    return Z


@njit(cache=True)
def _predict_logistic(X, rows, cols, mean, std, w, b):
    out = np.empty(rows.shape[0])
    p = cols.shape[0]
    for i in range(rows.shape[0]):
        z = b
        for j in range(p):
            z += (X[rows[i], cols[j]] - mean[j]) / std[j] * w[j]
        if z >= 0:
            out[i] = 1.0 / (1.0 + np.exp(-z))
        else:
            ez = np.exp(z)
            out[i] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LinearConfig:
    """Hyperparameters; ``regularization_strength=None`` means 1/m."""

    regularization_strength: float | None = None
    max_iterations: int = 500
    convergence_tolerance: float = 1e-6


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    intercept: float
    mean: np.ndarray
    std: np.ndarray
    regularization_strength: float
    max_iterations: int
    convergence_tolerance: float
    n_iter: int
    final_loss: float


def fit_linear(X, y, config: LinearConfig | None = None) -> LinearModel:
    """L2-regularised logistic regression on standardised features."""
    config = config or LinearConfig()
    X, y = _check_xy(X, y)
    m, p = X.shape
    rows = np.arange(m, dtype=np.int64)
    cols = np.arange(p, dtype=np.int64)
    lam = 1.0 / m if config.regularization_strength is None else config.regularization_strength
    mean, std = _standardize_stats(X, rows, cols)
    Z = _gather_standardized(X, rows, cols, mean, std)
    w, b, it, loss, monotone = _fit_logistic(Z, y.astype(np.float64), lam,
                                             config.convergence_tolerance, config.max_iterations)
    # Armijo acceptance makes this impossible; kept as a hard guard.
    assert monotone, "logistic loss increased during training"
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("non-finite logistic weights")
    return LinearModel(w, float(b), mean, std, lam, config.max_iterations,
                       config.convergence_tolerance, int(it), float(loss))


def predict_scores(model: LinearModel | TreeModel, X) -> np.ndarray:
    """Positive-class scores in [0, 1] for every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    rows = np.arange(X.shape[0], dtype=np.int64)
    if isinstance(model, TreeModel):
        if X.shape[1] != model.n_features:
            raise ValueError(f"expected {model.n_features} columns, got {X.shape[1]}")
        cols = np.arange(X.shape[1], dtype=np.int64)
        return _predict_tree(X, cols, rows, model.split_feature, model.split_threshold,
                             model.left, model.right, model.positive_fraction)
    if X.shape[1] != len(model.weights):
        raise ValueError(f"expected {len(model.weights)} columns, got {X.shape[1]}")
    cols = np.arange(X.shape[1], dtype=np.int64)
    return _predict_logistic(X, rows, cols, model.mean, model.std, model.weights, model.intercept)


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------

_KIND_CODE = {"linear": 0, "nonlinear": 1}


@njit(cache=True)
def _fit_score(kind, codes, values, ncodes, X, y, yf, cols, train, evals,
               max_depth, min_split, lam, tol, max_iter):
    """Fit on ``train`` and return the AUC on each row set in ``evals``."""
    n_eval = len(evals)
    out = np.empty(n_eval)
    if kind == 1:
        feat, thr, left, right, frac, _ = _grow_tree(codes, values, ncodes, y, cols, train,
                                                     max_depth, min_split)
        for e in range(n_eval):
            s = _predict_tree(X, cols, evals[e], feat, thr, left, right, frac)
            out[e] = _auc_kernel(s, y[evals[e]])
    else:
        mean, std = _standardize_stats(X, train, cols)
        Z = _gather_standardized(X, train, cols, mean, std)
        w, b, _, _, _ = _fit_logistic(Z, yf[train], lam, tol, max_iter)
        for e in range(n_eval):
            s = _predict_logistic(X, evals[e], cols, mean, std, w, b)
            out[e] = _auc_kernel(s, y[evals[e]])
    return out


@njit(cache=True)
def _cv_kernel(kind, codes, values, ncodes, X, y, yf, cols, idx, fold_of, k,
               max_depth, min_split, lam, tol, max_iter):
    total = 0.0
    for f in range(k):
        ntr = 0
        for i in range(idx.shape[0]):
            if fold_of[i] != f:
                ntr += 1
        train = np.empty(ntr, np.int64)
        held = np.empty(idx.shape[0] - ntr, np.int64)
        a = 0
        h = 0
        for i in range(idx.shape[0]):
            if fold_of[i] != f:
                train[a] = idx[i]
                a += 1
            else:
                held[h] = idx[i]
                h += 1
        lam_f = lam if lam > 0 else 1.0 / ntr
        evals = (held,)
        res = _fit_score(kind, codes, values, ncodes, X, y, yf, cols, train, evals,
                         max_depth, min_split, lam_f, tol, max_iter)
        total += res[0]
    return total / k


@dataclass(frozen=True)
class FitnessHarness:
    """How a feature subset is scored.

    ``mode="union"`` runs k-fold CV over the visible rows; ``mode="holdout"``
    trains on the training partition and scores the testing partition.
    """

    evaluator_kind: EvaluatorKind = "nonlinear"
    k: int = 5
    seed: int = 0
    mode: Literal["union", "holdout"] = "union"
    tree: TreeConfig = field(default_factory=TreeConfig)
    linear: LinearConfig = field(default_factory=LinearConfig)

    def __post_init__(self):
        if self.evaluator_kind not in _KIND_CODE:
            raise ValueError(f"unknown evaluator kind {self.evaluator_kind!r}")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.mode not in ("union", "holdout"):
            raise ValueError(f"unknown fitness mode {self.mode!r}")


def _kernel_args(data: Dataset, harness: FitnessHarness):
    codes, values, ncodes = data.rank_codes()
    lam = harness.linear.regularization_strength
    return dict(
        kind=_KIND_CODE[harness.evaluator_kind],
        codes=codes, values=values, ncodes=ncodes,
        X=data.features, y=data.labels, yf=data.labels.astype(np.float64),
        max_depth=-1 if harness.tree.max_depth is None else harness.tree.max_depth,
        min_split=harness.tree.min_samples_split,
        lam=-1.0 if lam is None else float(lam),
        tol=harness.linear.convergence_tolerance,
        max_iter=harness.linear.max_iterations,
    )


class FitnessEvaluator:
    """Scores subsets against one fixed fold plan (or train/test holdout).

    The fold plan is derived once from ``harness.seed`` so every genome in a
    GA run is compared on identical folds.
    """

    def __init__(self, data: Dataset, visible_idx: Sequence[int], harness: FitnessHarness,
                 holdout: tuple[Sequence[int], Sequence[int]] | None = None):
        self.data = data
        self.harness = harness
        self._args = _kernel_args(data, harness)
        if harness.mode == "holdout":
            if holdout is None:
                raise ValueError("holdout mode needs (train_idx, test_idx)")
            self._train = np.array(sorted(holdout[0]), np.int64)
            self._test = np.array(sorted(holdout[1]), np.int64)
        else:
            plan = stratified_kfold(visible_idx, data.labels, harness.k, harness.seed)
            self._idx = np.array(plan.indices, np.int64)
            self._fold_of = np.array(plan.assignments, np.int64)

    def __call__(self, subset: Sequence[int]) -> float:
        if len(subset) == 0:
            raise ValueError("empty feature subset")
        cols = np.asarray(subset, dtype=np.int64)
        a = self._args
        if self.harness.mode == "holdout":
            lam = a["lam"] if a["lam"] > 0 else 1.0 / len(self._train)
            res = _fit_score(a["kind"], a["codes"], a["values"], a["ncodes"], a["X"], a["y"],
                             a["yf"], cols, self._train, (self._test,), a["max_depth"],
                             a["min_split"], lam, a["tol"], a["max_iter"])
            return float(res[0])
        return float(_cv_kernel(a["kind"], a["codes"], a["values"], a["ncodes"], a["X"], a["y"],
                                a["yf"], cols, self._idx, self._fold_of, self.harness.k,
                                a["max_depth"], a["min_split"], a["lam"], a["tol"], a["max_iter"]))


def cv_fitness(data: Dataset, visible_idx: Sequence[int], subset: Sequence[int],
               harness: FitnessHarness) -> float:
    """Mean held-out AUC of stratified k-fold CV on the ``subset`` columns."""
    return FitnessEvaluator(data, visible_idx, harness)(subset)


def evaluate_final(data: Dataset, partition: Partition, subset: Sequence[int],
                   evaluator_kind: EvaluatorKind = "nonlinear",
                   tree: TreeConfig | None = None,
                   linear: LinearConfig | None = None) -> tuple[float, float, float]:
    """Fit once on the training partition; AUC on train, test and validation."""
    if len(subset) == 0:
        raise ValueError("empty feature subset")
    harness = FitnessHarness(evaluator_kind, tree=tree or TreeConfig(), linear=linear or LinearConfig())
    a = _kernel_args(data, harness)
    train = np.array(partition.train_idx, np.int64)
    evals = (train, np.array(partition.test_idx, np.int64), np.array(partition.validation_idx, np.int64))
    lam = a["lam"] if a["lam"] > 0 else 1.0 / len(train)
    res = _fit_score(a["kind"], a["codes"], a["values"], a["ncodes"], a["X"], a["y"], a["yf"],
                     np.asarray(subset, np.int64), train, evals, a["max_depth"], a["min_split"],
                     lam, a["tol"], a["max_iter"])
    if np.any(res < 0):
        raise ValueError("a partition lacks one of the classes")
    return float(res[0]), float(res[1]), float(res[2])
