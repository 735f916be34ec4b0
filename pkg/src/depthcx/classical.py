"""Classical data-complexity measures for binary classification.

Every value is oriented so that larger means harder. Rows are put into a
canonical (lexicographic) order before any measure runs, which makes the
whole report independent of input row order, including the seeded
interpolation used by l3 and n4 and the tie-breaks inside the MST.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import Dataset

METRICS = ("f1", "f1v", "f2", "f3", "f4", "l1", "l2", "l3", "n1", "n2", "n3", "n4", "t1", "lsc",
           "density", "cls_coef", "hubs", "t2", "t3", "t4", "c1", "c2")


class ComplexityError(ValueError):
    pass


def _arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        X, y = data.features, data.labels
    else:
        X, y = data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    order = np.lexsort([y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)])
    return X[order], y[order]


def _need_two_classes(y):
    if y.min() == y.max():
        raise ComplexityError("measure needs both classes present")


def _minmax(X):
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    out = np.zeros_like(X)
    ok = span > 0
    out[:, ok] = (X[:, ok] - lo[ok]) / span[ok]
    return out


# ---------------------------------------------------------------------------
# feature overlap
# ---------------------------------------------------------------------------


def _overlap_bounds(X, y):
    a, b = X[y == 0], X[y == 1]
    maxmin = np.maximum(a.min(0), b.min(0))
    minmax = np.minimum(a.max(0), b.max(0))
    return maxmin, minmax


def _fisher_ratio(X, y):
    mu = X.mean(0)
    num = np.zeros(X.shape[1])
    den = np.zeros(X.shape[1])
    for c in (0, 1):
        Xc = X[y == c]
        mc = Xc.mean(0)
        num += len(Xc) * (mc - mu) ** 2
        den += ((Xc - mc) ** 2).sum(0)
    r = np.zeros_like(num)
    pos = den > 0
    r[pos] = num[pos] / den[pos]
    r[(~pos) & (num > 0)] = np.inf
    return r


def _f1v(X, y):
    X0, X1 = X[y == 0], X[y == 1]
    p0, p1 = len(X0) / len(X), len(X1) / len(X)
    W = p0 * np.atleast_2d(np.cov(X0, rowvar=False, bias=True)) + \
        p1 * np.atleast_2d(np.cov(X1, rowvar=False, bias=True))
    delta = X0.mean(0) - X1.mean(0)
    dn = np.linalg.norm(delta)
    if dn == 0:
        return 1.0
    Wp = np.linalg.pinv(W)
    dvec = Wp @ delta
    # a mean shift in the null space of the pooled scatter separates perfectly
    if np.linalg.norm(delta - W @ dvec) > 1e-9 * dn:
        return 0.0
    den = float(dvec @ W @ dvec)
    num = float(dvec @ delta) ** 2
    if den <= 0:
        return 0.0 if num > 0 else 1.0
    return 1.0 / (1.0 + num / den)


def _f4(X, y):
    n = len(y)
    alive = np.ones(n, bool)
    feats = list(range(X.shape[1]))
    while feats and alive.any():
        ya = y[alive]
        if ya.min() == ya.max():
            alive[:] = False
            break
        Xa = X[alive]
        maxmin, minmax = _overlap_bounds(Xa, ya)
        best_j, best_cnt, best_mask = None, None, None
        for j in feats:
            mask = (Xa[:, j] >= maxmin[j]) & (Xa[:, j] <= minmax[j])
            cnt = int(mask.sum())
            if best_cnt is None or cnt < best_cnt:
                best_j, best_cnt, best_mask = j, cnt, mask
        idx = np.flatnonzero(alive)
        alive[idx[~best_mask]] = False
        feats.remove(best_j)
    return alive.sum() / n


def feature_based_measures(data) -> dict[str, float]:
    X, y = _arrays(data)
    _need_two_classes(y)
    n = len(y)
    r = _fisher_ratio(X, y)
    rmax = float(r.max())
    f1 = 0.0 if math.isinf(rmax) else 1.0 / (1.0 + rmax)

    maxmin, minmax = _overlap_bounds(X, y)
    span = X.max(0) - X.min(0)
    overlap = np.maximum(0.0, minmax - maxmin)
    factor = np.ones_like(span)
    ok = span > 0
    factor[ok] = overlap[ok] / span[ok]
    f2 = float(np.prod(factor))

    inside = (X >= maxmin) & (X <= minmax)
    f3 = float(inside.sum(0).min() / n)
    return {"f1": f1, "f1v": _f1v(X, y), "f2": f2, "f3": f3, "f4": float(_f4(X, y))}


# ---------------------------------------------------------------------------
# linearity
# ---------------------------------------------------------------------------


def _standardize(X):
    mu = X.mean(0)
    sd = X.std(0)
    sd[sd <= 1e-12 * np.maximum(1.0, np.abs(mu))] = 1.0
    return mu, sd


def hinge_classifier(Z, t, lam: float = 1e-2, iterations: int = 500):
    """Full-batch Pegasos subgradient descent on the regularised hinge loss.

    ``t`` holds +/-1 targets; the bias is folded in as a constant column.
    Returns the augmented weight vector with the lowest objective seen.
    """
    n = len(t)
    Za = np.hstack([Z, np.ones((n, 1))])
    w = np.zeros(Za.shape[1])
    radius = 1.0 / math.sqrt(lam)
    best_w, best_obj = w.copy(), np.inf
    for it in range(1, iterations + 1):
        margins = t * (Za @ w)
        obj = 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())
        if obj < best_obj:
            best_obj, best_w = obj, w.copy()
        viol = margins < 1.0
        grad = lam * w - (Za[viol].T @ t[viol]) / n
        w = w - grad / (lam * it)
        nrm = float(np.linalg.norm(w))
        if nrm > radius:
            w *= radius / nrm
    margins = t * (Za @ w)
    obj = 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())
    if obj < best_obj:
        best_w = w.copy()
    return best_w


def _error_rate(w, Z, t):
    s = t * (Z @ w[:-1] + w[-1])
    return float(((s < 0).sum() + 0.5 * (s == 0).sum()) / len(t))


def _interpolate_same_class(X, y, rng):
    """One synthetic point per row, on the segment to a random same-class partner."""
    out = np.empty_like(X)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        if len(idx) == 1:
            out[idx] = X[idx]
            continue
        partners = rng.integers(0, len(idx) - 1, size=len(idx))
        partners = partners + (partners >= np.arange(len(idx)))  # skip self
        alpha = rng.random(len(idx))[:, None]
        out[idx] = alpha * X[idx] + (1 - alpha) * X[idx[partners]]
    return out


def linearity_measures(data, seed: int = 0, lam: float = 1e-2, iterations: int = 500) -> dict[str, float]:
    X, y = _arrays(data)
    _need_two_classes(y)
    mu, sd = _standardize(X)
    Z = (X - mu) / sd
    t = 2.0 * y - 1.0
    w = hinge_classifier(Z, t, lam, iterations)
    wn = float(np.linalg.norm(w[:-1]))
    s = t * (Z @ w[:-1] + w[-1])
    dist = np.where(s < 0, -s / wn, 0.0) if wn > 0 else np.zeros_like(s)
    l1 = 1.0 - 1.0 / (1.0 + float(dist.mean()))
    l2 = _error_rate(w, Z, t)
    rng = np.random.default_rng(seed)
    S = (_interpolate_same_class(X, y, rng) - mu) / sd
    l3 = _error_rate(w, S, t)
    return {"l1": l1, "l2": l2, "l3": l3}


# ---------------------------------------------------------------------------
# neighbourhood
# ---------------------------------------------------------------------------


def mst_edges(D: np.ndarray, y=None) -> list[tuple[int, int]]:
    """Prim's algorithm on a dense distance matrix.

    With labels ``y``, equal-length candidates prefer same-class edges. Every
    MST under that (distance, crossing) order has the same number of
    crossing edges, so n1 does not depend on row order or on which class is
    called positive. Remaining ties go to the lowest index.
    """
    n = len(D)
    cross = (np.zeros((n, n), bool) if y is None
             else np.asarray(y)[:, None] != np.asarray(y)[None, :])
    in_tree = np.zeros(n, bool)
    in_tree[0] = True
    best = D[0].astype(np.float64).copy()
    best_c = cross[0].copy()
    parent = np.zeros(n, np.int64)
    best[0] = np.inf
    edges = []
    for _ in range(n - 1):
        m = best.min()
        tied = np.flatnonzero(best == m)
        j = int(tied[np.argmin(best_c[tied])])
        edges.append((int(parent[j]), j))
        in_tree[j] = True
        best[j] = np.inf
        dj, cj = D[j], cross[j]
        upd = (~in_tree) & ((dj < best) | ((dj == best) & (cj < best_c)))
        best[upd] = dj[upd]
        best_c[upd] = cj[upd]
        parent[upd] = j
    return edges


def _nearest_enemy(D, y):
    Dm = D.copy()
    Dm[y[:, None] == y[None, :]] = np.inf
    ne = Dm.argmin(1)
    return ne, Dm[np.arange(len(y)), ne]


def sphere_radii(D, y) -> np.ndarray:
    """Radii grown until each sphere touches the sphere of its nearest enemy.

    Mutual nearest enemies split their distance in half; otherwise the
    radius is the enemy distance minus the enemy's own radius.
    """
    ne, dist = _nearest_enemy(D, y)
    r = np.full(len(y), -1.0)
    for start in range(len(y)):
        chain, i, seen = [], start, set()
        while r[i] < 0 and i not in seen:
            seen.add(i)
            chain.append(i)
            i = ne[i]
        if r[i] < 0:
            # reached a cycle (a mutual pair, or an exact-tie loop)
            r[i] = dist[i] / 2
            chain = chain[: chain.index(i)]
        for j in reversed(chain):
            if ne[ne[j]] == j:
                r[j] = dist[j] / 2
            else:
                r[j] = max(0.0, dist[j] - r[ne[j]])
    return r


def neighborhood_measures(data, seed: int = 0) -> dict[str, float]:
    X, y = _arrays(data)
    _need_two_classes(y)
    n = len(y)
    if n < 3:
        raise ComplexityError("neighbourhood measures need n >= 3")
    Xs = _minmax(X)
    D = cdist(Xs, Xs)
    same = y[:, None] == y[None, :]

    edges = mst_edges(D, y)
    n1 = sum(y[a] != y[b] for a, b in edges) / (n - 1)

    Dn = D.copy()
    np.fill_diagonal(Dn, np.inf)
    intra = np.where(same, Dn, np.inf).min(1)
    inter = np.where(~same, Dn, np.inf).min(1)
    s_intra = float(intra[np.isfinite(intra)].sum())
    s_inter = float(inter.sum())
    if s_inter == 0:
        n2 = 1.0
    else:
        ratio = s_intra / s_inter
        n2 = ratio / (1.0 + ratio)

    # leave-one-out 1-NN; any tied nearest neighbour of the other class counts as an error
    dmin = Dn.min(1, keepdims=True)
    tied = Dn == dmin
    n3 = float(np.mean((tied & ~same).any(1)))

    rng = np.random.default_rng(seed)
    S = _interpolate_same_class(Xs, y, rng)
    Ds = cdist(S, Xs)
    smin = Ds.min(1, keepdims=True)
    n4 = float(np.mean(((Ds == smin) & (y[None, :] != y[:, None])).any(1)))

    radius = sphere_radii(D, y)
    contained = same & (D + radius[:, None] <= radius[None, :] + 1e-12)
    np.fill_diagonal(contained, False)
    # identical spheres contain each other; the lower index survives
    mutual = contained & contained.T
    lower = np.tri(n, k=-1, dtype=bool).T  # j > i
    absorbed = (contained & ~(mutual & lower)).any(1)
    t1 = float((~absorbed).sum() / n)

    enemy = _nearest_enemy(D, y)[1]
    local = (D < enemy[:, None]).sum(1)
    lsc = 1.0 - float(local.sum()) / n ** 2
    return {"n1": float(n1), "n2": float(n2), "n3": n3, "n4": n4, "t1": t1, "lsc": lsc}


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def gower_graph(X, y, eps: float = 0.15) -> np.ndarray:
    """Adjacency of the eps-graph on Gower distance, inter-class edges pruned."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    G = cdist(_minmax(X), _minmax(X), "cityblock") / X.shape[1]
    A = (G < eps) & (y[:, None] == y[None, :])
    np.fill_diagonal(A, False)
    return A


def hub_scores(A: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Principal eigenvector of A^T A by power iteration from the all-ones vector, max-scaled."""
    A = np.asarray(A, dtype=np.float64)
    v = np.ones(len(A))
    for _ in range(max_iter):
        nv = A.T @ (A @ v)
        m = nv.max()
        if m <= 0:
            return np.zeros(len(A))
        nv /= m
        if np.linalg.norm(nv - v) <= tol * np.linalg.norm(nv):
            v = nv
            break
        v = nv
    return v


def network_from_adjacency(A: np.ndarray) -> dict[str, float]:
    A = np.asarray(A, dtype=bool)
    n = len(A)
    Af = A.astype(np.float64)
    n_edges = A.sum() / 2
    density = 1.0 - n_edges / (n * (n - 1) / 2)
    deg = Af.sum(1)
    tri = ((Af @ Af) * Af).sum(1) / 2
    possible = deg * (deg - 1) / 2
    cc = np.divide(tri, possible, out=np.zeros(n), where=possible > 0)
    hubs = 1.0 - float(hub_scores(Af).mean())
    return {"density": float(density), "cls_coef": float(1.0 - cc.mean()), "hubs": hubs}


def network_measures(data, eps: float = 0.15) -> dict[str, float]:
    X, y = _arrays(data)
    if len(y) < 3:
        raise ComplexityError("network measures need n >= 3")
    return network_from_adjacency(gower_graph(X, y, eps))


# ---------------------------------------------------------------------------
# dimensionality and balance
# ---------------------------------------------------------------------------


def pca_components(X, variance: float = 0.95) -> int:
    """Fewest principal components explaining ``variance`` of the total."""
    X = np.asarray(X, dtype=np.float64)
    if np.all(np.ptp(X, axis=0) == 0):
        return 0
    C = X - X.mean(0)
    n, d = C.shape
    M = C.T @ C if d <= n else C @ C.T
    ev = np.clip(np.linalg.eigvalsh(M)[::-1], 0.0, None)
    cum = np.cumsum(ev) / ev.sum()
    return int(np.searchsorted(cum, variance - 1e-12) + 1)


def dimensionality_measures(data) -> dict[str, float]:
    X, _ = _arrays(data)
    n, d = X.shape
    if n < 2:
        raise ComplexityError("dimensionality measures need n >= 2")
    m = pca_components(X)
    return {"t2": d / n, "t3": m / n, "t4": m / d}


def imbalance_entropy(y) -> float:
    """1 - binary entropy of the class proportions (0 balanced, 1 single class)."""
    y = np.asarray(y)
    p = np.array([np.mean(y == 0), np.mean(y == 1)])
    p = p[p > 0]
    return float(1.0 + np.sum(p * np.log2(p)))


def class_imbalance_measures(data) -> dict[str, float]:
    _, y = _arrays(data)
    n = len(y)
    counts = np.array([np.sum(y == 0), np.sum(y == 1)])
    if counts.min() == 0:
        raise ComplexityError("c2 is undefined for a single class")
    ir = 0.5 * float(np.sum(counts / (n - counts)))
    return {"c1": imbalance_entropy(y), "c2": 1.0 - 1.0 / ir}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class ClassicalReport:
    values: dict[str, float]
    score: float

    def to_dict(self) -> dict:
        return {"values": dict(self.values), "score": self.score}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(METRICS) + ["score"])
        w.writerow([repr(self.values[m]) for m in METRICS] + [repr(self.score)])
        return buf.getvalue()


def full_report(data, seed: int = 0, eps: float = 0.15) -> ClassicalReport:
    """All 22 measures plus their clamped mean."""
    lin_seed, nb_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    families = (
        ("feature-based", lambda: feature_based_measures(data)),
        ("linearity", lambda: linearity_measures(data, seed=lin_seed)),
        ("neighbourhood", lambda: neighborhood_measures(data, seed=nb_seed)),
        ("network", lambda: network_measures(data, eps)),
        ("dimensionality", lambda: dimensionality_measures(data)),
        ("class imbalance", lambda: class_imbalance_measures(data)),
    )
    values: dict[str, float] = {}
    for name, fn in families:
        try:
            values.update(fn())
        except Exception as exc:
            raise ComplexityError(f"{name} measures failed: {exc}") from exc
    values = {m: float(values[m]) for m in METRICS}
    for m, v in values.items():
        if not math.isfinite(v):
            raise ComplexityError(f"metric {m} is not finite")
    score = float(np.mean([min(1.0, max(0.0, v)) for v in values.values()]))
    return ClassicalReport(values, score)
