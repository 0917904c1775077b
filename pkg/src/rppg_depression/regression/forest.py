"""Random forest of CART regression trees."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .model import TrainedModel, check_training_data


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 550
    max_depth: int = 15
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: Optional[int] = None  # None: every feature at every split
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        if self.max_features is not None:
            raise ValueError("only max_features=None (all features) is supported")


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]


def _best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray, min_leaf: int):
    """Weighted variance-reduction split over every feature.

    Ties go to the lowest feature index, then the lowest threshold.
    Returns ``(feature, threshold)`` or ``None``.
    """
    m = len(y)
    if m < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ws = w[order]
    wys = (w * y)[order]
    cw = np.cumsum(ws, axis=0)[:-1]
    cwy = np.cumsum(wys, axis=0)[:-1]
    total_w = cw[-1] + ws[-1]
    total_wy = cwy[-1] + wys[-1]
    rw = total_w - cw
    rwy = total_wy - cwy
    with np.errstate(divide="ignore", invalid="ignore"):
        score = cwy * cwy / cw + rwy * rwy / rw
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        pos = np.arange(1, m)[:, None]
        valid &= (pos >= min_leaf) & (m - pos >= min_leaf)
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()
    best = int(np.argmax(flat))
    if not np.isfinite(flat[best]):
        return None
    feat, pos = divmod(best, m - 1)
    lo, hi = xs[pos, feat], xs[pos + 1, feat]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return feat, float(thr)


def fit_tree(X: np.ndarray, y: np.ndarray, counts: np.ndarray, cfg: ForestConfig) -> Tree:
    """Grow one tree on rows weighted by their bootstrap counts."""
    # canonical row order makes every floating-point sum independent of input order
    canon = np.lexsort((counts, y) + tuple(X.T[::-1]))
    X, y, counts = X[canon], y[canon], counts[canon]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            arr.append(v)
        return len(feature) - 1

    root_rows = np.flatnonzero(counts > 0)
    stack = [(new_node(), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        w = counts[rows].astype(float)
        yn = y[rows]
        # clamped so rounding cannot push the weighted mean outside its targets
        value[node] = float(np.clip(np.dot(w, yn) / w.sum(), yn.min(), yn.max()))
        if depth >= cfg.max_depth or w.sum() < cfg.min_samples_split or np.ptp(yn) == 0:
            continue
        split = _best_split(X[rows], yn, w, cfg.min_samples_leaf)
        if split is None:
            continue
        feat, thr = split
        go_left = X[rows, feat] <= thr
        feature[node], threshold[node] = feat, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, rows[~go_left], depth + 1))
        stack.append((lnode, rows[go_left], depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value))


def bootstrap_counts(n: int, seed: int, tree_index: int, bootstrap: bool = True) -> np.ndarray:
    if not bootstrap:
        return np.ones(n, dtype=np.int64)
    rng = np.random.default_rng([seed, tree_index])
    return np.bincount(rng.integers(0, n, n), minlength=n)


def train_rf(X, y, cfg: ForestConfig = ForestConfig(), registry_hash: str = "", threads: int = 1) -> TrainedModel:
    X, y = check_training_data(X, y)
    n = len(y)

    def grow(t):
        return fit_tree(X, y, bootstrap_counts(n, cfg.seed, t, cfg.bootstrap), cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(cfg.n_estimators)))
    else:
        trees = [grow(t) for t in range(cfg.n_estimators)]
    return TrainedModel("rf", asdict(cfg), registry_hash, X.shape[1], pack_trees(trees),
                        {"seed": cfg.seed, "n_train_rows": n, "n_nodes": int(sum(len(t.value) for t in trees))})


def pack_trees(trees) -> dict:
    sizes = np.array([len(t.value) for t in trees], dtype=np.int64)
    return {
        "tree_offsets": np.concatenate(([0], np.cumsum(sizes))).astype(np.int64),
        "feature": np.concatenate([t.feature for t in trees]),
        "threshold": np.concatenate([t.threshold for t in trees]),
        "left": np.concatenate([t.left for t in trees]),
        "right": np.concatenate([t.right for t in trees]),
        "value": np.concatenate([t.value for t in trees]),
    }


def unpack_trees(params: dict) -> list:
    off = params["tree_offsets"]
    return [
        Tree(*(params[k][off[i]:off[i + 1]] for k in ("feature", "threshold", "left", "right", "value")))
        for i in range(len(off) - 1)
    ]


def forest_predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    trees = unpack_trees(model.params)
    total = np.zeros(len(X))
    lo = np.full(len(X), np.inf)
    hi = np.full(len(X), -np.inf)
    for tree in trees:
        p = tree.predict(X)
        total += p
        np.minimum(lo, p, out=lo)
        np.maximum(hi, p, out=hi)
    return np.clip(total / len(trees), lo, hi)
