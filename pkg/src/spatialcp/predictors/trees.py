"""Regression tree ensembles: random forests, gradient boosting, quantile forests.

Split search is delegated to scikit-learn's CART builder (variance reduction,
midpoint thresholds); every fitted tree is immediately copied into the flat
:class:`Tree` arrays below, which own prediction, leaf routing and
serialization.  Per-tree seeds are spawned from the master seed, so serial and
parallel fits are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from sklearn.tree import DecisionTreeRegressor

from ..exceptions import DimensionMismatch, InvalidLevel, TooFewSamples


@dataclass(frozen=True)
class Tree:
    """Axis-aligned binary regression tree in array form.

    Node ``k`` is a leaf when ``feature[k] < 0``.  Otherwise rows with
    ``x[feature[k]] <= threshold[k]`` go to ``left[k]``, the rest to
    ``right[k]``.  Inputs are compared in float32, as the builder does.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def from_sklearn(cls, est):
        t = est.tree_
        feature = t.feature.astype(np.int64)
        leaf = t.children_left < 0
        feature[leaf] = -1
        return cls(
            feature=feature,
            threshold=np.where(leaf, 0.0, t.threshold).astype(float),
            left=t.children_left.astype(np.int64),
            right=t.children_right.astype(np.int64),
            value=t.value.reshape(t.node_count, -1)[:, 0].astype(float).copy(),
        )

    @classmethod
    def constant(cls, value):
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([float(value)]))

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf node index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float32)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple
    kind: str  # "random_forest" | "gradient_boosted"
    n_features: int
    learning_rate: float = 1.0
    base_score: float = 0.0
    params: dict = field(default_factory=dict)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} columns, got {X.shape[1]}")
        return X

    def predict(self, X):
        X = self._check(X)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        if self.kind == "random_forest":
            return total / len(self.trees)
        return self.base_score + self.learning_rate * total

    def staged_predict(self, X):
        """Boosting predictions after 0, 1, ..., M trees (gradient boosting only)."""
        X = self._check(X)
        out = np.empty((len(self.trees) + 1, len(X)))
        cur = np.full(len(X), self.base_score)
        out[0] = cur
        for k, tree in enumerate(self.trees, start=1):
            cur = cur + self.learning_rate * tree.predict(X)
            out[k] = cur
        return out

    def apply(self, X):
        """Leaf ids, shape ``(n_trees, n_rows)``."""
        X = self._check(X)
        return np.stack([t.apply(X) for t in self.trees])

    def to_dict(self):
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "params": self.params,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            kind=d["kind"],
            n_features=int(d["n_features"]),
            learning_rate=float(d["learning_rate"]),
            base_score=float(d["base_score"]),
            params=dict(d.get("params", {})),
        )


def predict(model, X):
    """Point predictions of any fitted model exposing ``predict``."""
    return model.predict(X)


def _tree_seeds(seed, n):
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def fit_tree(X, y, *, max_depth=None, min_leaf=1, max_features=None, seed=0):
    est = DecisionTreeRegressor(
        criterion="squared_error",
        max_depth=max_depth,
        min_samples_leaf=min_leaf,
        max_features=max_features,
        random_state=seed,
    )
    est.fit(X, y)
    return Tree.from_sklearn(est)


def _forest_tree(X, y, tree_seed, bootstrap, mtry, min_leaf, max_depth):
    if bootstrap:
        rng = np.random.default_rng(tree_seed)
        idx = rng.integers(0, len(y), size=len(y))
        X, y = X[idx], y[idx]
    return fit_tree(X, y, max_depth=max_depth, min_leaf=min_leaf, max_features=mtry, seed=tree_seed)


def fit_random_forest(X, y, n_trees=500, mtry=None, min_leaf=5, max_depth=None,
                      bootstrap=True, seed=0, n_jobs=1):
    """Breiman random forest for regression.

    ``mtry`` defaults to ``ceil(p / 3)`` features per split.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) < 2 * min_leaf:
        raise TooFewSamples(f"need at least {2 * min_leaf} rows, got {len(y)}")
    p = X.shape[1]
    mtry = max(1, math.ceil(p / 3)) if mtry is None else int(mtry)
    seeds = _tree_seeds(seed, n_trees)
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_forest_tree)(X, y, s, bootstrap, mtry, min_leaf, max_depth) for s in seeds
    )
    params = {"n_trees": n_trees, "mtry": mtry, "min_leaf": min_leaf, "max_depth": max_depth,
              "bootstrap": bootstrap, "seed": seed}
    return TreeEnsemble(tuple(trees), "random_forest", p, params=params)


def fit_gbt(X, y, n_trees=1000, max_depth=4, learning_rate=0.03, seed=0, return_loss=False):
    """Stagewise least-squares gradient boosting.

    Starts from the mean response; each tree is a depth-limited CART fit to the
    current residuals and is added with shrinkage ``learning_rate``.  With
    ``return_loss`` the training MSE after 0..M trees is returned as well.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) < 10:
        raise TooFewSamples(f"need at least 10 rows, got {len(y)}")
    base = float(np.mean(y))
    current = np.full(len(y), base)
    loss = [float(np.mean((y - current) ** 2))]
    trees = []
    for s in _tree_seeds(seed, n_trees):
        tree = fit_tree(X, y - current, max_depth=max_depth, seed=s)
        current = current + learning_rate * tree.predict(X)
        trees.append(tree)
        loss.append(float(np.mean((y - current) ** 2)))
    params = {"n_trees": n_trees, "max_depth": max_depth, "learning_rate": learning_rate, "seed": seed}
    model = TreeEnsemble(tuple(trees), "gradient_boosted", X.shape[1], learning_rate, base, params)
    return (model, np.asarray(loss)) if return_loss else model


def _co_membership(train_leaves, query_leaves, scale_by_size):
    """Sparse ``(n_query, n_train)`` sum over trees of same-leaf indicators.

    With ``scale_by_size`` each indicator is divided by the number of training
    rows in that leaf.
    """
    n_trees, n_train = train_leaves.shape
    n_query = query_leaves.shape[1]
    cols_train, cols_query, data = [], [], []
    offset = 0
    for t in range(n_trees):
        uniq, inv, counts = np.unique(train_leaves[t], return_inverse=True, return_counts=True)
        pos = np.searchsorted(uniq, query_leaves[t])
        pos_c = np.minimum(pos, len(uniq) - 1)
        hit = uniq[pos_c] == query_leaves[t]
        cols_train.append(inv + offset)
        data.append(1.0 / counts[inv] if scale_by_size else np.ones(n_train))
        # query rows in a leaf with no training rows get a dummy column
        cols_query.append(np.where(hit, pos_c + offset, -1))
        offset += len(uniq)
    A = sparse.csr_matrix(
        (np.concatenate(data), (np.tile(np.arange(n_train), n_trees), np.concatenate(cols_train))),
        shape=(n_train, offset),
    )
    qc = np.concatenate(cols_query)
    qr = np.tile(np.arange(n_query), n_trees)
    keep = qc >= 0
    B = sparse.csr_matrix((np.ones(keep.sum()), (qr[keep], qc[keep])), shape=(n_query, offset))
    return B @ A.T


def rf_proximity(forest, x_test, X_calib):
    """Random-forest kernel: fraction of trees in which test and calibration rows share a leaf.

    Returns a vector for a single test row, a ``(n_test, n_calib)`` matrix otherwise.
    """
    single = np.ndim(x_test) == 1
    leaves_test = forest.apply(np.atleast_2d(x_test))
    leaves_calib = forest.apply(X_calib)
    W = _co_membership(leaves_calib, leaves_test, scale_by_size=False).toarray() / len(forest.trees)
    return W[0] if single else W


@dataclass(frozen=True)
class QuantileForest:
    """Quantile regression forest: a forest plus the training rows in every leaf."""

    forest: TreeEnsemble
    train_leaves: np.ndarray  # (n_trees, n_train)
    y_train: np.ndarray

    @property
    def trees(self):
        return self.forest.trees

    def weights(self, X):
        """Meinshausen weights, shape ``(n_rows, n_train)``; rows sum to 1."""
        leaves = self.forest.apply(X)
        W = _co_membership(self.train_leaves, leaves, scale_by_size=True)
        return W.toarray() / len(self.forest.trees)

    def predict_quantile(self, X, tau, chunk=1024):
        """Weighted ``tau``-quantile(s) of the training responses.

        ``tau`` may be a scalar or a sequence; the output has shape
        ``(n_rows,)`` or ``(n_rows, len(tau))`` respectively.
        """
        taus = np.atleast_1d(np.asarray(tau, dtype=float))
        if np.any((taus <= 0) | (taus >= 1)):
            raise InvalidLevel(f"quantile levels must lie in (0, 1): {tau}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        order = np.argsort(self.y_train, kind="stable")
        y_sorted = self.y_train[order]
        out = np.empty((len(X), len(taus)))
        for start in range(0, len(X), chunk):
            cdf = np.cumsum(self.weights(X[start:start + chunk])[:, order], axis=1)
            for j, t in enumerate(taus):
                idx = np.sum(cdf < t - 1e-12, axis=1)
                out[start:start + chunk, j] = y_sorted[np.minimum(idx, len(y_sorted) - 1)]
        return out[:, 0] if np.ndim(tau) == 0 else out

    def predict(self, X):
        return self.forest.predict(X)


def fit_qrf(X, y, n_trees=500, mtry=None, min_leaf=5, bootstrap=True, seed=0, n_jobs=1):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    forest = fit_random_forest(X, y, n_trees=n_trees, mtry=mtry, min_leaf=min_leaf,
                               bootstrap=bootstrap, seed=seed, n_jobs=n_jobs)
    return QuantileForest(forest, forest.apply(X), y.copy())


def predict_quantile(qrf, x, tau):
    return qrf.predict_quantile(x, tau)
