"""Training-set assembly containers and from-scratch classifiers.

Both learners consume sparse instances over a per-training-set dictionary
(the union of item columns seen in the training instances; unseen columns
at prediction time are dropped). Instances are canonically ordered at
assembly so that training is invariant to the order the caller collected
them in; all stochasticity comes from the seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ._rng import generator
from .data import AttributeMatrix

CLASSIFIERS = ("linear-svm", "random-forest", "coin")


class LearnError(ValueError):
    pass


@dataclass(frozen=True)
class SVMHyper:
    reg: float = 1e-4
    epochs: int = 10

    @staticmethod
    def from_dict(d: dict | None) -> "SVMHyper":
        d = d or {}
        return SVMHyper(reg=float(d.get("reg", 1e-4)),
                        epochs=int(d.get("epochs", 10)))


@dataclass(frozen=True)
class RFHyper:
    trees: int = 50
    max_depth: int = 16
    min_leaf: int = 1
    feature_frac: float | str = "sqrt"
    bootstrap: bool = True

    @staticmethod
    def from_dict(d: dict | None) -> "RFHyper":
        d = d or {}
        return RFHyper(
            trees=int(d.get("trees", 50)),
            max_depth=int(d.get("max_depth", 16)),
            min_leaf=int(d.get("min_leaf", 1)),
            feature_frac=d.get("feature_frac", "sqrt"),
            bootstrap=bool(d.get("bootstrap", True)),
        )


class TrainingSet:
    """Sparse instances in a local column space.

    ``dictionary`` maps local columns back to global item columns. ``ids``
    are the canonical instance keys (node ids or pairs); instances are
    sorted by id at construction.
    """

    def __init__(self, rows, labels, ids) -> None:
        if len(rows) != len(labels) or len(rows) != len(ids):
            raise LearnError("rows, labels and ids must align")
        if len(rows) == 0:
            raise LearnError("empty training set")
        order = sorted(range(len(ids)), key=lambda t: ids[t])
        rows = [rows[t] for t in order]
        self.ids = tuple(ids[t] for t in order)
        self.y = np.array([int(labels[t]) for t in order], dtype=np.int8)
        if set(np.unique(self.y)) - {0, 1}:
            raise LearnError("labels must be 0/1")
        cols = [np.asarray(c, dtype=np.int64) for c, _ in rows]
        vals = [np.asarray(v, dtype=np.float64) for _, v in rows]
        self.dictionary = (np.unique(np.concatenate(cols))
                           if any(len(c) for c in cols)
                           else np.empty(0, dtype=np.int64))
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(c) for c in cols])
        indices = (np.searchsorted(self.dictionary, np.concatenate(cols))
                   if len(self.dictionary) else np.empty(0, dtype=np.int64))
        data = np.concatenate(vals) if len(vals) else np.empty(0)
        if len(data) and data.min() < 0:
            raise LearnError("negative feature value")
        self.X = sparse.csr_matrix(
            (data, indices, indptr),
            shape=(len(rows), len(self.dictionary)),
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.y)


def _project(dictionary: np.ndarray, cols: np.ndarray, vals: np.ndarray):
    """Map a global sparse vector into the dictionary space, dropping
    unknown columns."""
    if len(dictionary) == 0 or len(cols) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    pos = np.searchsorted(dictionary, cols)
    pos_c = np.minimum(pos, len(dictionary) - 1)
    hit = dictionary[pos_c] == cols
    return pos_c[hit], np.asarray(vals, dtype=np.float64)[hit]


class ConstantClassifier:
    """Predicts one label regardless of input; produced for single-class
    training sets."""

    kind = "constant"

    def __init__(self, label: int, reason: str = "") -> None:
        self.label = int(label)
        self.reason = reason

    def predict(self, cols, vals) -> int:
        return self.label


class CoinClassifier:
    """Seeded coin flip keyed on the instance content; a null model for
    calibration checks on balanced evaluation sets."""

    kind = "coin"

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)

    def predict(self, cols, vals) -> int:
        h = hashlib.sha256()
        h.update(str(self.seed).encode())
        h.update(np.asarray(cols, dtype=np.int64).tobytes())
        h.update(np.asarray(vals, dtype=np.float64).tobytes())
        return h.digest()[0] & 1


class LinearSVM:
    """Primal hinge-loss linear SVM with per-instance L2 normalization."""

    kind = "linear-svm"

    def __init__(self, w: np.ndarray, b: float, dictionary: np.ndarray) -> None:
        self.w = w
        self.b = b
        self.dictionary = dictionary

    def decision(self, cols, vals) -> float:
        loc, v = _project(self.dictionary, np.asarray(cols), vals)
        norm = np.sqrt((v * v).sum())
        if norm > 0:
            v = v / norm
        return float(self.w[loc] @ v + self.b)

    def predict(self, cols, vals) -> int:
        return 1 if self.decision(cols, vals) >= 0 else 0


def svm_objective(w: np.ndarray, b: float, X: sparse.csr_matrix,
                  y_signed: np.ndarray, reg: float) -> float:
    """Regularized mean hinge loss on pre-normalized instances."""
    margins = y_signed * (X @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins).mean()
    return float(0.5 * reg * (w @ w) + hinge)


def train_svm(ts: TrainingSet, hyper: SVMHyper, seed: int):
    """Seeded stochastic subgradient descent with step 1 / (reg * t).

    The bias is trained as an augmented always-on feature: under 1/(reg*t)
    steps a free bias keeps its first (huge) updates forever, while the
    multiplicative decay lets every regularized coordinate forget them.
    Single-class sets yield a constant classifier.

    Predictions are invariant under positive scaling of (w, b) but the
    objective is not, and short runs end with the right direction at the
    wrong norm. The returned model is the final iterate at the objective-
    minimizing scale; scale 0 is the zero solution, so the objective never
    exceeds its value at the zero vector.
    """
    classes = ts.classes()
    if len(classes) == 1:
        return ConstantClassifier(int(classes[0]), "single-class")
    X = ts.X.copy().astype(np.float64)
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    scale = np.ones_like(norms)
    nz = norms > 0
    scale[nz] = 1.0 / norms[nz]
    X = sparse.diags(scale) @ X
    X = X.tocsr()
    y = ts.y.astype(np.float64) * 2.0 - 1.0
    d = ts.n_features
    w = np.zeros(d)
    b = 0.0
    rng = generator(seed, "svm")
    t = 0
    for _ in range(hyper.epochs):
        for i in rng.permutation(ts.n):
            t += 1
            eta = 1.0 / (hyper.reg * t)
            lo, hi = X.indptr[i], X.indptr[i + 1]
            cols = X.indices[lo:hi]
            vals = X.data[lo:hi]
            margin = y[i] * (w[cols] @ vals + b)
            decay = 1.0 - eta * hyper.reg
            w *= decay
            b *= decay
            if margin < 1.0:
                w[cols] += eta * y[i] * vals
                b += eta * y[i]
    c = _best_scale(w, b, X, y, hyper.reg)
    return LinearSVM(c * w, c * b, ts.dictionary)


def _best_scale(w: np.ndarray, b: float, X: sparse.csr_matrix,
                y: np.ndarray, reg: float) -> float:
    """Objective-minimizing scale of (w, b); 0 when nothing beats the zero
    solution. The objective is convex in the scale (quadratic plus hinge
    terms), so a ternary search finds the optimum."""
    margins = y * (X @ w + b)
    quad = 0.5 * reg * float(w @ w)

    def obj(c: float) -> float:
        return quad * c * c + float(np.maximum(0.0, 1.0 - c * margins)
                                    .mean())

    pos = margins[margins > 0]
    hi = float(max(1.0, (1.0 / pos).max())) if len(pos) else 1.0
    lo = 0.0
    for _ in range(100):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if obj(m1) <= obj(m2):
            hi = m2
        else:
            lo = m1
    best = (lo + hi) / 2.0
    return best if obj(best) < obj(0.0) else 0.0


class _Tree:
    """CART arrays: feature < 0 marks a leaf storing its label in
    ``threshold``."""

    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []

    def add_leaf(self, label: int) -> int:
        self.feature.append(-1)
        self.threshold.append(float(label))
        self.left.append(-1)
        self.right.append(-1)
        return len(self.feature) - 1

    def add_split(self, feat: int, thr: float) -> int:
        self.feature.append(feat)
        self.threshold.append(thr)
        self.left.append(-1)
        self.right.append(-1)
        return len(self.feature) - 1

    def predict(self, x: np.ndarray) -> int:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return int(self.threshold[node])


def _majority(y: np.ndarray) -> int:
    pos = int(y.sum())
    return 1 if 2 * pos >= len(y) else 0


def _best_split(X: np.ndarray, idx: np.ndarray, y: np.ndarray,
                feats: np.ndarray, min_leaf: int):
    """Exhaustive Gini split search over the sampled features.

    Ties break toward the lowest feature id, then the lowest threshold.
    Returns (feature, threshold) or None when no impurity-reducing split
    exists.
    """
    nn = len(y)
    Xs = X[np.ix_(idx, feats)]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    pos = np.cumsum(ys, axis=0)
    k = np.arange(1, nn)[:, None].astype(np.float64)
    lp = pos[:-1].astype(np.float64)
    rp = pos[-1] - lp
    rn = nn - k
    gini_l = 1.0 - (lp / k) ** 2 - ((k - lp) / k) ** 2
    gini_r = 1.0 - (rp / rn) ** 2 - ((rn - rp) / rn) ** 2
    score = (k * gini_l + rn * gini_r) / nn
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        ks = np.arange(1, nn)
        ok = (ks >= min_leaf) & (nn - ks >= min_leaf)
        valid &= ok[:, None]
    score = np.where(valid, score, np.inf)
    p1 = y.sum() / nn
    parent = 1.0 - p1 ** 2 - (1.0 - p1) ** 2
    best = None
    best_score = parent - 1e-12
    for c in range(len(feats)):
        kidx = int(np.argmin(score[:, c]))
        s = score[kidx, c]
        if s < best_score:
            best_score = s
            thr = 0.5 * (xs[kidx, c] + xs[kidx + 1, c])
            best = (int(feats[c]), float(thr))
    return best


def _grow(tree: _Tree, X: np.ndarray, y: np.ndarray, idx: np.ndarray,
          depth: int, hyper: RFHyper, m_feats: int,
          rng: np.random.Generator) -> int:
    yn = y[idx]
    if (depth >= hyper.max_depth or len(idx) < 2 * hyper.min_leaf
            or yn.min() == yn.max()):
        return tree.add_leaf(_majority(yn))
    d = X.shape[1]
    feats = np.sort(rng.choice(d, size=min(m_feats, d), replace=False))
    split = _best_split(X, idx, yn, feats, hyper.min_leaf)
    if split is None:
        return tree.add_leaf(_majority(yn))
    feat, thr = split
    node = tree.add_split(feat, thr)
    go_left = X[idx, feat] <= thr
    tree.left[node] = _grow(tree, X, y, idx[go_left], depth + 1,
                            hyper, m_feats, rng)
    tree.right[node] = _grow(tree, X, y, idx[~go_left], depth + 1,
                             hyper, m_feats, rng)
    return node


class RandomForest:
    kind = "random-forest"

    def __init__(self, trees: list[_Tree], dictionary: np.ndarray) -> None:
        self.trees = trees
        self.dictionary = dictionary

    def predict(self, cols, vals) -> int:
        x = np.zeros(len(self.dictionary))
        loc, v = _project(self.dictionary, np.asarray(cols), vals)
        x[loc] = v
        votes = sum(t.predict(x) for t in self.trees)
        return 1 if 2 * votes >= len(self.trees) else 0


def train_rf(ts: TrainingSet, hyper: RFHyper, seed: int):
    """Bootstrap-aggregated Gini CART trees with per-split feature
    sampling (sqrt of the dictionary size by default)."""
    classes = ts.classes()
    if len(classes) == 1:
        return ConstantClassifier(int(classes[0]), "single-class")
    X = np.asarray(ts.X.todense(), dtype=np.float64)
    y = ts.y.astype(np.int64)
    d = ts.n_features
    if hyper.feature_frac == "sqrt":
        m_feats = max(1, int(np.floor(np.sqrt(d))))
    else:
        m_feats = max(1, int(round(float(hyper.feature_frac) * d)))
    trees = []
    n = ts.n
    for t in range(hyper.trees):
        rng = generator(seed, "tree", t)
        idx = rng.integers(0, n, size=n) if hyper.bootstrap else np.arange(n)
        tree = _Tree()
        if y[idx].min() == y[idx].max():
            tree.add_leaf(_majority(y[idx]))
        else:
            _grow(tree, X, y, np.asarray(idx), 0, hyper, m_feats, rng)
        trees.append(tree)
    return RandomForest(trees, ts.dictionary)


def train_classifier(kind: str, ts: TrainingSet, seed: int,
                     svm_hyper: SVMHyper | None = None,
                     rf_hyper: RFHyper | None = None):
    if kind == "linear-svm":
        return train_svm(ts, svm_hyper or SVMHyper(), seed)
    if kind == "random-forest":
        return train_rf(ts, rf_hyper or RFHyper(), seed)
    if kind == "coin":
        return CoinClassifier(seed)
    raise LearnError(f"unknown classifier kind: {kind}")


def edge_features(matrix: AttributeMatrix, u: int, v: int):
    """Pair feature vector: element-wise minima of the two attribute rows.

    Summing the returned values gives exactly the intersection similarity
    of u and v.
    """
    cu, vu = matrix.row(u)
    cv, vv = matrix.row(v)
    common, ku, kv = np.intersect1d(cu, cv, return_indices=True)
    return common, np.minimum(vu[ku], vv[kv])
