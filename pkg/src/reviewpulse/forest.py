"""Random forest over Gini splits, exact path-dependent tree Shapley values.

Trees store training covers (bootstrap sample counts) per node, which the
Shapley computation uses as the conditional-expectation weights.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import OracleTooLarge, SplitError
from .stats import pearson

FORMAT_VERSION = 1
ORACLE_LIMIT = 15


# ---------------------------------------------------------------- split

def split_train_test(labels: Sequence, fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split; each class keeps round-half-up(fraction * n_class) rows for training."""
    y = np.asarray(labels)
    if len(y) < 5:
        raise SplitError(f"need at least 5 labelled rows, got {len(y)}")
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise SplitError("single-class data cannot be stratified")
    rng = np.random.default_rng(seed)
    train = []
    for c in classes:
        idx = np.flatnonzero(y == c)
        k = math.floor(fraction * len(idx) + 0.5)
        train.extend(rng.permutation(idx)[:k].tolist())
    train_idx = np.array(sorted(train), dtype=np.int64)
    test_idx = np.setdiff1d(np.arange(len(y)), train_idx)
    return train_idx, test_idx


# ---------------------------------------------------------------- trees

@dataclass
class DecisionTree:
    """Parallel node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    cover: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        n = len(self.feature)
        for name in ("threshold", "left", "right", "cover", "value"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"node array {name} has the wrong length")
        for i in range(n):
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                if abs(self.cover[l] + self.cover[r] - self.cover[i]) > 1e-9 * max(1.0, self.cover[i]):
                    raise ValueError(f"child covers of node {i} do not sum to its cover")
        if ((self.value < 0) | (self.value > 1)).any():
            raise ValueError("leaf values must lie in [0, 1]")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def used_features(self) -> list[int]:
        return sorted({int(f) for f in self.feature if f >= 0})

    def leaf_of(self, x: Sequence[float]) -> int:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return int(i)

    def predict(self, x: Sequence[float]) -> float:
        return float(self.value[self.leaf_of(x)])

    def expected_value(self) -> float:
        leaves = self.feature < 0
        return float(self.cover[leaves] @ self.value[leaves] / self.cover[0])

    @classmethod
    def from_nodes(cls, nodes: Sequence[tuple]) -> "DecisionTree":
        """Nodes as (feature, threshold, left, right, cover, value) tuples, root first."""
        cols = list(zip(*nodes))
        return cls(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.float64),
                   np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                   np.array(cols[4], dtype=np.float64), np.array(cols[5], dtype=np.float64))

    def nodes(self) -> list[tuple]:
        return [(int(self.feature[i]), float(self.threshold[i]), int(self.left[i]), int(self.right[i]),
                 float(self.cover[i]), float(self.value[i])) for i in range(self.n_nodes)]


def _best_split(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, m: int, min_leaf: int):
    """Best Gini split among the first ``m`` non-constant features of a random order."""
    n = len(y)
    total_pos = float(y.sum())
    parent = 1.0 - (total_pos / n) ** 2 - (1.0 - total_pos / n) ** 2
    best = None  # (impurity, feature, threshold)
    tried = 0
    for f in rng.permutation(X.shape[1]):
        if tried >= m:
            break
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs, ys = col[order], y[order]
        if xs[0] == xs[-1]:
            continue
        tried += 1
        cum = np.cumsum(ys)
        nl = np.arange(1, n)
        pos_l = cum[:-1]
        nr = n - nl
        pos_r = total_pos - pos_l
        pl, pr = pos_l / nl, pos_r / nr
        gl = 1.0 - pl ** 2 - (1.0 - pl) ** 2
        gr = 1.0 - pr ** 2 - (1.0 - pr) ** 2
        imp = (nl * gl + nr * gr) / n
        valid = (xs[1:] != xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        imp = np.where(valid, imp, np.inf)
        k = int(np.argmin(imp))
        if best is None or imp[k] < best[0] - 1e-15:
            lo, hi = xs[k], xs[k + 1]
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (float(imp[k]), int(f), float(thr))
    if best is None or best[0] >= parent - 1e-15:
        return None
    return best[1], best[2]


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, features_per_split: int,
               max_depth: Optional[int] = None, min_leaf: int = 1) -> DecisionTree:
    nodes: list[list] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        me = len(nodes)
        ys = y[idx]
        nodes.append([-1, 0.0, -1, -1, float(len(idx)), float(ys.mean())])
        if ys.min() == ys.max() or (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            return me
        split = _best_split(X[idx], ys, rng, features_per_split, min_leaf)
        if split is None:
            return me
        f, thr = split
        go_left = X[idx, f] <= thr
        nodes[me][0], nodes[me][1] = f, thr
        nodes[me][2] = grow(idx[go_left], depth + 1)
        nodes[me][3] = grow(idx[~go_left], depth + 1)
        return me

    grow(np.arange(len(y)), 0)
    return DecisionTree.from_nodes([tuple(n) for n in nodes])


@dataclass(frozen=True)
class ForestParams:
    seed: int
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_leaf: int = 1
    features_per_split: Optional[int] = None  # None means ceil(sqrt(d))
    bootstrap: bool = True

    def resolved_m(self, d: int) -> int:
        return self.features_per_split or max(1, math.ceil(math.sqrt(d)))


@dataclass
class Forest:
    trees: list[DecisionTree]
    n_features: int
    params: ForestParams

    def __post_init__(self):
        for t in self.trees:
            if any(f >= self.n_features for f in t.used_features()):
                raise ValueError("tree references a feature outside the forest's range")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        return x

    def predict(self, x) -> float:
        x = self._check(x)
        return float(np.mean([t.predict(x) for t in self.trees]))

    def predict_many(self, X) -> np.ndarray:
        return np.array([self.predict(row) for row in np.asarray(X, dtype=np.float64)])

    def classify(self, X) -> np.ndarray:
        return (self.predict_many(X) >= 0.5).astype(np.int64)

    def to_text(self) -> str:
        p = self.params
        out = [f"reviewpulse-forest {FORMAT_VERSION}", f"n_features {self.n_features}",
               f"seed {p.seed}", f"n_trees {p.n_trees}", f"max_depth {p.max_depth if p.max_depth is not None else 'none'}",
               f"min_leaf {p.min_leaf}", f"features_per_split {p.resolved_m(self.n_features)}",
               f"bootstrap {str(p.bootstrap).lower()}"]
        for k, t in enumerate(self.trees):
            out.append(f"tree {k} {t.n_nodes}")
            for f, thr, l, r, c, v in t.nodes():
                out.append(f"{f} {thr!r} {l} {r} {c!r} {v!r}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Forest":
        lines = text.rstrip("\n").split("\n")
        magic, version = lines[0].split()
        if magic != "reviewpulse-forest" or int(version) != FORMAT_VERSION:
            raise ValueError("unsupported forest format")
        head = dict(l.split(" ", 1) for l in lines[1:8])
        params = ForestParams(seed=int(head["seed"]), n_trees=int(head["n_trees"]),
                              max_depth=None if head["max_depth"] == "none" else int(head["max_depth"]),
                              min_leaf=int(head["min_leaf"]), features_per_split=int(head["features_per_split"]),
                              bootstrap=head["bootstrap"] == "true")
        trees, i = [], 8
        while i < len(lines):
            _, _, n = lines[i].split()
            rows = [l.split() for l in lines[i + 1:i + 1 + int(n)]]
            trees.append(DecisionTree.from_nodes(
                [(int(a), float(b), int(c), int(d), float(e), float(f)) for a, b, c, d, e, f in rows]))
            i += 1 + int(n)
        return cls(trees, int(head["n_features"]), params)


def train_forest(X, y, params: ForestParams, parallelism: int = 1) -> Forest:
    """Bootstrap trees with per-tree seeds spawned from ``params.seed``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty training set")
    if len(y) != len(X):
        raise ValueError("labels and rows differ in length")
    if np.isnan(X).any():
        raise ValueError("training matrix has missing values")
    if not set(np.unique(y).tolist()) <= {0.0, 1.0}:
        raise ValueError("labels must be binary 0/1")
    n, d = X.shape
    m = params.resolved_m(d)
    children = np.random.SeedSequence(params.seed).spawn(params.n_trees)

    def one(ss):
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        return build_tree(X[idx], y[idx], rng, m, params.max_depth, params.min_leaf)

    if parallelism > 1:
        with ThreadPoolExecutor(parallelism) as pool:
            trees = list(pool.map(one, children))
    else:
        trees = [one(ss) for ss in children]
    return Forest(trees, d, params)


# ---------------------------------------------------------------- shapley

@dataclass(frozen=True)
class ShapExplanation:
    phi: np.ndarray
    base: float

    @property
    def output(self) -> float:
        return self.base + float(self.phi.sum())


def _extend(m, pz, po, pi):
    m = [e[:] for e in m]
    l = len(m)
    m.append([pi, pz, po, 1.0 if l == 0 else 0.0])
    for i in range(l - 1, -1, -1):
        m[i + 1][3] += po * m[i][3] * (i + 1) / (l + 1)
        m[i][3] = pz * m[i][3] * (l - i) / (l + 1)
    return m


def _unwind(m, i):
    m = [e[:] for e in m]
    L = len(m)
    _, z, o, _ = m[i]
    n = m[L - 1][3]
    for j in range(L - 2, -1, -1):
        if o != 0:
            t = m[j][3]
            m[j][3] = n * L / ((j + 1) * o)
            n = t - m[j][3] * z * (L - 1 - j) / L
        else:
            m[j][3] = m[j][3] * L / (z * (L - 1 - j))
    for j in range(i, L - 1):
        m[j][0], m[j][1], m[j][2] = m[j + 1][0], m[j + 1][1], m[j + 1][2]
    return m[:-1]


def _unwound_sum(m, i):
    L = len(m)
    _, z, o, _ = m[i]
    n = m[L - 1][3]
    total = 0.0
    for j in range(L - 2, -1, -1):
        if o != 0:
            t = n * L / ((j + 1) * o)
            total += t
            n = m[j][3] - t * z * (L - 1 - j) / L
        else:
            total += m[j][3] * L / (z * (L - 1 - j))
    return total


def tree_shap_single(tree: DecisionTree, x: Sequence[float], n_features: int) -> ShapExplanation:
    """Polynomial-time path-dependent Shapley values for one tree."""
    phi = np.zeros(n_features)

    def recurse(j, m, pz, po, pi):
        m = _extend(m, pz, po, pi)
        if tree.feature[j] < 0:
            v = tree.value[j]
            for i in range(1, len(m)):
                phi[m[i][0]] += _unwound_sum(m, i) * (m[i][2] - m[i][1]) * v
            return
        f = tree.feature[j]
        l, r = tree.left[j], tree.right[j]
        hot, cold = (l, r) if x[f] <= tree.threshold[j] else (r, l)
        iz = io = 1.0
        k = next((k for k in range(1, len(m)) if m[k][0] == f), None)
        if k is not None:
            iz, io = m[k][1], m[k][2]
            m = _unwind(m, k)
        rj = tree.cover[j]
        recurse(hot, m, iz * tree.cover[hot] / rj, io, f)
        recurse(cold, m, iz * tree.cover[cold] / rj, 0.0, f)

    recurse(0, [], 1.0, 1.0, -1)
    return ShapExplanation(phi, tree.expected_value())


def tree_shap(forest: Forest, x) -> ShapExplanation:
    x = forest._check(x)
    phi = np.zeros(forest.n_features)
    base = 0.0
    for t in forest.trees:
        e = tree_shap_single(t, x, forest.n_features)
        phi += e.phi
        base += e.base
    k = len(forest.trees)
    return ShapExplanation(phi / k, base / k)


def explain_many(forest: Forest, X, parallelism: int = 1) -> list[ShapExplanation]:
    rows = list(np.asarray(X, dtype=np.float64))
    if parallelism > 1:
        with ThreadPoolExecutor(parallelism) as pool:
            return list(pool.map(lambda r: tree_shap(forest, r), rows))
    return [tree_shap(forest, r) for r in rows]


def _leaf_paths(tree: DecisionTree):
    """(leaf, [(node, child), ...]) for every leaf."""
    out, stack = [], [(0, [])]
    while stack:
        i, path = stack.pop()
        if tree.feature[i] < 0:
            out.append((i, path))
        else:
            stack.append((tree.right[i], path + [(i, tree.right[i])]))
            stack.append((tree.left[i], path + [(i, tree.left[i])]))
    return out


def subset_values(tree: DecisionTree, x: Sequence[float], used: Sequence[int]) -> np.ndarray:
    """Cover-weighted conditional expectation for every subset of ``used`` (bitmask-indexed)."""
    M = len(used)
    pos = {f: k for k, f in enumerate(used)}
    masks = np.arange(1 << M, dtype=np.int64)
    values = np.zeros(1 << M)
    for leaf, path in _leaf_paths(tree):
        w = np.ones(1 << M)
        for node, child in path:
            f = tree.feature[node]
            took = (x[f] <= tree.threshold[node]) == (child == tree.left[node])
            known = ((masks >> pos[f]) & 1).astype(bool)
            w *= np.where(known, 1.0 if took else 0.0, tree.cover[child] / tree.cover[node])
        values += w * tree.value[leaf]
    return values


def brute_shapley(tree: DecisionTree, x: Sequence[float], n_features: Optional[int] = None) -> np.ndarray:
    """Exact Shapley values by enumerating all subsets of the features the tree uses."""
    used = tree.used_features()
    M = len(used)
    if M > ORACLE_LIMIT:
        raise OracleTooLarge(f"tree uses {M} features; oracle limit is {ORACLE_LIMIT}")
    n_features = n_features if n_features is not None else (max(used) + 1 if used else 0)
    phi = np.zeros(n_features)
    if M == 0:
        return phi
    v = subset_values(tree, x, used)
    sizes = np.array([bin(s).count("1") for s in range(1 << M)])
    weight = np.array([math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M) if s < M else 0.0
                       for s in range(M + 1)])
    masks = np.arange(1 << M)
    for k, f in enumerate(used):
        without = masks[(masks >> k) & 1 == 0]
        phi[f] = float(np.sum(weight[sizes[without]] * (v[without | (1 << k)] - v[without])))
    return phi


# ---------------------------------------------------------------- report

@dataclass
class FeatureStat:
    name: str
    importance: float
    directionality: float
    constant: bool = False


@dataclass
class GroupStat:
    name: str
    features: list[FeatureStat]

    @property
    def total(self) -> float:
        return float(sum(f.importance for f in self.features))

    @property
    def mean(self) -> float:
        return self.total / len(self.features) if self.features else 0.0


@dataclass
class FeatureReport:
    features: list[FeatureStat]
    groups: list[GroupStat] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "features": [asdict(f) for f in self.features],
            "groups": [{"name": g.name, "sum_abs_phi": g.total, "mean_abs_phi": g.mean,
                        "features": [f.name for f in g.features]} for g in self.groups],
        }


def feature_report(explanations: Sequence[ShapExplanation], X, names: Sequence[str],
                   groups: Optional[Mapping[str, Sequence[str]]] = None) -> FeatureReport:
    """Mean |phi| importance and Pearson directionality per feature, groups ranked by sum."""
    X = np.asarray(X, dtype=np.float64)
    if len(explanations) != len(X):
        raise ValueError("explanations and rows are not aligned")
    P = np.array([e.phi for e in explanations]).reshape(len(X), len(names))
    stats = []
    for j, name in enumerate(names):
        imp = float(np.mean(np.abs(P[:, j]))) if len(X) else 0.0
        if len(X) >= 2:
            c = pearson(X[:, j], P[:, j])
            stats.append(FeatureStat(name, imp, c.r, c.constant))
        else:
            stats.append(FeatureStat(name, imp, 0.0, True))
    by_name = {s.name: s for s in stats}
    out_groups = []
    for gname, members in (groups or {}).items():
        present = [by_name[m] for m in members if m in by_name]
        present.sort(key=lambda s: (-s.importance, s.name))
        out_groups.append(GroupStat(gname, present))
    out_groups.sort(key=lambda g: -g.total)
    return FeatureReport(stats, out_groups)


def shap_csv(keys: Sequence[str], explanations: Sequence[ShapExplanation], names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "base", *names])
    for k, e in zip(keys, explanations):
        w.writerow([k, repr(float(e.base)), *(repr(float(v)) for v in e.phi)])
    return buf.getvalue()
