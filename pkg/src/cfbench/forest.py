"""Random forests of CART trees grown from scratch.

Split rules: ``gini`` scans every midpoint of sorted unique values for the
impurity minimum; ``extratrees`` draws one uniform-random threshold per
candidate feature inside the node's value range. Class weights enter twice,
mirroring weighted-forest practice: as weighted Gini impurity and as weighted
bootstrap sampling probabilities. Leaf probabilities are plain within-leaf
class fractions of the bootstrap sample.

Everything is deterministic given the fitting seed: each tree draws from its
own RNG stream spawned from (seed, tree index), so a fitted prefix of a
larger forest is identical to a smaller forest with the same seed. A fitted
model is immutable and safe for concurrent prediction.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import ClassWeights
from .dataset import FAIL, PASS, LabeledDataset
from .rng import derive_seed, seed_entropy

GINI = "gini"
EXTRATREES = "extratrees"
SPLITRULES = (GINI, EXTRATREES)

OBJECTIVES = ("auc", "accuracy", "f1")

DEFAULT_N_TREES = 500
_MTRY_CANDIDATES = (2, 6, 21, 41)
_MIN_NODE_CANDIDATES = (1, 5, 10)


@dataclass(frozen=True)
class Hyperparams:
    mtry: int
    splitrule: str
    min_node_size: int
    n_trees: int = DEFAULT_N_TREES

    def __post_init__(self):
        if self.mtry < 1:
            raise ValueError("mtry must be a positive integer")
        if self.splitrule not in SPLITRULES:
            raise ValueError(f"splitrule must be one of {SPLITRULES}, got {self.splitrule!r}")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass(frozen=True)
class CvSpec:
    folds: int = 10
    repeats: int = 3
    objective: str = "auc"
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    auc: float
    f1: float


@dataclass(frozen=True)
class Tree:
    """Flat binary tree: feature[i] == -1 marks node i as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    p_fail: np.ndarray


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple[Tree, ...]
    class_weights: ClassWeights
    training_seed: int
    p: int
    inbag: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba_batch(self, X) -> np.ndarray:
        """Probability of the fail class for each row: mean of per-tree leaf probabilities."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.p:
            raise ValueError(f"dimension mismatch: {X.shape[1]} features, model expects {self.p}")
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += _tree_leaf_proba(tree, X)
        return acc / len(self.trees)

    def predict_proba(self, x) -> float:
        return float(self.predict_proba_batch(np.asarray(x)[None, :])[0])

    def predict_labels_batch(self, X) -> np.ndarray:
        # ties at 0.5 go to fail, the minority class of interest
        return np.where(self.predict_proba_batch(X) >= 0.5, FAIL, PASS)

    def predict_label(self, x) -> str:
        return FAIL if self.predict_proba(x) >= 0.5 else PASS

    def predict_proba_trees(self, X) -> np.ndarray:
        """Per-tree fail probabilities, shape (n_trees, n_rows); used for OOB audits."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.vstack([_tree_leaf_proba(tree, X) for tree in self.trees])


def _tree_leaf_proba(tree: Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int32)
    feat = tree.feature[node]
    while True:
        active = feat >= 0
        if not active.any():
            break
        rows = np.flatnonzero(active)
        cur = node[rows]
        go_left = X[rows, tree.feature[cur]] <= tree.threshold[cur]
        node[rows] = np.where(go_left, tree.left[cur], tree.right[cur])
        feat = tree.feature[node]
    return tree.p_fail[node]


def vanilla_hyperparams(p: int, n_trees: int = DEFAULT_N_TREES) -> Hyperparams:
    """Standard defaults: mtry = floor(sqrt(p)), gini splits, min node size 1."""
    return Hyperparams(mtry=max(1, int(math.sqrt(p))), splitrule=GINI,
                       min_node_size=1, n_trees=n_trees)


def default_grid(p: int, n_trees: int = DEFAULT_N_TREES) -> list[Hyperparams]:
    """Tuning grid over mtry x splitrule x min_node_size, clamped to p features."""
    mtries = sorted({min(c, p) for c in _MTRY_CANDIDATES})
    return [
        Hyperparams(mtry=m, splitrule=rule, min_node_size=s, n_trees=n_trees)
        for m in mtries
        for rule in SPLITRULES
        for s in _MIN_NODE_CANDIDATES
    ]


def _split_gini(V, y, w):
    """Best midpoint split over the candidate columns of V.

    Returns (column, threshold) minimizing the weighted Gini impurity of the
    children, or None when no column has two distinct values. ``w`` is the
    per-row weight vector, or None for the unweighted fast path (identical
    arithmetic with implicit unit weights).
    """
    m = V.shape[0]
    order = np.argsort(V, axis=0, kind="stable")
    sv = np.take_along_axis(V, order, axis=0)
    valid = sv[1:] > sv[:-1]
    if not valid.any():
        return None
    if w is None:
        cf = np.cumsum(y[order], axis=0)
        cw = np.arange(1.0, m + 1.0)[:, None]
        total_w = float(m)
        total_f = float(y.sum())
    else:
        cf = np.cumsum((w * y)[order], axis=0)
        cw = np.cumsum(w[order], axis=0)
        total_w = float(w.sum())
        total_f = float((w * y).sum())
    wl, fl = cw[:-1], cf[:-1]
    wr, fr = total_w - wl, total_f - fl
    score = (wl - (fl * fl + (wl - fl) ** 2) / wl) + (wr - (fr * fr + (wr - fr) ** 2) / wr)
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score))
    pos, col = np.unravel_index(flat, score.shape)
    a, b = float(sv[pos, col]), float(sv[pos + 1, col])
    thr = 0.5 * (a + b)
    if not a <= thr < b:  # midpoint rounded onto an endpoint
        thr = a
    return int(col), thr


def _split_extratrees(V, y, w, rng):
    """One uniform-random threshold per candidate column, best weighted Gini wins.

    Thresholds are forced strictly inside the node's value range so both
    children are non-empty; constant columns are skipped.
    """
    lo = V.min(axis=0)
    hi = V.max(axis=0)
    u = rng.random(V.shape[1])
    thr = lo + u * (hi - lo)
    thr = np.where(thr <= lo, np.nextafter(lo, hi), thr)
    thr = np.where(thr >= hi, np.nextafter(hi, lo), thr)
    ok = (thr > lo) & (thr < hi)
    if not ok.any():
        return None
    left = V <= thr
    if w is None:
        wl = left.sum(axis=0).astype(np.float64)
        fl = y @ left
        total_w = float(V.shape[0])
        total_f = float(y.sum())
    else:
        wl = w @ left
        fl = (w * y) @ left
        total_w = float(w.sum())
        total_f = float((w * y).sum())
    wl = np.where(ok, wl, 1.0)  # avoid 0/0 on masked columns
    wr = np.where(ok, total_w - wl, 1.0)
    fr = total_f - fl
    score = (wl - (fl * fl + (wl - fl) ** 2) / wl) + (wr - (fr * fr + (wr - fr) ** 2) / wr)
    score = np.where(ok, score, np.inf)
    col = int(np.argmin(score))
    return col, float(thr[col])


def _grow_tree(X, y, w, hp: Hyperparams, rng) -> Tree:
    """Grow one CART tree on a bootstrap sample.

    Nodes smaller than min_node_size, pure nodes, and nodes without a valid
    split become leaves. Children are explored left-first so node numbering
    and RNG consumption are deterministic.
    """
    p = X.shape[1]
    feature, threshold, left, right, p_fail = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        p_fail.append(math.nan)
        return len(feature) - 1

    stack = [(np.arange(X.shape[0]), new_node())]
    while stack:
        idx, slot = stack.pop()
        yn = y[idx]
        fails = float(yn.sum())
        m = idx.size
        if m < hp.min_node_size or fails == 0.0 or fails == m:
            p_fail[slot] = fails / m
            continue
        feats = rng.choice(p, size=hp.mtry, replace=False)
        V = X[np.ix_(idx, feats)]
        wn = w[idx] if w is not None else None
        if hp.splitrule == GINI:
            res = _split_gini(V, yn, wn)
        else:
            res = _split_extratrees(V, yn, wn, rng)
        if res is None:
            p_fail[slot] = fails / m
            continue
        col, thr = res
        f_global = int(feats[col])
        go_left = X[idx, f_global] <= thr
        li, ri = new_node(), new_node()
        feature[slot] = f_global
        threshold[slot] = thr
        left[slot] = li
        right[slot] = ri
        stack.append((idx[~go_left], ri))
        stack.append((idx[go_left], li))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        p_fail=np.asarray(p_fail, dtype=np.float64),
    )


def _fit_trees(X, y01, hp, seed, row_weight, weighted_split, bootstrap_p, keep_inbag):
    n = X.shape[0]
    streams = np.random.SeedSequence(seed_entropy(seed)[0]).spawn(hp.n_trees)
    trees = []
    inbag = np.zeros((hp.n_trees, n), dtype=np.uint16) if keep_inbag else None
    for t, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        if bootstrap_p is None:
            idxb = rng.choice(n, size=n, replace=True)
        else:
            idxb = rng.choice(n, size=n, replace=True, p=bootstrap_p)
        if keep_inbag:
            inbag[t] = np.bincount(idxb, minlength=n)
        wb = row_weight[idxb] if weighted_split else None
        trees.append(_grow_tree(X[idxb], y01[idxb], wb, hp, rng))
    return tuple(trees), inbag


def fit_forest(train: LabeledDataset, hp: Hyperparams, weights: ClassWeights,
               seed: int, keep_inbag: bool = False) -> RandomForestModel:
    """Fit a forest of ``hp.n_trees`` CART trees on bootstrap samples.

    With non-unit class weights the bootstrap draws rows with probability
    proportional to their class weight and splits use weighted Gini impurity;
    unit weights take an equivalent unweighted path.
    """
    if hp.mtry > train.p:
        raise ValueError(f"mtry={hp.mtry} exceeds the {train.p} available features")
    X = train.features
    y01 = (train.labels == FAIL).astype(np.float64)
    if weights.is_unit:
        trees, inbag = _fit_trees(X, y01, hp, seed, None, False, None, keep_inbag)
    else:
        w_row = weights.per_row(train.labels)
        trees, inbag = _fit_trees(X, y01, hp, seed, w_row, True, w_row / w_row.sum(), keep_inbag)
    return RandomForestModel(trees=trees, class_weights=weights, training_seed=int(seed),
                             p=train.p, inbag=inbag)


def _tied_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [x.size]])
    ranks = np.empty(x.size)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def rank_auc(scores, positives) -> float:
    """AUC as the Mann-Whitney rank statistic of ``scores`` for the positive rows.

    Equivalent to counting score-ordered (positive, negative) pairs with ties
    worth one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _tied_ranks(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(model: RandomForestModel, test: LabeledDataset) -> EvalMetrics:
    """Accuracy, rank-based AUC, and F1 (fail as the positive class) on a test set."""
    scores = model.predict_proba_batch(test.features)
    true_fail = test.labels == FAIL
    if not true_fail.any() or true_fail.all():
        raise ValueError("test set has a single class; AUC is undefined")
    pred_fail = scores >= 0.5
    accuracy = float(np.mean(pred_fail == true_fail))
    auc = rank_auc(scores, true_fail)
    tp = int((pred_fail & true_fail).sum())
    fp = int((pred_fail & ~true_fail).sum())
    fn = int((~pred_fail & true_fail).sum())
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return EvalMetrics(accuracy=accuracy, auc=auc, f1=float(f1))


def tune(train: LabeledDataset, grid, cv: CvSpec, weights: ClassWeights) -> Hyperparams:
    """Pick the grid point with the best mean CV objective over folds x repeats.

    Folds are stratified; the same fold layout and forest seeds are shared by
    every grid point so the comparison is paired. Ties keep the earlier grid
    point.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("tuning grid is empty")
    counts = train.class_counts()
    for lab, c in counts.items():
        if c < cv.folds:
            raise ValueError(
                f"fold infeasibility: class {lab!r} has {c} rows, fewer than {cv.folds} folds"
            )
    totals = np.zeros(len(grid))
    for r in range(cv.repeats):
        rng = np.random.default_rng(np.random.SeedSequence(seed_entropy(cv.seed, r)))
        assign = np.empty(train.n, dtype=np.int64)
        for lab in counts:
            members = train.indices_of(lab)
            perm = rng.permutation(members.size)
            assign[members[perm]] = np.arange(members.size) % cv.folds
        for fold in range(cv.folds):
            val_idx = np.flatnonzero(assign == fold)
            fit_idx = np.flatnonzero(assign != fold)
            sub_train = train.subset(fit_idx)
            sub_val = train.subset(val_idx)
            fold_seed = derive_seed(cv.seed, 1000 + r, fold)
            for gi, hp in enumerate(grid):
                model = fit_forest(sub_train, hp, weights, fold_seed)
                metrics = evaluate(model, sub_val)
                totals[gi] += getattr(metrics, cv.objective)
    return grid[int(np.argmax(totals))]


FOREST_FORMAT = "cfbench-forest 1"


def save_model(model: RandomForestModel, path) -> None:
    """Write the forest as flat text, one node per line, atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w") as fh:
        fh.write(FOREST_FORMAT + "\n")
        fh.write(f"p {model.p}\n")
        fh.write(f"trees {model.n_trees}\n")
        fh.write(f"weight_fail {model.class_weights.weight_fail!r}\n")
        fh.write(f"weight_pass {model.class_weights.weight_pass!r}\n")
        fh.write(f"seed {model.training_seed}\n")
        fh.write("tree,node,feature,threshold,left,right,p_fail,p_pass\n")
        for t, tree in enumerate(model.trees):
            for i in range(tree.feature.size):
                if tree.feature[i] < 0:
                    pf = float(tree.p_fail[i])
                    fh.write(f"{t},{i},-1,,-1,-1,{pf!r},{1.0 - pf!r}\n")
                else:
                    fh.write(
                        f"{t},{i},{tree.feature[i]},{float(tree.threshold[i])!r},"
                        f"{tree.left[i]},{tree.right[i]},,\n"
                    )
    os.replace(tmp, path)


def load_model(path) -> RandomForestModel:
    path = Path(path)
    with path.open() as fh:
        if fh.readline().strip() != FOREST_FORMAT:
            raise ValueError(f"{path}: not a {FOREST_FORMAT} file")
        header = {}
        for _ in range(5):
            key, value = fh.readline().split()
            header[key] = value
        fh.readline()  # column header
        per_tree: dict[int, list] = {}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            t = int(parts[0])
            per_tree.setdefault(t, []).append(parts)
    trees = []
    for t in range(int(header["trees"])):
        rows = per_tree.get(t, [])
        rows.sort(key=lambda r: int(r[1]))
        n_nodes = len(rows)
        tree = Tree(
            feature=np.array([int(r[2]) for r in rows], dtype=np.int32),
            threshold=np.array(
                [float(r[3]) if r[3] else math.nan for r in rows], dtype=np.float64
            ),
            left=np.array([int(r[4]) for r in rows], dtype=np.int32),
            right=np.array([int(r[5]) for r in rows], dtype=np.int32),
            p_fail=np.array([float(r[6]) if r[6] else math.nan for r in rows], dtype=np.float64),
        )
        if n_nodes == 0:
            raise ValueError(f"{path}: tree {t} has no nodes")
        trees.append(tree)
    return RandomForestModel(
        trees=tuple(trees),
        class_weights=ClassWeights(float(header["weight_fail"]), float(header["weight_pass"])),
        training_seed=int(header["seed"]),
        p=int(header["p"]),
    )
