"""Random forest scoring gel probability for 39-value feature vectors.

Seventy-five trees by default, each grown on a bootstrap resample with Gini
splits over 7 features sampled per node (ceil(sqrt(39))), to purity, leaf
minimum 1. Features that are constant within a node do not use up the
per-node sample, so a node splits whenever any feature can split it (the
usual splitter behavior). Leaves store the gel fraction of their training
samples and the forest score is the mean leaf fraction, so thresholding at
arbitrary operating points stays meaningful.

Determinism: tree t draws from a generator seeded with (master_seed, t), so
training is reproducible bit-for-bit and could be parallelized per tree
without changing the result. Split ties break toward the lowest feature
index, then the lowest threshold.

Model file: a JSON container
    {"format": "gelminer-forest", "version": 1, "schema": 39, "seed": ...,
     "trees": [{"feature": [...], "threshold": [...], "left": [...],
                "right": [...], "value": [...], "count": [...]}, ...]}
with one flat node array per tree; node 0 is the root, feature -1 marks a
leaf. Serialized with sorted keys and no whitespace, so identical models are
identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gelminer.features import FEATURE_COUNT

MODEL_FORMAT = "gelminer-forest"
MODEL_VERSION = 1
DEFAULT_TREE_COUNT = 75


class SingleClassData(Exception):
    """Training data contains only one label."""


class SchemaMismatch(Exception):
    """Vector length does not match the model's feature schema."""


class FormatError(Exception):
    """Model file is corrupt or has an unsupported version."""


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: bool


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")


@dataclass
class DecisionTree:
    """Flat node arrays; internal nodes test x[feature] <= threshold."""

    feature: np.ndarray    # int32, -1 for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32 child index
    right: np.ndarray      # int32 child index
    value: np.ndarray      # float64 leaf gel fraction
    count: np.ndarray      # int64 training samples at leaf

    def leaf_for(self, v: np.ndarray) -> int:
        node = 0
        while self.feature[node] >= 0:
            if v[self.feature[node]] <= self.threshold[node]:
                node = int(self.left[node])
            else:
                node = int(self.right[node])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        nodes = np.zeros(X.shape[0], dtype=np.int32)
        active = self.feature[nodes] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = nodes[idx]
            goes_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            nodes[idx] = np.where(goes_left, self.left[cur], self.right[cur])
            active = self.feature[nodes] >= 0
        return self.value[nodes]


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    seed: int
    schema: int = FEATURE_COUNT

    @property
    def tree_count(self) -> int:
        return len(self.trees)


@dataclass
class _TreeBuilder:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    count: list[int] = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.count.append(0)
        return len(self.feature) - 1

    def build(self) -> DecisionTree:
        return DecisionTree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
            count=np.asarray(self.count, dtype=np.int64),
        )


def _best_split(
    X: np.ndarray, y: np.ndarray, idx: np.ndarray, feature_order: np.ndarray,
    n_sampled: int,
) -> tuple[int, float] | None:
    """Lowest weighted-Gini split over the sampled features.

    Walks `feature_order` until `n_sampled` splittable features have been
    evaluated; features that are constant on this node do not count against
    the sample, so a split is found whenever one exists at all. Ties break
    toward the lowest feature index, then the lowest threshold. Returns None
    only when every feature is constant.
    """
    n = idx.size
    total_pos = int(y[idx].sum())
    best: tuple[float, int, float] | None = None
    evaluated = 0
    for f in feature_order:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        cut = np.nonzero(sv[:-1] < sv[1:])[0]
        if cut.size == 0:
            continue
        evaluated += 1
        cum_pos = np.cumsum(y[idx][order])
        n_left = cut + 1
        pos_left = cum_pos[cut]
        n_right = n - n_left
        pos_right = total_pos - pos_left
        # Weighted Gini, dropping the constant 2/n factor.
        score = (
            pos_left * (n_left - pos_left) / n_left
            + pos_right * (n_right - pos_right) / n_right
        )
        k = int(np.argmin(score))
        thr = (float(sv[cut[k]]) + float(sv[cut[k] + 1])) / 2.0
        candidate = (float(score[k]), int(f), thr)
        if best is None or candidate < best:
            best = candidate
        if evaluated >= n_sampled:
            break
    if best is None:
        return None
    return best[1], best[2]


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> DecisionTree:
    n_features = X.shape[1]
    n_sampled = math.isqrt(n_features)
    if n_sampled * n_sampled < n_features:
        n_sampled += 1

    builder = _TreeBuilder()
    root = builder.add_node()
    stack: list[tuple[int, np.ndarray]] = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        pos = int(y[idx].sum())
        builder.count[node] = idx.size
        builder.value[node] = pos / idx.size
        if pos == 0 or pos == idx.size:
            continue
        split = _best_split(X, y, idx, rng.permutation(n_features), n_sampled)
        if split is None:
            continue
        f, thr = split
        goes_left = X[idx, f] <= thr
        left = builder.add_node()
        right = builder.add_node()
        builder.feature[node] = f
        builder.threshold[node] = thr
        builder.left[node] = left
        builder.right[node] = right
        stack.append((right, idx[~goes_left]))
        stack.append((left, idx[goes_left]))
    return builder.build()


def train(
    data: list[LabeledExample],
    tree_count: int = DEFAULT_TREE_COUNT,
    seed: int = 0,
) -> ForestModel:
    """Fit the forest; reproducible for a fixed (data, tree_count, seed)."""
    if not data:
        raise SingleClassData("no training data")
    X = np.asarray([ex.features for ex in data], dtype=np.float64)
    y = np.asarray([ex.label for ex in data], dtype=np.int64)
    if X.shape[1] != FEATURE_COUNT:
        raise SchemaMismatch(f"expected {FEATURE_COUNT} features, got {X.shape[1]}")
    if y.min() == y.max():
        raise SingleClassData("training data has a single class")
    trees = []
    for t in range(tree_count):
        rng = np.random.default_rng([seed, t])
        bootstrap = rng.integers(0, X.shape[0], size=X.shape[0])
        trees.append(_grow_tree(X[bootstrap], y[bootstrap], rng))
    return ForestModel(trees=trees, seed=seed)


def score_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.schema:
        raise SchemaMismatch(f"expected (*, {model.schema}) vectors, got {X.shape}")
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += tree.predict(X)
    return total / model.tree_count


def score(model: ForestModel, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.schema,):
        raise SchemaMismatch(f"expected {model.schema} features, got {v.shape}")
    return float(score_batch(model, v[None, :])[0])


def classify(model: ForestModel, v: np.ndarray, op: OperatingPoint) -> bool:
    return score(model, v) >= op.threshold


def save_model(model: ForestModel, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema": model.schema,
        "seed": model.seed,
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "value": tree.value.tolist(),
                "count": tree.count.tolist(),
            }
            for tree in model.trees
        ],
    }
    data = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    Path(path).write_bytes(data.encode("utf-8"))


def load_model(path: str | Path) -> ForestModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"not a model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError("missing or wrong format marker")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version: {doc.get('version')!r}")
    try:
        trees = [
            DecisionTree(
                feature=np.asarray(t["feature"], dtype=np.int32),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int32),
                right=np.asarray(t["right"], dtype=np.int32),
                value=np.asarray(t["value"], dtype=np.float64),
                count=np.asarray(t["count"], dtype=np.int64),
            )
            for t in doc["trees"]
        ]
        model = ForestModel(trees=trees, seed=int(doc["seed"]), schema=int(doc["schema"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    if model.tree_count < 1:
        raise FormatError("model has no trees")
    return model
