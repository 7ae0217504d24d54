"""From-scratch MLP and random forest classifiers with class-score outputs.

Both trainers are bit-deterministic given (data, config, seed). The MLP
is a single sigmoid hidden layer trained sample-by-sample with momentum
SGD on a mean-squared-error loss against one-hot targets. The forest
grows entropy-split trees to purity on bootstrap samples whose size is a
percentage of the training set; prediction is a majority vote with the
per-class vote fractions exposed as scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, TrainingDiverged
from .select import ClassLabel

N_CLASSES = 3

try:
    from numba import njit as _njit

    def _maybe_jit(fn):
        return _njit(cache=True)(fn)
except ImportError:  # pragma: no cover - numba is a declared dependency
    def _maybe_jit(fn):
        return fn


# ---------------------------------------------------------------------------
# Multi-layer perceptron


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_nodes: int = 50
    output_dim: int = N_CLASSES
    learning_rate: float = 0.3
    momentum: float = 0.2
    epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_nodes", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate: must be > 0")
        if self.momentum < 0:
            raise ConfigError("momentum: must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs: must be >= 1")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sgd_epochs_impl(w1, b1, w2, b2, X, T, order, lr, momentum, epoch_loss):
    """Per-sample momentum SGD; mutates weights in place.

    order is (epochs, n) visit order; epoch_loss receives the mean of the
    per-sample squared-error losses measured before each update.
    """
    n_in = w1.shape[0]
    n_hid = w1.shape[1]
    n_out = w2.shape[1]
    n = X.shape[0]
    vw1 = np.zeros_like(w1)
    vb1 = np.zeros_like(b1)
    vw2 = np.zeros_like(w2)
    vb2 = np.zeros_like(b2)
    h = np.empty(n_hid)
    o = np.empty(n_out)
    do = np.empty(n_out)
    dh = np.empty(n_hid)
    for epoch in range(order.shape[0]):
        total = 0.0
        for pos in range(n):
            i = order[epoch, pos]
            # forward
            for j in range(n_hid):
                z = b1[j]
                for k in range(n_in):
                    z += X[i, k] * w1[k, j]
                h[j] = 1.0 / (1.0 + np.exp(-z))
            for j in range(n_out):
                z = b2[j]
                for k in range(n_hid):
                    z += h[k] * w2[k, j]
                o[j] = 1.0 / (1.0 + np.exp(-z))
            # squared-error loss and output delta
            loss = 0.0
            for j in range(n_out):
                err = o[j] - T[i, j]
                loss += 0.5 * err * err
                do[j] = err * o[j] * (1.0 - o[j])
            total += loss
            # hidden delta
            for j in range(n_hid):
                s = 0.0
                for k in range(n_out):
                    s += do[k] * w2[j, k]
                dh[j] = s * h[j] * (1.0 - h[j])
            # momentum updates
            for j in range(n_hid):
                for k in range(n_out):
                    vw2[j, k] = momentum * vw2[j, k] - lr * h[j] * do[k]
                    w2[j, k] += vw2[j, k]
            for k in range(n_out):
                vb2[k] = momentum * vb2[k] - lr * do[k]
                b2[k] += vb2[k]
            for j in range(n_in):
                for k in range(n_hid):
                    vw1[j, k] = momentum * vw1[j, k] - lr * X[i, j] * dh[k]
                    w1[j, k] += vw1[j, k]
            for k in range(n_hid):
                vb1[k] = momentum * vb1[k] - lr * dh[k]
                b1[k] += vb1[k]
        epoch_loss[epoch] = total / n


_sgd_epochs = _maybe_jit(_sgd_epochs_impl)


@dataclass
class MlpModel:
    kind = "mlp"
    config: MlpConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    final_loss: float = float("nan")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Output-layer activations, one row per input row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        h = _sigmoid(X @ self.w1 + self.b1)
        return _sigmoid(h @ self.w2 + self.b2)


def mlp_loss_and_gradients(w1, b1, w2, b2, X, T):
    """Batch-mean squared-error loss and its analytic gradients.

    Shares the per-sample trainer's math; exists so the backpropagation
    formulas can be checked against finite differences.
    """
    n = X.shape[0]
    h = _sigmoid(X @ w1 + b1)
    o = _sigmoid(h @ w2 + b2)
    err = o - T
    loss = 0.5 * float(np.sum(err * err)) / n
    do = err * o * (1.0 - o) / n
    gw2 = h.T @ do
    gb2 = do.sum(axis=0)
    dh = (do @ w2.T) * h * (1.0 - h)
    gw1 = X.T @ dh
    gb1 = dh.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2)


def train_mlp(X: np.ndarray, y: np.ndarray, config: MlpConfig) -> MlpModel:
    """Train the perceptron; deterministic under config.seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("X must be a nonempty 2-D matrix")
    if X.shape[1] != config.input_dim:
        raise ConfigError(
            f"input_dim {config.input_dim} does not match X with "
            f"{X.shape[1]} columns"
        )
    if y.shape[0] != X.shape[0]:
        raise DataError("X and y disagree on row count")
    if np.unique(y).size < 2:
        raise DataError("labels must cover at least 2 classes")
    if y.min() < 0 or y.max() >= config.output_dim:
        raise DataError("label outside [0, output_dim)")

    rng = np.random.default_rng(config.seed)
    w1 = rng.uniform(-0.5, 0.5, (config.input_dim, config.hidden_nodes))
    b1 = rng.uniform(-0.5, 0.5, config.hidden_nodes)
    w2 = rng.uniform(-0.5, 0.5, (config.hidden_nodes, config.output_dim))
    b2 = rng.uniform(-0.5, 0.5, config.output_dim)

    T = np.zeros((X.shape[0], config.output_dim))
    T[np.arange(X.shape[0]), y] = 1.0

    order = np.empty((config.epochs, X.shape[0]), dtype=np.int64)
    for e in range(config.epochs):
        order[e] = rng.permutation(X.shape[0])

    epoch_loss = np.empty(config.epochs)
    _sgd_epochs(w1, b1, w2, b2, X, T, order,
                float(config.learning_rate), float(config.momentum), epoch_loss)

    bad = np.flatnonzero(~np.isfinite(epoch_loss))
    if bad.size:
        raise TrainingDiverged(int(bad[0]))
    return MlpModel(config=config, w1=w1, b1=b1, w2=w2, b2=b2,
                    final_loss=float(epoch_loss[-1]))


# ---------------------------------------------------------------------------
# Random forest


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 100
    bag_percent: float = 100.0
    max_depth: int | None = None          # None = unlimited
    features_per_split: int | None = None  # None = floor(log2(m)) + 1
    batch_size: int = 50                   # recorded; no effect on training
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees: must be >= 1")
        if not 0 < self.bag_percent <= 100:
            raise ConfigError("bag_percent: must be in (0, 100]")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth: must be >= 1 or None")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError("features_per_split: must be >= 1 or None")


def default_features_per_split(n_features: int) -> int:
    return int(np.floor(np.log2(n_features))) + 1


@dataclass
class _Tree:
    feature: np.ndarray    # int32, -1 marks a leaf
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    leaf_class: np.ndarray  # int32, -1 for internal nodes
    oob_indices: np.ndarray | None = None  # training rows outside the bag


def _entropy_of_counts(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def _best_split(X, y, idx, candidates):
    """Best (feature, threshold, weighted child entropy) over candidates."""
    n = idx.size
    best = (None, 0.0, np.inf)
    onehot = np.zeros((n, N_CLASSES))
    onehot[np.arange(n), y[idx]] = 1.0
    for f in candidates:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        cum = np.cumsum(onehot[order], axis=0)
        boundaries = np.flatnonzero(sv[1:] > sv[:-1]) + 1
        if boundaries.size == 0:
            continue
        total = cum[-1]
        left = cum[boundaries - 1]
        right = total - left
        ln = boundaries.astype(np.float64)
        rn = n - ln
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = left / ln[:, None]
            rp = right / rn[:, None]
            hl = -np.nansum(np.where(lp > 0, lp * np.log2(lp), 0.0), axis=1)
            hr = -np.nansum(np.where(rp > 0, rp * np.log2(rp), 0.0), axis=1)
        weighted = (ln * hl + rn * hr) / n
        s = int(np.argmin(weighted))
        if weighted[s] < best[2]:
            a, b = sv[boundaries[s] - 1], sv[boundaries[s]]
            thr = a + (b - a) / 2.0
            if thr >= b:  # midpoint rounded onto the upper value
                thr = a
            best = (int(f), float(thr), float(weighted[s]))
    return best


def _grow_tree(X, y, bag_idx, mtry, rng, max_depth) -> _Tree:
    feature, threshold, left, right, leaf_class = [], [], [], [], []
    m = X.shape[1]

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_class.append(-1)
        return len(feature) - 1

    root = new_node()
    stack = [(root, bag_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=N_CLASSES)
        majority = int(np.argmax(counts))
        pure = counts.max() == idx.size
        if pure or (max_depth is not None and depth >= max_depth):
            leaf_class[node] = majority
            continue
        candidates = rng.choice(m, size=min(mtry, m), replace=False)
        f, thr, score = _best_split(X, y, idx, candidates)
        if f is None:
            leaf_class[node] = majority
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        if li.size == 0 or ri.size == 0:
            leaf_class[node] = majority
            continue
        feature[node] = f
        threshold[node] = thr
        lnode, rnode = new_node(), new_node()
        left[node] = lnode
        right[node] = rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))

    return _Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        leaf_class=np.array(leaf_class, dtype=np.int32),
    )


def _tree_votes(tree: _Tree, X: np.ndarray) -> np.ndarray:
    """Class vote of one tree for every row (level-wise descent)."""
    n = X.shape[0]
    nodes = np.zeros(n, dtype=np.int64)
    active = tree.feature[nodes] >= 0
    while active.any():
        cur = nodes[active]
        f = tree.feature[cur]
        go_left = X[np.flatnonzero(active), f] <= tree.threshold[cur]
        nxt = np.where(go_left, tree.left[cur], tree.right[cur])
        nodes[active] = nxt
        active = tree.feature[nodes] >= 0
    return tree.leaf_class[nodes].astype(np.int64)


@dataclass
class RfModel:
    kind = "rf"
    config: RfConfig
    trees: list[_Tree] = field(default_factory=list)
    n_features: int = 0

    @property
    def input_dim(self) -> int:
        return self.n_features

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Per-class vote fractions, one row per input row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros((X.shape[0], N_CLASSES))
        for tree in self.trees:
            v = _tree_votes(tree, X)
            votes[np.arange(X.shape[0]), v] += 1.0
        return votes / len(self.trees)


def train_rf(X: np.ndarray, y: np.ndarray, config: RfConfig) -> RfModel:
    """Grow the forest on bootstrap bags; deterministic under config.seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("X must be a nonempty 2-D matrix")
    if y.shape[0] != X.shape[0]:
        raise DataError("X and y disagree on row count")
    if np.unique(y).size < 2:
        raise DataError("labels must cover at least 2 classes")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise DataError(f"label outside [0, {N_CLASSES})")

    n, m = X.shape
    bag_size = int(np.ceil(config.bag_percent / 100.0 * n))
    if bag_size < 1:
        raise ConfigError("bag size < 1; raise bag_percent")
    mtry = config.features_per_split or default_features_per_split(m)

    trees = []
    for seq in np.random.SeedSequence(config.seed).spawn(config.n_trees):
        rng = np.random.default_rng(seq)
        bag = rng.integers(0, n, size=bag_size)
        tree = _grow_tree(X, y, bag, mtry, rng, config.max_depth)
        tree.oob_indices = np.setdiff1d(np.arange(n), bag)
        trees.append(tree)
    return RfModel(config=config, trees=trees, n_features=m)


def oob_accuracy(model: RfModel, X: np.ndarray, y: np.ndarray) -> float:
    """Out-of-bag accuracy over rows that have at least one OOB vote."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    votes = np.zeros((X.shape[0], N_CLASSES))
    for tree in model.trees:
        if tree.oob_indices is None or tree.oob_indices.size == 0:
            continue
        v = _tree_votes(tree, X[tree.oob_indices])
        votes[tree.oob_indices, v] += 1.0
    voted = votes.sum(axis=1) > 0
    if not voted.any():
        raise DataError("no out-of-bag rows; lower bag_percent or add trees")
    pred = votes[voted].argmax(axis=1)
    return float(np.mean(pred == y[voted]))


# ---------------------------------------------------------------------------
# Shared prediction and persistence


def predict_scores(model, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise DataError(
            f"input has {X.shape[1]} features, model expects {model.input_dim}"
        )
    return model.scores(X)


def predict_batch(model, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(labels, scores) for a batch; argmax ties go to the lower class."""
    scores = predict_scores(model, X)
    return scores.argmax(axis=1), scores


def predict(model, x: np.ndarray) -> tuple[ClassLabel, np.ndarray]:
    """Classify one sample; returns the label and the 3 class scores."""
    labels, scores = predict_batch(model, np.atleast_2d(x))
    return ClassLabel(int(labels[0])), scores[0]


def normalized_scores(scores: np.ndarray) -> np.ndarray:
    """Rescale score rows to sum to 1 (vote fractions already do)."""
    scores = np.atleast_2d(scores)
    return scores / scores.sum(axis=1, keepdims=True)


_MAGIC = b"EDAPIPE-MODEL\n"
_FORMAT_VERSION = 1


def _arrays_of(model) -> list[tuple[str, np.ndarray]]:
    if model.kind == "mlp":
        return [("w1", model.w1), ("b1", model.b1),
                ("w2", model.w2), ("b2", model.b2)]
    offsets = np.zeros(len(model.trees) + 1, dtype=np.int64)
    for i, t in enumerate(model.trees):
        offsets[i + 1] = offsets[i] + t.feature.size
    return [
        ("tree_offsets", offsets),
        ("feature", np.concatenate([t.feature for t in model.trees])),
        ("threshold", np.concatenate([t.threshold for t in model.trees])),
        ("left", np.concatenate([t.left for t in model.trees])),
        ("right", np.concatenate([t.right for t in model.trees])),
        ("leaf_class", np.concatenate([t.leaf_class for t in model.trees])),
    ]


def save_model(model, path: str | Path) -> None:
    """Write the documented flat format: magic, JSON header, raw arrays."""
    arrays = _arrays_of(model)
    config = dict(model.config.__dict__)
    if model.kind == "mlp":
        config["final_loss"] = model.final_loss
    else:
        config["n_features"] = model.n_features
    header = {
        "format_version": _FORMAT_VERSION,
        "kind": model.kind,
        "config": config,
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode() + b"\n")
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_model(path: str | Path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"not a model file: {path}")
        header = json.loads(fh.readline().decode())
        if header.get("format_version") != _FORMAT_VERSION:
            raise DataError(
                f"unsupported model format version {header.get('format_version')}"
            )
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape)

    config = dict(header["config"])
    if header["kind"] == "mlp":
        final_loss = config.pop("final_loss")
        return MlpModel(config=MlpConfig(**config),
                        w1=arrays["w1"].copy(), b1=arrays["b1"].copy(),
                        w2=arrays["w2"].copy(), b2=arrays["b2"].copy(),
                        final_loss=final_loss)
    n_features = config.pop("n_features")
    offsets = arrays["tree_offsets"]
    trees = []
    for i in range(offsets.size - 1):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        trees.append(_Tree(
            feature=arrays["feature"][lo:hi].copy(),
            threshold=arrays["threshold"][lo:hi].copy(),
            left=arrays["left"][lo:hi].copy(),
            right=arrays["right"][lo:hi].copy(),
            leaf_class=arrays["leaf_class"][lo:hi].copy(),
        ))
    return RfModel(config=RfConfig(**config), trees=trees, n_features=n_features)
