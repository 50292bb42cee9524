"""Binary probabilistic classifiers: L2 logistic regression and gradient-boosted trees.

Both are deliberately small, deterministic implementations. The logistic model
exposes its coefficients so the simulators can tamper with single terms; the
boosted trees give the estimators a functional form that differs from the one
used to generate labels.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


class DivergenceError(TrainingError):
    pass


class UnsupportedOperation(TypeError):
    pass


def _check_training_data(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError(f"feature matrix {X.shape} does not match {len(y)} targets")
    if len(y) < 2:
        raise TrainingError("need at least 2 rows to train")
    if not np.all(np.isfinite(X)):
        raise TrainingError("features must be finite")
    classes = set(np.unique(y).tolist())
    if not classes <= {0.0, 1.0}:
        raise TrainingError(f"targets must be binary, got {sorted(classes)}")
    if len(classes) < 2:
        raise TrainingError("targets contain a single class")
    return X, y


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


# --------------------------------------------------------------------------
# logistic regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.1
    max_iter: int = 2000
    l2: float = 1e-4
    tol: float = 1e-8
    standardize: bool = True


def logistic_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean log-loss plus ``l2/2 * |w|^2`` and its gradient in (w, b)."""
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * float(w @ w)
    resid = expit(z) - y
    grad_w = X.T @ resid / len(y) + l2 * w
    grad_b = float(np.mean(resid))
    return float(loss), grad_w, grad_b


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    config: LogisticConfig = field(default_factory=LogisticConfig)
    loss_history: tuple[float, ...] = ()

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def coefficient(self, index: int) -> float:
        return float(self.weights[index])

    def to_dict(self) -> dict:
        return {
            "kind": "logistic",
            "version": FORMAT_VERSION,
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
            "config": asdict(self.config),
        }


def fit_logistic(X, y, config: LogisticConfig | None = None) -> LogisticModel:
    """Full-batch gradient descent from zero weights.

    A step that would increase the objective is rejected and the learning
    rate halved, so the accepted loss sequence is non-increasing.
    """
    config = config or LogisticConfig()
    X, y = _check_training_data(X, y)
    if config.standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        Z = (X - mu) / sd
    else:
        Z = X
    w = np.zeros(X.shape[1])
    b = 0.0
    lr = config.learning_rate
    loss, gw, gb = logistic_objective(w, b, Z, y, config.l2)
    history = [loss]
    for step in range(config.max_iter):
        while True:
            w_new = w - lr * gw
            b_new = b - lr * gb
            new_loss, new_gw, new_gb = logistic_objective(w_new, b_new, Z, y, config.l2)
            if not np.isfinite(new_loss):
                raise DivergenceError(f"non-finite loss at step {step}")
            if new_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        if new_loss > loss:
            break
        converged = loss - new_loss < config.tol
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        history.append(loss)
        if converged:
            break
    if config.standardize:
        b = b - float(w @ (mu / sd))
        w = w / sd
    return LogisticModel(weights=w, bias=float(b), config=config, loss_history=tuple(history))


def set_coefficient(model, index: int, value: float):
    if not isinstance(model, LogisticModel):
        raise UnsupportedOperation(f"{type(model).__name__} has no linear coefficients")
    if not 0 <= index < model.n_features:
        raise IndexError(f"coefficient index {index} out of range for {model.n_features} features")
    w = model.weights.copy()
    w[index] = value
    return replace(model, weights=w)


# --------------------------------------------------------------------------
# gradient-boosted trees
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoostedConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    reg_lambda: float = 1.0
    max_bins: int = 64


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree. Node 0 is the root; leaves have ``feature == -1``.

    Rows with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            rows = np.nonzero(internal)[0]
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            feature=np.array(d["feature"], dtype=int),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=int),
            right=np.array(d["right"], dtype=int),
            value=np.array(d["value"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class BoostedTreesModel:
    trees: tuple[Tree, ...]
    base_score: float
    n_features: int
    config: BoostedConfig = field(default_factory=BoostedConfig)

    def decision_function(self, X, n_trees: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        f = np.full(len(X), self.base_score)
        for tree in self.trees[:n_trees]:
            f += self.config.learning_rate * tree.predict(X)
        return f

    def predict_proba(self, X, n_trees: int | None = None) -> np.ndarray:
        return expit(self.decision_function(X, n_trees))

    def staged_log_loss(self, X, y) -> list[float]:
        """Training log-loss after 0, 1, ..., n_trees stages."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        f = np.full(len(X), self.base_score)
        out = [log_loss(y, expit(f))]
        for tree in self.trees:
            f = f + self.config.learning_rate * tree.predict(X)
            out.append(log_loss(y, expit(f)))
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "boosted",
            "version": FORMAT_VERSION,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "config": asdict(self.config),
            "trees": [t.to_dict() for t in self.trees],
        }


def _bin_edges(column: np.ndarray, max_bins: int) -> np.ndarray:
    uniq = np.unique(column)
    if len(uniq) <= max_bins:
        return uniq[:-1]
    qs = np.quantile(column, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
    return np.unique(qs)


def _grow_tree(codes, edges, resid, hess, config: BoostedConfig) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    def leaf_value(rows):
        return float(resid[rows].sum() / (hess[rows].sum() + config.reg_lambda))

    root = new_node()
    frontier = [(root, np.arange(len(resid)), 0)]
    while frontier:
        node, rows, depth = frontier.pop(0)
        value[node] = leaf_value(rows)
        n = len(rows)
        if depth >= config.max_depth or n < 2 * config.min_leaf:
            continue
        r = resid[rows]
        total = r.sum()
        parent_score = total * total / n
        best = None  # (gain, feature, bin)
        for j, e in enumerate(edges):
            if len(e) == 0:
                continue
            c = codes[rows, j]
            nb = len(e) + 1
            cnt = np.cumsum(np.bincount(c, minlength=nb))[:-1]
            s = np.cumsum(np.bincount(c, weights=r, minlength=nb))[:-1]
            ok = (cnt >= config.min_leaf) & (n - cnt >= config.min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = s * s / cnt + (total - s) ** 2 / (n - cnt) - parent_score
            gain = np.where(ok, gain, -np.inf)
            k = int(np.argmax(gain))  # first maximum: lowest threshold
            if best is None or gain[k] > best[0] + 1e-12:
                best = (float(gain[k]), j, k)
        if best is None or best[0] < -1e-12:
            continue
        _, j, k = best
        go_left = codes[rows, j] <= k
        feature[node] = j
        threshold[node] = float(edges[j][k])
        left[node] = new_node()
        right[node] = new_node()
        frontier.append((left[node], rows[go_left], depth + 1))
        frontier.append((right[node], rows[~go_left], depth + 1))

    return Tree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value, dtype=float),
    )


def fit_boosted_trees(X, y, config: BoostedConfig | None = None) -> BoostedTreesModel:
    """Gradient boosting on log-loss.

    Each stage fits a depth-capped regression tree to the negative gradient
    ``y - p`` (squared-error splits on quantile bins) and sets every leaf to a
    single Newton step ``sum(y - p) / (sum(p(1-p)) + lambda)``.
    """
    config = config or BoostedConfig()
    X, y = _check_training_data(X, y)
    prior = y.mean()
    base = float(np.log(prior / (1 - prior)))
    edges = [_bin_edges(X[:, j], config.max_bins) for j in range(X.shape[1])]
    codes = np.column_stack(
        [np.searchsorted(e, X[:, j], side="left") for j, e in enumerate(edges)]
    ) if X.shape[1] else np.zeros((len(X), 0), dtype=int)
    f = np.full(len(y), base)
    trees = []
    for _ in range(config.n_trees):
        p = expit(f)
        tree = _grow_tree(codes, edges, y - p, p * (1 - p), config)
        trees.append(tree)
        f = f + config.learning_rate * tree.predict(X)
    return BoostedTreesModel(tuple(trees), base, X.shape[1], config)


# --------------------------------------------------------------------------
# shared entry points
# --------------------------------------------------------------------------

LearnerConfig = Union[LogisticConfig, BoostedConfig]
ProbClassifier = Union[LogisticModel, BoostedTreesModel]


def fit_model(X, y, config: LearnerConfig) -> ProbClassifier:
    if isinstance(config, LogisticConfig):
        return fit_logistic(X, y, config)
    if isinstance(config, BoostedConfig):
        return fit_boosted_trees(X, y, config)
    raise TypeError(f"unknown learner config {config!r}")


def predict_proba(model: ProbClassifier, X) -> np.ndarray:
    return model.predict_proba(X)


def learner_from_dict(d: dict) -> LearnerConfig:
    """``{"family": "logistic" | "boosted", ...hyperparameters}``."""
    d = dict(d)
    family = d.pop("family", "boosted")
    if family == "logistic":
        return LogisticConfig(**d)
    if family == "boosted":
        return BoostedConfig(**d)
    raise ValueError(f"unknown learner family {family!r}")


def learner_to_dict(config: LearnerConfig) -> dict:
    family = "logistic" if isinstance(config, LogisticConfig) else "boosted"
    return {"family": family, **asdict(config)}


def model_from_dict(d: dict) -> ProbClassifier:
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')!r}")
    if d["kind"] == "logistic":
        return LogisticModel(
            weights=np.array(d["weights"], dtype=float),
            bias=float(d["bias"]),
            config=LogisticConfig(**d["config"]),
        )
    if d["kind"] == "boosted":
        return BoostedTreesModel(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            base_score=float(d["base_score"]),
            n_features=int(d["n_features"]),
            config=BoostedConfig(**d["config"]),
        )
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(model: ProbClassifier, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True))


def load_model(path: str | Path) -> ProbClassifier:
    return model_from_dict(json.loads(Path(path).read_text()))


def tune(X, y, family: str, grid: dict[str, Sequence], seed: int = 0, folds: int = 3) -> LearnerConfig:
    """Pick the grid point with the lowest stratified k-fold validation log-loss."""
    from .datamodel import stratified_folds

    X, y = _check_training_data(X, y)
    parts = stratified_folds(y.astype(int).tolist(), folds, np.random.default_rng(seed))
    names = sorted(grid)
    best_cfg, best_loss = None, np.inf
    for values in itertools.product(*(grid[n] for n in names)):
        cfg = learner_from_dict({"family": family, **dict(zip(names, values))})
        losses = []
        for k in range(folds):
            train = np.concatenate([parts[j] for j in range(folds) if j != k])
            model = fit_model(X[train], y[train], cfg)
            losses.append(log_loss(y[parts[k]], model.predict_proba(X[parts[k]])))
        mean = float(np.mean(losses))
        if mean < best_loss - 1e-12:
            best_cfg, best_loss = cfg, mean
    return best_cfg
