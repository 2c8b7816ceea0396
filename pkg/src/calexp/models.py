"""Scoring classifiers: entropy trees, bagged forests and an external line-protocol scorer."""

from __future__ import annotations

import json
import logging
import queue
import shlex
import socket
import subprocess
import threading
import warnings
from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

from .data import Dataset, FeatureSchema

__all__ = [
    "ScoringModel",
    "TreeModel",
    "ForestModel",
    "ExternalScorer",
    "ScorerError",
    "train_tree",
    "train_forest",
    "score",
    "predict",
    "external_score_batch",
    "model_from_dict",
]

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


class ScoringModel(ABC):
    """Anything producing a score in [0, 1] read as belief in class 1."""

    kind: str = "model"
    trained_on: int = 0
    decision_threshold: float = DEFAULT_THRESHOLD
    schema: FeatureSchema | None = None

    @abstractmethod
    def score_batch(self, X) -> np.ndarray:
        """Scores for the rows of ``X``."""

    def score(self, x) -> float:
        return float(self.score_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def predict_batch(self, X) -> np.ndarray:
        return (self.score_batch(X) > self.decision_threshold).astype(np.int64)

    def predict(self, x) -> int:
        return int(self.score(x) > self.decision_threshold)

    @property
    def metadata(self) -> dict:
        return {"kind": self.kind, "trained_on": self.trained_on}

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.schema is not None:
            self.schema.validate_rows(X)
        return X


def score(model: ScoringModel, instance) -> float:
    return model.score(instance)


def predict(model: ScoringModel, instance) -> int:
    """1 iff the score strictly exceeds the model's decision threshold."""
    return model.predict(instance)


def _entropy(pos, n):
    # binary entropy in bits of pos/n, elementwise; 0 log 0 = 0
    p = np.divide(pos, n, out=np.zeros_like(pos, dtype=float), where=n > 0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return h


def _best_numeric_split(x, y, min_leaf):
    """Best entropy split of one numeric column. Returns (gain, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.size
    left_n = np.arange(1, n)
    valid = (xs[:-1] < xs[1:]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
    if not np.any(valid):
        return None
    cum = np.cumsum(ys)[:-1]
    total = cum[-1] + ys[-1]
    child = (left_n * _entropy(cum, left_n) + (n - left_n) * _entropy(total - cum, n - left_n)) / n
    child = np.where(valid, child, np.inf)
    i = int(np.argmin(child))
    thr = 0.5 * (xs[i] + xs[i + 1])
    if thr >= xs[i + 1]:
        thr = xs[i]
    return _entropy(np.array([total]), np.array([n]))[0] - child[i], float(thr)


def _best_categorical_split(x, y, min_leaf):
    """Best two-way grouping of categories.

    For a binary target, ordering categories by positive rate and cutting that
    order contains the optimal entropy partition, so only ``k - 1`` cuts are
    scanned. Returns (gain, left categories) or None.
    """
    cats, inverse = np.unique(x, return_inverse=True)
    if cats.size < 2:
        return None
    cnt = np.bincount(inverse)
    pos = np.bincount(inverse, weights=y)
    order = np.lexsort((cats, pos / cnt))
    cnt, pos, cats = cnt[order], pos[order], cats[order]
    n = x.size
    left_n = np.cumsum(cnt)[:-1]
    left_p = np.cumsum(pos)[:-1]
    valid = (left_n >= min_leaf) & (n - left_n >= min_leaf)
    if not np.any(valid):
        return None
    total = pos.sum()
    child = (left_n * _entropy(left_p, left_n) + (n - left_n) * _entropy(total - left_p, n - left_n)) / n
    child = np.where(valid, child, np.inf)
    i = int(np.argmin(child))
    gain = _entropy(np.array([total]), np.array([n]))[0] - child[i]
    return gain, frozenset(int(c) for c in cats[: i + 1])


class TreeModel(ScoringModel):
    """Binary decision tree with Laplace-smoothed leaf frequencies ``(pos + 1) / (count + 2)``.

    Nodes are stored as flat arrays; ``left[i] == -1`` marks a leaf. Numeric
    splits send ``value <= threshold`` left, categorical splits send the
    categories in ``categories[i]`` left.
    """

    kind = "tree"

    def __init__(self, schema, feature, threshold, categories, left, right, value,
                 max_depth=None, min_leaf=1, trained_on=0):
        self.schema = schema
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.categories = [None if c is None else frozenset(c) for c in categories]
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.trained_on = trained_on
        width = max([len(f.values) for f in schema if f.is_categorical] + [1])
        self._cat_mask = np.zeros((self.feature.size, width), dtype=bool)
        self._is_cat = np.zeros(self.feature.size, dtype=bool)
        for i, c in enumerate(self.categories):
            if c is not None:
                self._is_cat[i] = True
                self._cat_mask[i, sorted(c)] = True

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def depth(self) -> int:
        def walk(i):
            return 0 if self.left[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def _leaf_of(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.left[node] >= 0)
        while active.size:
            nd = node[active]
            vals = X[active, self.feature[nd]]
            codes = np.clip(vals, 0, self._cat_mask.shape[1] - 1).astype(np.int64)
            go_left = np.where(self._is_cat[nd], self._cat_mask[nd, codes], vals <= self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.left[node[active]] >= 0]
        return node

    def score_batch(self, X) -> np.ndarray:
        X = self._check(X)
        return self.value[self._leaf_of(X)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "categories": [None if c is None else sorted(c) for c in self.categories],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "trained_on": self.trained_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(FeatureSchema.from_dict(d["schema"]), d["feature"], d["threshold"], d["categories"],
                   d["left"], d["right"], d["value"], d.get("max_depth"), d.get("min_leaf", 1),
                   d.get("trained_on", 0))


def _grow(X, y, schema, max_depth, min_leaf, max_features, rng):
    cat_mask = schema.categorical_mask
    n_features = X.shape[1]
    feature, threshold, categories, left, right, value = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        categories.append(None)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    # explicit stack keeps deep trees clear of the recursion limit
    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        pos = float(yy.sum())
        value[node] = (pos + 1.0) / (idx.size + 2.0)
        if (max_depth is not None and depth >= max_depth) or pos == 0 or pos == idx.size \
                or idx.size < 2 * min_leaf:
            continue
        if max_features is None or max_features >= n_features:
            candidates = range(n_features)
        else:
            candidates = np.sort(rng.choice(n_features, size=max_features, replace=False))
        best = None
        for f in candidates:
            col = X[idx, f]
            found = (_best_categorical_split if cat_mask[f] else _best_numeric_split)(col, yy, min_leaf)
            if found is not None and (best is None or found[0] > best[0] + 1e-12):
                best = (found[0], int(f), found[1])
        if best is None:
            continue
        _, f, rule = best
        col = X[idx, f]
        if cat_mask[f]:
            go_left = np.isin(col, list(rule))
            categories[node] = rule
        else:
            go_left = col <= rule
            threshold[node] = rule
        feature[node] = f
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    # leaves keep feature -1; point them at column 0 so vectorised lookups stay in range
    feature = [max(f, 0) for f in feature]
    return feature, threshold, categories, left, right, value


def train_tree(data: Dataset, max_depth: int | None = None, min_leaf: int = 1, seed: int = 0,
               max_features: int | None = None) -> TreeModel:
    """Greedy information-gain tree.

    Nodes split while impure, the depth limit allows, and some split leaves
    ``min_leaf`` instances on each side. Zero-gain splits are allowed (an
    XOR pattern needs one at the root). Ties go to the lower feature index and
    then the smaller threshold. ``seed`` only matters when ``max_features``
    subsamples the candidate features at each node.
    """
    if data.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    rng = np.random.default_rng(seed)
    parts = _grow(data.X, data.y.astype(float), data.schema, max_depth, min_leaf, max_features, rng)
    return TreeModel(data.schema, *parts, max_depth=max_depth, min_leaf=min_leaf, trained_on=data.n)


class ForestModel(ScoringModel):
    """Bagged trees; the score is the mean of the tree scores."""

    kind = "forest"

    def __init__(self, trees: Sequence[TreeModel], seeds: Sequence[int], max_features=None,
                 bootstrap=True, trained_on=0):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)
        self.seeds = list(seeds)
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.trained_on = trained_on
        self.schema = self.trees[0].schema

    def score_batch(self, X) -> np.ndarray:
        X = self._check(X)
        return np.mean([t.value[t._leaf_of(X)] for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seeds": self.seeds,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "trained_on": self.trained_on,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([TreeModel.from_dict(t) for t in d["trees"]], d["seeds"], d.get("max_features"),
                   d.get("bootstrap", True), d.get("trained_on", 0))


def train_forest(data: Dataset, n_trees: int = 100, seed: int = 0, *, max_depth: int | None = None,
                 min_leaf: int = 1, max_features="sqrt", bootstrap: bool = True) -> ForestModel:
    """Bagged entropy trees with per-tree seeds spawned from ``seed``.

    ``max_features`` is an int, ``"sqrt"`` or None (all features).
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if max_features == "sqrt":
        max_features = max(1, int(np.sqrt(data.n_features)))
    children = np.random.SeedSequence(seed).spawn(n_trees)
    seeds = [int(c.generate_state(1)[0]) for c in children]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        sample = data
        if bootstrap:
            idx = rng.integers(0, data.n, data.n)
            sample = data.subset(idx)
        trees.append(train_tree(sample, max_depth, min_leaf, int(rng.integers(2**63)), max_features))
    for t in trees:
        t.trained_on = data.n
    return ForestModel(trees, seeds, max_features, bootstrap, data.n)


def model_from_dict(d: dict) -> ScoringModel:
    if d.get("kind") == "tree":
        return TreeModel.from_dict(d)
    if d.get("kind") == "forest":
        return ForestModel.from_dict(d)
    raise ValueError(f"unknown model kind {d.get('kind')!r}")


class ScorerError(RuntimeError):
    """Failure talking to an external scorer; ``request_id`` names the offending request."""

    def __init__(self, message, request_id=None):
        super().__init__(message if request_id is None else f"request {request_id}: {message}")
        self.request_id = request_id


class ExternalScorer(ScoringModel):
    """Scores instances through an external process speaking newline-delimited JSON.

    Each request is ``{"id": <uint>, "x": [...]}`` and each reply
    ``{"id": <uint>, "score": <real>}``. The transport is either a child
    process (``command``) or a TCP connection (``"tcp:host:port"``).
    Requests on one handle are serialized; open several handles for
    parallel batches.

    Parameters
    ----------
    target : str or list of str
        ``"tcp:host:port"``, a shell-style command string, or an argv list.
    timeout : float
        Seconds to wait for each reply line.
    """

    kind = "external"

    def __init__(self, target, timeout: float = 30.0, schema: FeatureSchema | None = None):
        self.target = target
        self.timeout = timeout
        self.schema = schema
        self._next_id = 0
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        self._proc = None
        self._sock = None
        if isinstance(target, str) and target.startswith("tcp:"):
            _, host, port = target.split(":", 2)
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
            self._sock.settimeout(None)
            self._wfile = self._sock.makefile("w", encoding="utf-8", newline="\n")
            rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
        else:
            argv = shlex.split(target) if isinstance(target, str) else list(target)
            self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          text=True, encoding="utf-8", bufsize=1)
            self._wfile = self._proc.stdin
            rfile = self._proc.stdout
        self._reader = threading.Thread(target=self._pump, args=(rfile,), daemon=True)
        self._reader.start()

    def _pump(self, rfile):
        try:
            for line in rfile:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def score_batch(self, X) -> np.ndarray:
        X = self._check(X)
        return np.asarray(self._exchange(X.tolist()), dtype=float)

    def _exchange(self, rows: list) -> list[float]:
        with self._lock:
            ids = list(range(self._next_id, self._next_id + len(rows)))
            self._next_id += len(rows)
            try:
                for i, row in zip(ids, rows):
                    self._wfile.write(json.dumps({"id": i, "x": row}, separators=(",", ":")) + "\n")
                self._wfile.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ScorerError(f"cannot send request: {exc}", ids[0] if ids else None) from exc
            pending = set(ids)
            scores: dict[int, float] = {}
            while pending:
                waiting = min(pending)
                try:
                    line = self._lines.get(timeout=self.timeout)
                except queue.Empty:
                    raise ScorerError(f"timed out after {self.timeout}s", waiting) from None
                if line is None:
                    raise ScorerError("scorer closed the connection", waiting)
                try:
                    msg = json.loads(line)
                    rid = msg["id"]
                    value = float(msg["score"])
                except (ValueError, KeyError, TypeError):
                    raise ScorerError(f"malformed response line {line.strip()!r}", waiting) from None
                if rid not in pending:
                    raise ScorerError(f"response id {rid!r} matches no pending request", rid)
                if not np.isfinite(value):
                    raise ScorerError(f"non-finite score {value!r}", rid)
                if value < 0.0 or value > 1.0:
                    warnings.warn(f"request {rid}: score {value} outside [0, 1]; clipped", RuntimeWarning)
                    value = min(max(value, 0.0), 1.0)
                scores[rid] = value
                pending.discard(rid)
            return [scores[i] for i in ids]

    def close(self):
        try:
            self._wfile.close()
        except OSError:
            pass
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_score_batch(endpoint: ExternalScorer, instances) -> list[float]:
    """One score per instance, in request order."""
    return endpoint._exchange(np.asarray(instances, dtype=float).tolist())
