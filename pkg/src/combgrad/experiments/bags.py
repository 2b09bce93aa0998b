"""Weakly-supervised bag learning on synthetic Gaussian clusters.

Each training bag presents b feature vectors together with the multiset of
their labels in a hidden random order; the model never sees which label
belongs to which sample.  Training minimizes the optimal-matching loss
between predicted row log-probabilities and the bag's label rows.  With
b = 1 the loss reduces to plain cross-entropy, which doubles as the
supervised baseline.  Evaluation always uses per-sample true labels — the
evaluation path takes no permutation input at all.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .. import tape
from ..assignment import filter_bag, matching_loss
from ..errors import CombgradError, NonFinite, TrainAborted
from .common import MetricsRow, TrainConfig

_HIDDEN = 64


@dataclass(frozen=True)
class BagDatasetSpec:
    """Synthetic classification data: one spherical Gaussian per class."""

    num_classes: int = 10
    n: int = 5000
    feature_dim: int = 10
    separation: float = 1.5
    seed: int = 1729

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n < self.num_classes:
            raise ValueError("need at least one sample per class")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")


@dataclass(frozen=True)
class BagDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    means: np.ndarray


def gen_bag_dataset(spec: BagDatasetSpec) -> BagDataset:
    """Seeded Gaussian clusters with balanced labels and an 80/20 split.

    Class means are drawn as separation * N(0, I); samples add unit noise.
    Test labels stay with their samples so per-sample accuracy is always
    computable.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, n, dim = spec.num_classes, spec.n, spec.feature_dim
    means = spec.separation * rng.standard_normal((d, dim))
    reps = -(-n // d)
    labels = np.tile(np.arange(d), reps)[:n]
    rng.shuffle(labels)
    x = means[labels] + rng.standard_normal((n, dim))
    cut = int(round(0.8 * n))
    return BagDataset(
        x_train=x[:cut],
        y_train=labels[:cut],
        x_test=x[cut:],
        y_test=labels[cut:],
        means=means,
    )


@dataclass(frozen=True)
class BagBatch:
    """One bag: features, label rows in a hidden random order, and (for
    analysis only) the permutation that scrambled them."""

    X: np.ndarray
    Y: np.ndarray
    hidden_sigma: np.ndarray


def make_bags(
    x: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    bag_size: int,
    threshold: float,
    seed,
) -> List[BagBatch]:
    """Shuffle the samples, cut them into bags of bag_size, drop the
    remainder, keep only bags meeting the distinct-class threshold, and
    scramble each kept bag's label rows by a hidden permutation."""
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    order = rng.permutation(n)
    bags: List[BagBatch] = []
    eye = np.eye(num_classes)
    for start in range(0, n - bag_size + 1, bag_size):
        idx = order[start : start + bag_size]
        Y0 = eye[y[idx]]
        if not filter_bag(Y0, threshold):
            continue
        sigma = rng.permutation(bag_size)
        bags.append(BagBatch(X=x[idx], Y=Y0[sigma], hidden_sigma=sigma))
    return bags


def _init_store(config: TrainConfig, feature_dim: int, num_classes: int) -> tape.ParamStore:
    rng = np.random.default_rng(config.seed)
    store = tape.ParamStore(seed=config.seed)
    store.add("W1", rng.standard_normal((feature_dim, _HIDDEN)) / np.sqrt(feature_dim))
    store.add("b1", np.zeros(_HIDDEN))
    store.add("W2", rng.standard_normal((_HIDDEN, num_classes)) / np.sqrt(_HIDDEN))
    store.add("b2", np.zeros(num_classes))
    return store


def _forward(store: tape.ParamStore, x: np.ndarray) -> tape.Tensor:
    h = tape.tanh(tape.add(tape.matmul(tape.Tensor(x), store.params["W1"]), store.params["b1"]))
    return tape.log_softmax(tape.add(tape.matmul(h, store.params["W2"]), store.params["b2"]))


def eval_accuracy(store: tape.ParamStore, x: np.ndarray, y: np.ndarray) -> float:
    """Per-sample test accuracy from a plain numpy forward pass."""
    h = np.tanh(x @ store.params["W1"].value + store.params["b1"].value)
    logits = h @ store.params["W2"].value + store.params["b2"].value
    return float(np.mean(logits.argmax(axis=1) == y))


def train_bags(
    config: TrainConfig,
    spec: Optional[BagDatasetSpec] = None,
) -> Tuple[List[MetricsRow], tape.ParamStore]:
    """Run the bag experiment; returns (metrics rows, trained parameters).

    loss='matching' trains on bags; loss='mle' trains on the same streamed
    batches with the true per-sample labels (the supervised baseline with
    identical randomness).  Raises TrainAborted — carrying the rows logged
    so far — if a solve or an update produces non-finite numbers.
    """
    config.validate()
    if config.loss == "gsa":
        raise ValueError("the alignment loss does not apply to the bag task")
    if spec is None:
        spec = BagDatasetSpec(seed=config.seed)
    data = gen_bag_dataset(spec)
    store = _init_store(config, spec.feature_dim, spec.num_classes)
    b = config.bag_size
    bags_per_step = max(1, config.batch_size // b)
    rows: List[MetricsRow] = []
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            bags = make_bags(
                data.x_train,
                data.y_train,
                spec.num_classes,
                b,
                config.threshold,
                [config.seed, 7919, epoch],
            )
            loss_sum = 0.0
            seen = 0
            for start in range(0, len(bags), bags_per_step):
                group = bags[start : start + bags_per_step]
                X = np.concatenate([bag.X for bag in group])
                n_union = X.shape[0]
                store.zero_grad()
                logp = _forward(store, X)
                if config.loss == "matching":
                    total = 0.0
                    G = np.zeros_like(logp.value)
                    for j, bag in enumerate(group):
                        sl = slice(j * b, (j + 1) * b)
                        z, g = matching_loss(logp.value[sl], bag.Y)
                        total += z
                        G[sl] = g
                    value = total / n_union
                    loss = tape.custom_node(
                        [logp], value, [lambda up, G=G, n=n_union: up * G / n]
                    )
                else:
                    labels = np.concatenate(
                        [bag.Y[np.argsort(bag.hidden_sigma)].argmax(axis=1) for bag in group]
                    )
                    loss = tape.nll(logp, labels, reduction="mean")
                if not np.isfinite(loss.value):
                    raise NonFinite("training loss became non-finite")
                loss.backward()
                tape.adam_step(store, lr=config.lr)
                loss_sum += float(loss.value) * n_union
                seen += n_union
            acc = eval_accuracy(store, data.x_test, data.y_test)
            rows.append(
                MetricsRow(
                    epoch=epoch,
                    train_loss=loss_sum / max(seen, 1),
                    metrics={("test", "accuracy"): acc},
                    seconds=time.perf_counter() - t0,
                )
            )
    except CombgradError as exc:
        raise TrainAborted(f"bag training aborted at epoch {len(rows) + 1}: {exc}", rows=rows) from exc
    return rows, store
