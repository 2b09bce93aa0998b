"""Shared experiment plumbing: the training configuration, the metrics row
format, and CSV/JSONL serialization.

Metrics are written long-form with the header `epoch,split,metric,value,seconds`
so that runs with different metric sets share one schema.  Values are
formatted with %.17g, which round-trips float64 exactly — repeated runs with
the same seed produce bitwise-identical files except for the seconds column.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Tuple

_LOSSES = ("mle", "matching", "gsa")
_FEEDS = ("softmax", "gumbel_st")


@dataclass(frozen=True)
class TrainConfig:
    """Knobs shared by both experiment harnesses.

    loss: 'mle' (position/label-supervised baseline), 'matching' (bag loss),
    or 'gsa' (alignment loss).  feed: how a sequence decoder consumes its own
    previous output.  threshold: minimum fraction of distinct classes a bag
    must contain to be used.
    """

    loss: str = "matching"
    feed: str = "softmax"
    bag_size: int = 1
    gamma: float = 1.5
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 1729
    threshold: float = 0.5

    def validate(self) -> None:
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}, got {self.loss!r}")
        if self.feed not in _FEEDS:
            raise ValueError(f"feed must be one of {_FEEDS}, got {self.feed!r}")
        if self.bag_size < 1:
            raise ValueError("bag_size must be at least 1")
        if self.loss == "gsa" and not self.gamma > 1.0:
            raise ValueError("the gap factor gamma must be > 1 for the alignment loss")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError("threshold must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsRow:
    """One epoch of logged training: the train loss, a dict of eval metrics
    keyed by (split, metric), and the wall-clock seconds the epoch took."""

    epoch: int
    train_loss: float
    metrics: Dict[Tuple[str, str], float] = field(default_factory=dict)
    seconds: float = 0.0


def write_metrics(rows: List[MetricsRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "split", "metric", "value", "seconds"])
        for r in rows:
            sec = "%.6f" % r.seconds
            w.writerow([r.epoch, "train", "loss", "%.17g" % r.train_loss, sec])
            for (split, metric), value in sorted(r.metrics.items()):
                w.writerow([r.epoch, split, metric, "%.17g" % value, sec])


def load_metrics(path: str) -> Dict[Tuple[int, str, str], float]:
    """Read a metrics CSV back as {(epoch, split, metric): value}."""
    out: Dict[Tuple[int, str, str], float] = {}
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            out[(int(rec["epoch"]), rec["split"], rec["metric"])] = float(rec["value"])
    return out


def save_jsonl(records: List[dict], path: str) -> None:
    """Line-delimited JSON, one record per line."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_jsonl(path: str) -> List[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
