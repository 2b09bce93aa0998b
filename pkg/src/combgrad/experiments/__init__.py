"""Desk-scale training experiments: bag learning with the matching loss and
noisy-copy sequence learning with the alignment loss, plus their supervised
baselines."""

from .common import MetricsRow, TrainConfig, load_metrics, write_metrics
from .bags import BagBatch, BagDatasetSpec, gen_bag_dataset, make_bags, train_bags
from .seq import SeqTaskSpec, gen_seq_dataset, train_seq

__all__ = [
    "MetricsRow",
    "TrainConfig",
    "write_metrics",
    "load_metrics",
    "BagDatasetSpec",
    "BagBatch",
    "gen_bag_dataset",
    "make_bags",
    "train_bags",
    "SeqTaskSpec",
    "gen_seq_dataset",
    "train_seq",
]
