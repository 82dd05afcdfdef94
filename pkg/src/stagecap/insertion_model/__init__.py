"""Insertion captioner and AR/NAIC baselines on a shared substrate."""

from .baseline import BaselineCaptioner
from .encoder import CaptionerConfig, StreamEncoder, causal_stream_mask
from .model import InsertionCaptioner, PairBatch
from .training import TrainConfig, bucket_pair_batches, train_baseline, train_insertion

__all__ = [
    "BaselineCaptioner",
    "CaptionerConfig",
    "InsertionCaptioner",
    "PairBatch",
    "StreamEncoder",
    "TrainConfig",
    "bucket_pair_batches",
    "causal_stream_mask",
    "train_baseline",
    "train_insertion",
]
