"""Training loops: shape-bucketed mini-batches over the shared optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..corpus.grammar import SceneInstance
from ..corpus.vocab import Vocabulary
from ..errors import DivergenceError, ShapeError
from ..numcore import Adam, Graph, LrSchedule
from ..seeding import derive_seed
from ..staging import StagePair
from .baseline import BaselineCaptioner
from .encoder import CaptionerConfig
from .model import InsertionCaptioner, PairBatch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 3e-3
    warmup_steps: int = 200
    decay_factor: float = 0.9
    decay_every: int = 0
    lambda_none: float = 1.0

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "warmup_steps": self.warmup_steps,
            "decay_factor": self.decay_factor,
            "decay_every": self.decay_every,
            "lambda_none": self.lambda_none,
        }


def bucket_pair_batches(
    model: InsertionCaptioner,
    pairs: Sequence[StagePair],
    features_by_scene: Mapping[str, np.ndarray],
    batch_size: int,
) -> list[PairBatch]:
    """Group pairs sharing (region count, framed length) into batches."""
    buckets: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]] = {}
    for pair in pairs:
        feats = features_by_scene.get(pair.scene_id)
        if feats is None:
            raise ShapeError(f"no features for scene {pair.scene_id!r}")
        ids, targets, none_mask = model.encode_pair(pair)
        buckets.setdefault((feats.shape[0], ids.size), []).append((feats, ids, targets, none_mask))
    batches = []
    for key in sorted(buckets):
        group = buckets[key]
        for start in range(0, len(group), batch_size):
            chunk = group[start : start + batch_size]
            batches.append(
                PairBatch(
                    features=np.stack([c[0] for c in chunk]),
                    token_ids=np.stack([c[1] for c in chunk]),
                    targets=np.concatenate([c[2] for c in chunk]),
                    none_mask=np.concatenate([c[3] for c in chunk]),
                )
            )
    return batches


def _run_epochs(batches, loss_of, parameters, config: TrainConfig, seed: int, tag: str) -> list[float]:
    """Shared optimizer loop; returns per-epoch mean losses."""
    schedule = LrSchedule(config.lr, config.warmup_steps, config.decay_factor, config.decay_every)
    optimizer = Adam(parameters, schedule)
    shuffle_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, tag, "shuffle")))
    dropout_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, tag, "dropout")))
    history = []
    step = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(batches))
        total, count = 0.0, 0
        for b in order:
            g = Graph(training=True, dropout_rng=dropout_rng)
            loss, weight = loss_of(g, batches[b])
            step += 1
            value = float(loss.value)
            if not np.isfinite(value):
                raise DivergenceError(f"{tag} training diverged at step {step}", step=step)
            optimizer.step(g.backward(loss))
            total += value * weight
            count += weight
        history.append(total / count)
    return history


def train_insertion(
    pairs: Sequence[StagePair],
    features_by_scene: Mapping[str, np.ndarray],
    vocab: Vocabulary,
    *,
    model_config: CaptionerConfig = CaptionerConfig(),
    train_config: TrainConfig = TrainConfig(),
    seed: int = 0,
    u_avg: float | None = None,
    init_token_embeddings: np.ndarray | None = None,
) -> tuple[InsertionCaptioner, list[float]]:
    """Train the insertion captioner on stage pairs.

    `init_token_embeddings` optionally seeds the text embedding table
    from a trained AR baseline checkpoint.
    """
    if not pairs:
        raise ShapeError("train_insertion requires a nonempty pair stream")
    model = InsertionCaptioner(model_config, vocab, seed=seed, u_avg=u_avg)
    if init_token_embeddings is not None:
        table = model.encoder.token_emb
        arr = np.asarray(init_token_embeddings, dtype=np.float64)
        if arr.shape != table.shape:
            raise ShapeError(f"embedding copy shape {arr.shape} != {table.shape}")
        table.data = arr.copy()
    batches = bucket_pair_batches(model, pairs, features_by_scene, train_config.batch_size)

    def loss_of(g, batch):
        return model.batch_loss_var(g, batch, train_config.lambda_none), batch.size

    history = _run_epochs(batches, loss_of, model.parameters(), train_config, seed, "insertion")
    return model, history


def train_baseline(
    mode: str,
    scenes: Sequence[SceneInstance],
    features_by_scene: Mapping[str, np.ndarray],
    vocab: Vocabulary,
    *,
    model_config: CaptionerConfig = CaptionerConfig(),
    train_config: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> tuple[BaselineCaptioner, list[float]]:
    """Train an AR or NAIC baseline on whole captions."""
    if not scenes:
        raise ShapeError("train_baseline requires a nonempty corpus")
    model = BaselineCaptioner(mode, model_config, vocab, seed=seed)
    buckets: dict[tuple[int, int], list[SceneInstance]] = {}
    for scene in scenes:
        feats = features_by_scene.get(scene.id)
        if feats is None:
            raise ShapeError(f"no features for scene {scene.id!r}")
        buckets.setdefault((feats.shape[0], len(scene.caption)), []).append(scene)
    batches = []
    for key in sorted(buckets):
        group = buckets[key]
        for start in range(0, len(group), train_config.batch_size):
            chunk = group[start : start + train_config.batch_size]
            feats = np.stack([features_by_scene[s.id] for s in chunk])
            captions = [s.caption for s in chunk]
            batches.append((feats, captions))

    def loss_of(g, batch):
        feats, captions = batch
        return model.batch_loss_var(g, feats, captions), len(captions)

    history = _run_epochs(batches, loss_of, model.parameters(), train_config, seed, mode)
    return model, history
