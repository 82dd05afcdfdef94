"""Image-conditioned bag-of-words uncertainty estimator.

Region features pass through one self-attention block; mean- and
max-pooled rows are concatenated, projected, and an MLP emits one score
per descriptive word, squashed to [-1, 0] via -sigmoid. Training pulls
the score vector toward -presence(caption) with a summed squared error,
so a word strongly predicted present sits near -1.

Downstream, the canonical per-token uncertainty is u = 1 + score for
descriptive words (0 = most certain) and u = 1 for everything else, so
function words always land in the latest insertion stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus.features import region_features
from .corpus.grammar import DEFAULT_GRAMMAR, GrammarConfig, SceneInstance
from .corpus.vocab import BoWVocabulary
from .errors import DivergenceError, ShapeError
from .numcore import Adam, Graph, Linear, LrSchedule, ParamBag, TransformerBlock, Var
from .seeding import derive_seed


@dataclass(frozen=True)
class UncertaintyConfig:
    d_v: int = 32
    width: int = 64
    heads: int = 4
    d_ff: int = 128
    dropout: float = 0.1


@dataclass(frozen=True)
class UncertaintyProfile:
    """Per-token uncertainty values aligned with one caption."""

    values: tuple[float, ...]

    def __post_init__(self):
        for v in self.values:
            if not (0.0 <= v <= 1.0):
                raise ShapeError(f"uncertainty {v} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.values)


class UncertaintyModel:
    """Region features -> one score in [-1, 0] per descriptive word."""

    kind = "ue"

    def __init__(self, config: UncertaintyConfig, bow_size: int, seed: int):
        self.config = config
        self.bow_size = bow_size
        self.seed = int(seed)
        bag = ParamBag(derive_seed(seed, "ue-init"))
        d = config.width
        self.project = Linear(bag, "project", config.d_v, d)
        self.block = TransformerBlock(bag, "block", d, config.heads, config.d_ff, config.dropout)
        self.pool = Linear(bag, "pool", 2 * d, d)
        self.fc1 = Linear(bag, "fc1", d, config.d_ff)
        self.fc2 = Linear(bag, "fc2", config.d_ff, bow_size)
        self.bag = bag

    def parameters(self):
        return self.bag.parameters()

    def scores_var(self, g: Graph, features: np.ndarray) -> Var:
        """Score vectors for a (batch, regions, d_v) feature stack."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[2] != self.config.d_v:
            raise ShapeError(
                f"expected features (batch, regions, {self.config.d_v}), got {feats.shape}"
            )
        batch, regions, _ = feats.shape
        x = self.project(g, g.input(feats.reshape(batch * regions, -1)))
        x = self.block(g, x, batch=batch)
        pooled = g.concat_cols(g.block_mean(x, regions), g.block_max(x, regions))
        hidden = self.pool(g, pooled)
        logits = self.fc2(g, g.gelu(self.fc1(g, hidden)))
        return g.scale(g.sigmoid(logits), -1.0)

    def pi_batch(self, features: np.ndarray) -> np.ndarray:
        """(batch, |V|) scores, every component in [-1, 0]."""
        g = Graph()
        return self.scores_var(g, features).value

    def pi(self, features: np.ndarray) -> np.ndarray:
        """Scores for one scene's (regions, d_v) feature matrix."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2:
            raise ShapeError(f"expected a 2-D feature matrix, got shape {feats.shape}")
        return self.pi_batch(feats[None, :, :])[0]

    def loss_var(self, g: Graph, features: np.ndarray, presence: np.ndarray) -> Var:
        """Mean over the batch of || pi + presence ||^2 (sum per sample)."""
        pi = self.scores_var(g, features)
        diff = g.add(pi, g.input(presence))
        return g.scale(g.sum_squares(diff), 1.0 / features.shape[0])

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.bag.tensors().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.bag.load_state(arrays)


def ue_loss(pi: np.ndarray, caption: Sequence[str], bow: BoWVocabulary) -> float:
    """Summed squared error between pi and -presence(caption)."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (len(bow),):
        raise ShapeError(f"pi has shape {pi.shape}, expected ({len(bow)},)")
    diff = pi + bow.presence(caption)
    return float((diff * diff).sum())


def word_uncertainty(pi: np.ndarray, caption: Sequence[str], bow: BoWVocabulary) -> UncertaintyProfile:
    """u = 1 + pi for descriptive words, 1.0 for everything else."""
    if len(caption) == 0:
        raise ShapeError("word_uncertainty requires a nonempty caption")
    values = []
    for token in caption:
        if token in bow:
            score = float(pi[bow.index_of(token)])
            values.append(min(1.0, max(0.0, 1.0 + score)))
        else:
            values.append(1.0)
    return UncertaintyProfile(values=tuple(values))


def token_uncertainty_map(pi: np.ndarray, bow: BoWVocabulary, tokens: Sequence[str]) -> dict[str, float]:
    """Per-token u lookup for a scene (decoding uses this for B_k)."""
    out = {}
    for token in tokens:
        if token in bow:
            out[token] = min(1.0, max(0.0, 1.0 + float(pi[bow.index_of(token)])))
        else:
            out[token] = 1.0
    return out


@dataclass
class UncertaintyTrainResult:
    model: UncertaintyModel
    u_avg: float
    epoch_losses: list[float] = field(default_factory=list)


def _feature_batches(
    scenes: Sequence[SceneInstance],
    bow: BoWVocabulary,
    *,
    sigma: float,
    d_v: int,
    feature_seed: int,
    grammar: GrammarConfig,
    batch_size: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Bucket scenes by region count and stack into dense batches."""
    buckets: dict[int, list[SceneInstance]] = {}
    for scene in scenes:
        buckets.setdefault(len(scene.objects), []).append(scene)
    batches = []
    for regions in sorted(buckets):
        group = buckets[regions]
        for start in range(0, len(group), batch_size):
            chunk = group[start : start + batch_size]
            feats = np.stack(
                [region_features(s, sigma, d_v, feature_seed, grammar) for s in chunk]
            )
            presence = np.stack([bow.presence(s.caption) for s in chunk])
            batches.append((feats, presence))
    return batches


def train_ue(
    scenes: Sequence[SceneInstance],
    bow: BoWVocabulary,
    *,
    config: UncertaintyConfig = UncertaintyConfig(),
    seed: int = 0,
    epochs: int = 30,
    batch_size: int = 32,
    lr: float = 3e-3,
    warmup_steps: int = 100,
    decay_factor: float = 0.9,
    decay_every: int = 0,
    sigma: float = 0.0,
    feature_seed: int = 0,
    grammar: GrammarConfig = DEFAULT_GRAMMAR,
) -> UncertaintyTrainResult:
    """Train the estimator and measure the corpus-mean token uncertainty."""
    if not scenes or len(bow) == 0:
        raise ShapeError("train_ue requires a nonempty corpus and descriptive vocabulary")
    model = UncertaintyModel(config, bow_size=len(bow), seed=seed)
    batches = _feature_batches(
        scenes, bow, sigma=sigma, d_v=config.d_v, feature_seed=feature_seed,
        grammar=grammar, batch_size=batch_size,
    )
    schedule = LrSchedule(lr, warmup_steps, decay_factor, decay_every)
    optimizer = Adam(model.parameters(), schedule)
    shuffle_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "ue-shuffle")))
    dropout_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "ue-dropout")))

    losses = []
    step = 0
    for _ in range(epochs):
        order = shuffle_rng.permutation(len(batches))
        total, count = 0.0, 0
        for b in order:
            feats, presence = batches[b]
            g = Graph(training=True, dropout_rng=dropout_rng)
            loss = model.loss_var(g, feats, presence)
            step += 1
            value = float(loss.value)
            if not np.isfinite(value):
                raise DivergenceError(f"uncertainty training diverged at step {step}", step=step)
            optimizer.step(g.backward(loss))
            total += value * feats.shape[0]
            count += feats.shape[0]
        losses.append(total / count)

    u_avg = mean_corpus_uncertainty(
        model, scenes, bow, sigma=sigma, feature_seed=feature_seed, grammar=grammar
    )
    return UncertaintyTrainResult(model=model, u_avg=u_avg, epoch_losses=losses)


def profile_for_scene(
    model: UncertaintyModel,
    scene: SceneInstance,
    bow: BoWVocabulary,
    *,
    sigma: float = 0.0,
    feature_seed: int = 0,
    grammar: GrammarConfig = DEFAULT_GRAMMAR,
) -> UncertaintyProfile:
    feats = region_features(scene, sigma, model.config.d_v, feature_seed, grammar)
    return word_uncertainty(model.pi(feats), scene.caption, bow)


def mean_corpus_uncertainty(
    model: UncertaintyModel,
    scenes: Sequence[SceneInstance],
    bow: BoWVocabulary,
    *,
    sigma: float = 0.0,
    feature_seed: int = 0,
    grammar: GrammarConfig = DEFAULT_GRAMMAR,
) -> float:
    """Mean of u over every caption token in the corpus (u_avg)."""
    total, count = 0.0, 0
    for scene in scenes:
        profile = profile_for_scene(
            model, scene, bow, sigma=sigma, feature_seed=feature_seed, grammar=grammar
        )
        total += sum(profile.values)
        count += len(profile)
    return total / count
