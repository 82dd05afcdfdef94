"""Insertion captioner: per-slot distributions over tokens plus [NONE].

Every gap between consecutive framed tokens is a slot. The head scores
concat(h_i, h_{i+1}) against an output inventory of all corpus tokens
plus [NONE]; predicting [NONE] means "insert nothing here", which folds
the position decision and the word decision into a single categorical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus.vocab import NONE, Vocabulary
from ..errors import CorpusError, ShapeError
from ..numcore import Graph, Linear, ParamBag, Tensor, Var
from ..seeding import derive_seed
from ..staging import StagePair
from .encoder import CaptionerConfig, StreamEncoder


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class PairBatch:
    """Same-shape stage pairs stacked for one training step."""

    features: np.ndarray        # (B, R, d_v)
    token_ids: np.ndarray       # (B, M)
    targets: np.ndarray         # (B*(M-1),) output-inventory indices
    none_mask: np.ndarray       # (B*(M-1),) True where target is [NONE]

    @property
    def size(self) -> int:
        return self.features.shape[0]


class InsertionCaptioner:
    kind = "insertion"

    def __init__(
        self,
        config: CaptionerConfig,
        vocab: Vocabulary,
        seed: int = 0,
        u_avg: float | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.seed = int(seed)
        self.u_avg = u_avg
        # output inventory: corpus tokens then [NONE]
        self.out_tokens = [vocab.token_of(i) for i in vocab.corpus_token_ids()] + [NONE]
        self.none_out_index = len(self.out_tokens) - 1
        self._out_index = {t: i for i, t in enumerate(self.out_tokens)}
        bag = ParamBag(derive_seed(seed, "insertion-init"))
        self.encoder = StreamEncoder(bag, config, len(vocab), with_query=False)
        d = config.d_model
        self.slot_fc1 = Linear(bag, "slot_fc1", 2 * d, d)
        self.slot_fc2 = Linear(bag, "slot_fc2", d, len(self.out_tokens))
        self.bag = bag

    # ------------------------------------------------------------------ #

    def parameters(self) -> list[Tensor]:
        return self.bag.parameters()

    def out_index_of(self, token: str) -> int:
        idx = self._out_index.get(token)
        if idx is None:
            raise CorpusError(f"target token {token!r} not in the insertion output inventory")
        return idx

    def _slot_head(self, g: Graph, hidden: Var, batch: int, m: int) -> Var:
        """Logits for the m-1 slots of each sequence in the batch."""
        if m < 2:
            raise ShapeError(f"slot head needs >= 2 text positions, got {m}")
        left = np.concatenate([b * m + np.arange(m - 1) for b in range(batch)])
        h_left = g.gather_rows(hidden, left.astype(np.intp))
        h_right = g.gather_rows(hidden, (left + 1).astype(np.intp))
        x = g.gelu(self.slot_fc1(g, g.concat_cols(h_left, h_right)))
        return self.slot_fc2(g, x)

    def slot_logits_var(self, g: Graph, token_ids: np.ndarray, features: np.ndarray) -> Var:
        ids = np.asarray(token_ids, dtype=np.intp)
        hidden = self.encoder.text_hidden(g, ids, features, causal=False)
        return self._slot_head(g, hidden, ids.shape[0], ids.shape[1])

    # ------------------------------------------------------------------ #
    # single-sequence surfaces used by decoding and tests
    # ------------------------------------------------------------------ #

    def _check_framed(self, token_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(list(token_ids), dtype=np.intp)
        if ids.ndim != 1 or ids.size < 2:
            raise ShapeError("framed input must be a 1-D id sequence of length >= 2")
        if ids[0] != self.vocab.bos_id or ids[-1] != self.vocab.eos_id:
            raise ShapeError("input must be framed with [BOS] ... [EOS]")
        return ids

    def encode_inputs(self, token_ids: Sequence[int], features: np.ndarray) -> np.ndarray:
        """(framed_len, d) text hidden states for one sequence."""
        ids = self._check_framed(token_ids)
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2:
            raise ShapeError(f"expected (regions, d_v) features, got shape {feats.shape}")
        g = Graph()
        return self.encoder.text_hidden(g, ids[None, :], feats[None, :, :], causal=False).value

    def slot_distributions(self, hidden: np.ndarray) -> np.ndarray:
        """Per-slot log-probabilities from text hidden states (m-1, |out|)."""
        h = np.asarray(hidden, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 2:
            raise ShapeError(f"slot_distributions needs >= 2 hidden rows, got shape {h.shape}")
        g = Graph()
        logits = self._slot_head(g, g.input(h), 1, h.shape[0])
        return _log_softmax_rows(logits.value)

    def slot_log_probs(self, token_ids: Sequence[int], features: np.ndarray) -> np.ndarray:
        """One decode evaluation: log-probs for every slot of one sequence."""
        ids = self._check_framed(token_ids)
        feats = np.asarray(features, dtype=np.float64)
        g = Graph()
        logits = self.slot_logits_var(g, ids[None, :], feats[None, :, :])
        return _log_softmax_rows(logits.value)

    # ------------------------------------------------------------------ #
    # losses
    # ------------------------------------------------------------------ #

    def encode_pair(self, pair: StagePair) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(token ids, target out-indices, none mask) for one stage pair."""
        ids = np.asarray(self.vocab.encode(pair.input_tokens), dtype=np.intp)
        targets = np.asarray([self.out_index_of(t) for t in pair.targets], dtype=np.intp)
        none_mask = np.asarray([t == NONE for t in pair.targets])
        return ids, targets, none_mask

    def batch_loss_var(self, g: Graph, batch: PairBatch, lambda_none: float = 1.0) -> Var:
        """Mean over pairs of the summed per-slot negative log-likelihood;
        [NONE] slots are weighted by lambda_none."""
        logits = self.slot_logits_var(g, batch.token_ids, batch.features)
        weights = np.where(batch.none_mask, float(lambda_none), 1.0) / batch.size
        return g.cross_entropy_rows(logits, batch.targets, weights)

    def insertion_loss(self, pair: StagePair, features: np.ndarray, lambda_none: float = 1.0) -> float:
        """Stage objective for one pair: word slots contribute
        -log p(word | slot); [NONE] slots contribute -lambda * log p([NONE])."""
        ids, targets, none_mask = self.encode_pair(pair)
        feats = np.asarray(features, dtype=np.float64)
        batch = PairBatch(
            features=feats[None, :, :], token_ids=ids[None, :], targets=targets, none_mask=none_mask
        )
        g = Graph()
        return float(self.batch_loss_var(g, batch, lambda_none).value)

    # ------------------------------------------------------------------ #
    # persistence
    # ------------------------------------------------------------------ #

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.bag.tensors().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.bag.load_state(arrays)

    def dims(self) -> dict:
        return self.config.to_json()
