"""Baseline captioners on the same substrate.

AR: causally masked text segment, next-token prediction.
NAIC: one-shot decoding from learned position queries, no dependency on
any target token. Both share an output inventory of corpus tokens plus
[EOS] (no [NONE]) and their parameters are independent of the insertion
model's.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..corpus.vocab import EOS, Vocabulary
from ..errors import CorpusError, ShapeError
from ..numcore import Graph, Linear, ParamBag, Tensor, Var
from ..seeding import derive_seed
from .encoder import CaptionerConfig, StreamEncoder
from .model import _log_softmax_rows


class BaselineCaptioner:
    def __init__(self, mode: str, config: CaptionerConfig, vocab: Vocabulary, seed: int = 0):
        if mode not in ("ar", "naic"):
            raise ValueError(f"mode must be 'ar' or 'naic', got {mode!r}")
        self.kind = mode
        self.config = config
        self.vocab = vocab
        self.seed = int(seed)
        self.out_tokens = [vocab.token_of(i) for i in vocab.corpus_token_ids()] + [EOS]
        self.eos_out_index = len(self.out_tokens) - 1
        self._out_index = {t: i for i, t in enumerate(self.out_tokens)}
        bag = ParamBag(derive_seed(seed, f"{mode}-init"))
        self.encoder = StreamEncoder(bag, config, len(vocab), with_query=(mode == "naic"))
        self.head = Linear(bag, "head", config.d_model, len(self.out_tokens))
        self.bag = bag

    def parameters(self) -> list[Tensor]:
        return self.bag.parameters()

    def out_index_of(self, token: str) -> int:
        idx = self._out_index.get(token)
        if idx is None:
            raise CorpusError(f"target token {token!r} not in the baseline output inventory")
        return idx

    def _targets(self, caption: Sequence[str]) -> np.ndarray:
        return np.asarray([self.out_index_of(t) for t in caption] + [self.eos_out_index], dtype=np.intp)

    def logits_var(self, g: Graph, features: np.ndarray, token_ids: np.ndarray | None, m: int) -> Var:
        if self.kind == "ar":
            assert token_ids is not None
            hidden = self.encoder.text_hidden(g, token_ids, features, causal=True)
        else:
            hidden = self.encoder.query_hidden(g, features, m)
        return self.head(g, hidden)

    def batch_loss_var(
        self, g: Graph, features: np.ndarray, captions: Sequence[Sequence[str]]
    ) -> Var:
        """Mean over scenes of the summed next-token (AR) or per-position
        (NAIC) negative log-likelihood; targets are caption + [EOS]."""
        batch = features.shape[0]
        lengths = {len(c) for c in captions}
        if len(lengths) != 1:
            raise ShapeError(f"captions in a batch must share a length, got {sorted(lengths)}")
        t_len = lengths.pop()
        m = t_len + 1
        targets = np.concatenate([self._targets(c) for c in captions])
        if self.kind == "ar":
            ids = np.stack(
                [
                    np.asarray([self.vocab.bos_id] + self.vocab.encode(c), dtype=np.intp)
                    for c in captions
                ]
            )
            logits = self.logits_var(g, features, ids, m)
        else:
            logits = self.logits_var(g, features, None, m)
        weights = np.full(batch * m, 1.0 / batch)
        return g.cross_entropy_rows(logits, targets, weights)

    def baseline_loss(self, caption: Sequence[str], features: np.ndarray) -> float:
        """Per-scene loss (sum over the caption + [EOS] targets)."""
        feats = np.asarray(features, dtype=np.float64)
        g = Graph()
        return float(self.batch_loss_var(g, feats[None, :, :], [tuple(caption)]).value)

    # ------------------------------------------------------------------ #
    # decoding surfaces
    # ------------------------------------------------------------------ #

    def next_log_probs(self, prefix_ids: Sequence[int], features: np.ndarray) -> np.ndarray:
        """AR: log-probs of the next token given [BOS] w_1 ... w_t."""
        if self.kind != "ar":
            raise ShapeError("next_log_probs is only defined for the AR baseline")
        ids = np.asarray(list(prefix_ids), dtype=np.intp)
        if ids.ndim != 1 or ids.size < 1 or ids[0] != self.vocab.bos_id:
            raise ShapeError("AR prefix must be a 1-D id sequence starting with [BOS]")
        feats = np.asarray(features, dtype=np.float64)
        g = Graph()
        logits = self.logits_var(g, feats[None, :, :], ids[None, :], ids.size)
        return _log_softmax_rows(logits.value)[-1]

    def positions_log_probs(self, features: np.ndarray, length: int) -> np.ndarray:
        """NAIC: (length, |out|) log-probs from one evaluation."""
        if self.kind != "naic":
            raise ShapeError("positions_log_probs is only defined for the NAIC baseline")
        feats = np.asarray(features, dtype=np.float64)
        g = Graph()
        logits = self.logits_var(g, feats[None, :, :], None, length)
        return _log_softmax_rows(logits.value)

    # ------------------------------------------------------------------ #

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.bag.tensors().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.bag.load_state(arrays)

    def dims(self) -> dict:
        return self.config.to_json()
