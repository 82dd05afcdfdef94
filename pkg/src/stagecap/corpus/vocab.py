"""Token inventories: the full vocabulary and the descriptive subset
used by the uncertainty estimator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import CorpusError
from .grammar import SceneInstance

PAD, BOS, EOS, NONE = "[PAD]", "[BOS]", "[EOS]", "[NONE]"
SPECIAL_TOKENS = (PAD, BOS, EOS, NONE)


@dataclass(frozen=True)
class Vocabulary:
    """Dense token -> id map with the four specials pinned to ids 0..3."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:4] != SPECIAL_TOKENS:
            raise CorpusError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def none_id(self) -> int:
        return 3

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise CorpusError(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def corpus_token_ids(self) -> list[int]:
        """Ids of non-special tokens, in id order."""
        return list(range(4, len(self.tokens)))

    def to_json(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "specials": {"pad": 0, "bos": 1, "eos": 2, "none": 3},
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        tokens = tuple(payload["tokens"])
        specials = payload.get("specials", {})
        expected = {"pad": 0, "bos": 1, "eos": 2, "none": 3}
        if specials != expected:
            raise CorpusError(f"vocabulary specials must be {expected}, got {specials}")
        return cls(tokens=tokens)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_vocab(scenes: Sequence[SceneInstance], min_count: int = 1) -> Vocabulary:
    """Frequency-filtered vocabulary: lowercase tokens with count >=
    min_count, ids assigned by descending frequency then lexicographic."""
    if not scenes:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for scene in scenes:
        for token in scene.caption:
            token = token.lower()
            counts[token] = counts.get(token, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(tokens=SPECIAL_TOKENS + tuple(kept))


@dataclass(frozen=True)
class BoWVocabulary:
    """Descriptive-word subset the uncertainty estimator scores.

    Order follows full-vocabulary ids, so the subset is stable for a
    given (vocabulary, stop list).
    """

    tokens: tuple[str, ...]
    stop_words: tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.tokens) & set(self.stop_words)
        if overlap:
            raise CorpusError(f"descriptive vocabulary overlaps stop list: {sorted(overlap)}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index_of(self, token: str) -> int:
        return self._index[token]

    def presence(self, caption: Iterable[str]) -> np.ndarray:
        """Binary |V| vector with 1 exactly at tokens of the caption."""
        psi = np.zeros(len(self.tokens))
        for token in caption:
            idx = self._index.get(token)
            if idx is not None:
                psi[idx] = 1.0
        return psi


def build_bow_vocab(vocab: Vocabulary, stop_words: Iterable[str]) -> BoWVocabulary:
    stop = tuple(dict.fromkeys(stop_words))
    stop_set = set(stop)
    kept = tuple(t for t in vocab.tokens[4:] if t not in stop_set)
    if not kept:
        raise CorpusError("descriptive vocabulary is empty after stop-word removal")
    return BoWVocabulary(tokens=kept, stop_words=stop)
