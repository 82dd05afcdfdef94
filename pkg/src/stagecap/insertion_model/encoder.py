"""Shared region+text stream encoder for the caption models.

Regions and text tokens live in one attention stream. Each position is
a sum of content, position, and modality embeddings, except that region
rows carry no position embedding (they are an unordered set). The
insertion model runs fully bidirectional attention; the autoregressive
baseline adds a causal mask over the text segment with regions visible
to every text position but blind to text (so no information can leak
backwards through a region row).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ShapeError
from ..numcore import Graph, LayerNorm, Linear, MASK_FILL, ParamBag, TransformerBlock, Var


@dataclass(frozen=True)
class CaptionerConfig:
    d_v: int = 32
    d_model: int = 64
    heads: int = 4
    d_ff: int = 128
    blocks: int = 2
    max_len: int = 48
    dropout: float = 0.1

    def to_json(self) -> dict:
        return {
            "d_v": self.d_v,
            "d_model": self.d_model,
            "heads": self.heads,
            "d_ff": self.d_ff,
            "blocks": self.blocks,
            "max_len": self.max_len,
            "dropout": self.dropout,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "CaptionerConfig":
        return cls(**payload)

    @classmethod
    def paper_scale(cls) -> "CaptionerConfig":
        # large preset; not exercised by the desk-scale test suite
        return cls(d_model=512, heads=8, d_ff=2048, blocks=3, max_len=64, dropout=0.2)


@lru_cache(maxsize=256)
def _packed_perm(batch: int, regions: int, m: int) -> np.ndarray:
    """Row permutation turning [all regions; all text] into per-sequence
    [regions, text] packing."""
    p = regions + m
    idx = np.empty(batch * p, dtype=np.intp)
    for b in range(batch):
        idx[b * p : b * p + regions] = np.arange(b * regions, (b + 1) * regions)
        idx[b * p + regions : (b + 1) * p] = batch * regions + np.arange(b * m, (b + 1) * m)
    return idx


@lru_cache(maxsize=256)
def _text_row_index(batch: int, regions: int, m: int) -> np.ndarray:
    p = regions + m
    idx = np.empty(batch * m, dtype=np.intp)
    for b in range(batch):
        idx[b * m : (b + 1) * m] = b * p + regions + np.arange(m)
    return idx


@lru_cache(maxsize=256)
def causal_stream_mask(regions: int, m: int) -> np.ndarray:
    """Additive mask: regions attend to regions only; text position i
    attends to all regions and text positions <= i."""
    p = regions + m
    mask = np.full((p, p), MASK_FILL)
    mask[:regions, :regions] = 0.0
    mask[regions:, :regions] = 0.0
    text = np.triu(np.full((m, m), MASK_FILL), k=1)
    mask[regions:, regions:] = text
    return mask


class StreamEncoder:
    """Embeds a (regions, text) stream and runs it through N blocks."""

    def __init__(self, bag: ParamBag, config: CaptionerConfig, vocab_size: int, with_query: bool):
        self.config = config
        d = config.d_model
        self.token_emb = bag.embedding("token_emb", vocab_size, d)
        self.pos_emb = bag.embedding("pos_emb", config.max_len, d)
        self.modality_emb = bag.embedding("modality_emb", 2, d)
        self.region_proj = Linear(bag, "region_proj", config.d_v, d)
        self.query_emb = bag.embedding("query_emb", 1, d) if with_query else None
        self.blocks = [
            TransformerBlock(bag, f"block{i}", d, config.heads, config.d_ff, config.dropout)
            for i in range(config.blocks)
        ]
        self.ln_f = LayerNorm(bag, "ln_f", d)

    def _check_features(self, feats: np.ndarray) -> np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[2] != self.config.d_v:
            raise ShapeError(f"expected features (batch, regions, {self.config.d_v}), got {feats.shape}")
        return feats

    def _region_rows(self, g: Graph, feats: np.ndarray) -> Var:
        batch, regions, _ = feats.shape
        x = self.region_proj(g, g.input(feats.reshape(batch * regions, -1)))
        modality = g.gather_rows(g.param(self.modality_emb), np.zeros(batch * regions, dtype=np.intp))
        return g.add(x, modality)

    def _text_positions(self, g: Graph, batch: int, m: int) -> Var:
        if m > self.config.max_len:
            raise ShapeError(f"sequence length {m} exceeds max_len {self.config.max_len}")
        pos = g.gather_rows(g.param(self.pos_emb), np.tile(np.arange(m, dtype=np.intp), batch))
        modality = g.gather_rows(g.param(self.modality_emb), np.ones(batch * m, dtype=np.intp))
        return g.add(pos, modality)

    def _token_rows(self, g: Graph, ids: np.ndarray) -> Var:
        batch, m = ids.shape
        content = g.gather_rows(g.param(self.token_emb), ids.reshape(-1))
        return g.add(content, self._text_positions(g, batch, m))

    def _query_rows(self, g: Graph, batch: int, m: int) -> Var:
        assert self.query_emb is not None
        content = g.gather_rows(g.param(self.query_emb), np.zeros(batch * m, dtype=np.intp))
        return g.add(content, self._text_positions(g, batch, m))

    def _run(self, g: Graph, text_rows: Var, feats: np.ndarray, m: int, mask) -> Var:
        batch, regions, _ = feats.shape
        stream = g.vstack(self._region_rows(g, feats), text_rows)
        x = g.gather_rows(stream, _packed_perm(batch, regions, m))
        x = g.dropout(x, self.config.dropout)
        for block in self.blocks:
            x = block(g, x, batch=batch, mask=mask)
        x = self.ln_f(g, x)
        return g.gather_rows(x, _text_row_index(batch, regions, m))

    def text_hidden(self, g: Graph, ids: np.ndarray, feats: np.ndarray, causal: bool) -> Var:
        """(batch*m, d) hidden states of the text positions."""
        feats = self._check_features(feats)
        ids = np.asarray(ids, dtype=np.intp)
        if ids.ndim != 2 or ids.shape[0] != feats.shape[0]:
            raise ShapeError(f"token ids {ids.shape} do not match features {feats.shape}")
        mask = causal_stream_mask(feats.shape[1], ids.shape[1]) if causal else None
        return self._run(g, self._token_rows(g, ids), feats, ids.shape[1], mask)

    def query_hidden(self, g: Graph, feats: np.ndarray, m: int) -> Var:
        """Hidden states for m learned query positions (one-shot decoding)."""
        feats = self._check_features(feats)
        return self._run(g, self._query_rows(g, feats.shape[0], m), feats, m, None)
