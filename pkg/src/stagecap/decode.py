"""Stage-parallel inference and baseline decoding.

Greedy mode takes the per-slot argmax each stage and inserts every
non-[NONE] winner simultaneously; an all-[NONE] stage signals
convergence, so a trace always costs (insertion stages + 1) model
evaluations. Beam mode keeps up to B_k hypotheses; each hypothesis
expands into its all-argmax stage plus every single-slot deviation
within the top-B_k band (slots are conditionally independent within a
stage, so the argmax expansion is the stage mode and deviations supply
diversity). Converged hypotheses retire into a pool and the winner is
the highest length-normalized cumulative log-probability.

The adaptive beam size is B_k = 3 + int(4 * clamp((u_avg - u_k)/u_avg))
with clamp to [-0.5, 0.5] and int() truncating toward zero; u_k is the
mean estimator uncertainty of the tokens the surviving hypotheses
inserted at the previous stage, with u_1 = u_avg.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, StagingError


@dataclass(frozen=True)
class StageRecord:
    inserted: int
    beam: int
    u_k: float | None = None


@dataclass
class DecodeTrace:
    scene_id: str
    caption: tuple[str, ...]
    records: tuple[StageRecord, ...]
    evals: int
    wall_ns: int
    beam_label: str
    converged: bool
    score: float | None = None

    @property
    def insertion_stages(self) -> int:
        return sum(1 for r in self.records if r.inserted > 0)

    def to_json(self) -> dict:
        return {
            "scene": self.scene_id,
            "caption": list(self.caption),
            "stages": self.insertion_stages,
            "evals": self.evals,
            "wall_ns": self.wall_ns,
            "beam": self.beam_label,
        }


def adaptive_beam_size(u_k: float, u_avg: float) -> int:
    """Beam width in [1, 5]; larger when the stage looks more certain
    than the corpus average, truncated toward zero."""
    if u_avg <= 0:
        raise ValueError(f"u_avg must be > 0, got {u_avg}")
    if u_k < 0:
        raise ValueError(f"u_k must be >= 0, got {u_k}")
    ratio = (u_avg - u_k) / u_avg
    return 3 + int(4.0 * max(-0.5, min(0.5, ratio)))


def _frame(model, tokens: Sequence[str]) -> list[int]:
    vocab = model.vocab
    return [vocab.bos_id] + vocab.encode(tokens) + [vocab.eos_id]


def greedy_parallel_decode(
    model,
    features: np.ndarray,
    *,
    max_stages: int = 32,
    scene_id: str = "",
    token_u: Mapping[str, float] | None = None,
) -> DecodeTrace:
    """Argmax insertion at every slot until an all-[NONE] stage."""
    if max_stages < 1:
        raise StagingError(f"max_stages must be >= 1, got {max_stages}")
    start = time.perf_counter_ns()
    tokens: list[str] = []
    records: list[StageRecord] = []
    evals = 0
    converged = False
    score = 0.0
    for _ in range(max_stages):
        framed = _frame(model, tokens)
        if len(framed) > model.config.max_len:
            break
        log_probs = model.slot_log_probs(framed, features)
        evals += 1
        winners = log_probs.argmax(axis=1)
        score += float(log_probs[np.arange(len(winners)), winners].sum())
        insertions = [
            (slot, model.out_tokens[int(col)])
            for slot, col in enumerate(winners)
            if int(col) != model.none_out_index
        ]
        u_k = None
        if token_u is not None and insertions:
            u_k = float(np.mean([token_u.get(tok, 1.0) for _, tok in insertions]))
        records.append(StageRecord(inserted=len(insertions), beam=1, u_k=u_k))
        if not insertions:
            converged = True
            break
        for slot, token in sorted(insertions, reverse=True):
            tokens.insert(slot, token)
    return DecodeTrace(
        scene_id=scene_id,
        caption=tuple(tokens),
        records=tuple(records),
        evals=evals,
        wall_ns=time.perf_counter_ns() - start,
        beam_label="greedy",
        converged=converged,
        score=score,
    )


@dataclass(frozen=True)
class _Hyp:
    tokens: tuple[str, ...]
    logprob: float
    last_inserted: tuple[str, ...]
    history: tuple[int, ...] = ()


def beam_decode(
    model,
    features: np.ndarray,
    *,
    beam: int | str = 3,
    u_avg: float | None = None,
    token_u: Mapping[str, float] | None = None,
    max_stages: int = 32,
    scene_id: str = "",
) -> DecodeTrace:
    """Stage-local beam search; `beam` is an int or "adaptive"."""
    adaptive = beam == "adaptive"
    if adaptive:
        if u_avg is None or u_avg <= 0 or token_u is None:
            raise StagingError("adaptive beam decoding needs u_avg > 0 and a token uncertainty map")
    else:
        beam = int(beam)
        if not (1 <= beam <= 16):
            raise StagingError(f"fixed beam width must be in [1, 16], got {beam}")
    if max_stages < 1:
        raise StagingError(f"max_stages must be >= 1, got {max_stages}")

    start = time.perf_counter_ns()
    label = "adaptive" if adaptive else f"fixed:{beam}"
    active: list[_Hyp] = [_Hyp(tokens=(), logprob=0.0, last_inserted=())]
    pool: dict[tuple[str, ...], _Hyp] = {}
    capped: dict[tuple[str, ...], _Hyp] = {}
    stage_meta: list[tuple[int, float | None]] = []
    evals = 0
    u_k = u_avg if adaptive else None

    for _ in range(max_stages):
        width = adaptive_beam_size(u_k, u_avg) if adaptive else int(beam)
        stage_meta.append((width, u_k))
        active.sort(key=lambda h: (-h.logprob, h.tokens))
        active = active[:width]

        candidates: dict[tuple[str, ...], _Hyp] = {}

        def offer(bucket: dict, hyp: _Hyp) -> None:
            held = bucket.get(hyp.tokens)
            if held is None or hyp.logprob > held.logprob:
                bucket[hyp.tokens] = hyp

        for hyp in active:
            framed = _frame(model, hyp.tokens)
            if len(framed) > model.config.max_len:
                offer(capped, hyp)  # length-capped: retire as-is, not converged
                continue
            log_probs = model.slot_log_probs(framed, features)
            evals += 1
            n_slots = log_probs.shape[0]
            band = np.argsort(-log_probs, axis=1, kind="stable")[:, :width]
            base = band[:, 0].copy()
            base_score = float(log_probs[np.arange(n_slots), base].sum())
            choice_sets = [(base, base_score)]
            for slot in range(n_slots):
                for rank in range(1, band.shape[1]):
                    alt = base.copy()
                    alt[slot] = band[slot, rank]
                    delta = float(log_probs[slot, band[slot, rank]] - log_probs[slot, base[slot]])
                    choice_sets.append((alt, base_score + delta))
            for choices, stage_score in choice_sets:
                inserts = [
                    (slot, model.out_tokens[int(col)])
                    for slot, col in enumerate(choices)
                    if int(col) != model.none_out_index
                ]
                new_logprob = hyp.logprob + stage_score
                if not inserts:
                    offer(
                        pool,
                        _Hyp(hyp.tokens, new_logprob, (), hyp.history + (0,)),
                    )
                    continue
                grown = list(hyp.tokens)
                for slot, token in sorted(inserts, reverse=True):
                    grown.insert(slot, token)
                offer(
                    candidates,
                    _Hyp(
                        tuple(grown),
                        new_logprob,
                        tuple(tok for _, tok in inserts),
                        hyp.history + (len(inserts),),
                    ),
                )

        if not candidates:
            active = []
            break
        survivors = sorted(candidates.values(), key=lambda h: (-h.logprob, h.tokens))[:width]
        active = survivors
        if adaptive:
            inserted = [tok for h in survivors for tok in h.last_inserted]
            u_k = float(np.mean([token_u.get(tok, 1.0) for tok in inserted])) if inserted else u_avg

    if pool:
        finalists, converged = list(pool.values()), True
    elif active:
        finalists, converged = active, False
    else:
        finalists, converged = list(capped.values()), False
    if not finalists:
        return DecodeTrace(
            scene_id=scene_id, caption=(), records=(), evals=evals,
            wall_ns=time.perf_counter_ns() - start, beam_label=label,
            converged=False, score=0.0,
        )
    winner = max(finalists, key=lambda h: (h.logprob / max(1, len(h.tokens)), h.tokens))
    records = tuple(
        StageRecord(inserted=n, beam=stage_meta[i][0], u_k=stage_meta[i][1])
        for i, n in enumerate(winner.history)
    )
    return DecodeTrace(
        scene_id=scene_id,
        caption=winner.tokens,
        records=records,
        evals=evals,
        wall_ns=time.perf_counter_ns() - start,
        beam_label=label,
        converged=converged,
        score=winner.logprob,
    )


def ar_decode(
    model,
    features: np.ndarray,
    *,
    beam: int = 1,
    max_len: int = 24,
    scene_id: str = "",
) -> DecodeTrace:
    """Token-by-token baseline; one evaluation per emitted token
    including the terminating [EOS]."""
    if max_len < 1:
        raise StagingError(f"max_len must be >= 1, got {max_len}")
    if beam < 1:
        raise StagingError(f"beam must be >= 1, got {beam}")
    start = time.perf_counter_ns()
    vocab = model.vocab
    label = "greedy" if beam == 1 else f"fixed:{beam}"

    # (prefix ids, emitted tokens, logprob)
    active = [([vocab.bos_id], (), 0.0)]
    pool: list[tuple[tuple[str, ...], float, int]] = []  # tokens, score, steps
    evals = 0
    for step in range(max_len):
        expansions = []
        for prefix, tokens, logprob in active:
            log_probs = model.next_log_probs(prefix, features)
            evals += 1
            order = np.argsort(-log_probs, kind="stable")[:beam]
            for col in order:
                col = int(col)
                score = logprob + float(log_probs[col])
                if col == model.eos_out_index:
                    pool.append((tokens, score, step + 1))
                else:
                    token = model.out_tokens[col]
                    expansions.append(
                        (prefix + [vocab.id_of(token)], tokens + (token,), score)
                    )
        expansions.sort(key=lambda e: (-e[2], e[1]))
        active = expansions[:beam]
        if not active or (pool and beam == 1):
            break
        if len(pool) >= beam:
            best_active = active[0][2]
            if all(score >= best_active for _, score, _ in sorted(pool, key=lambda p: -p[1])[:beam]):
                break

    converged = bool(pool)
    if pool:
        tokens, score, _ = max(pool, key=lambda p: (p[1] / max(1, len(p[0])), p[0]))
    elif active:
        _, tokens, score = active[0]
    else:  # pragma: no cover - unreachable: active empties only via pool
        tokens, score = (), 0.0
    records = tuple(StageRecord(inserted=1, beam=beam) for _ in tokens)
    records = records + (StageRecord(inserted=0, beam=beam),) if converged else records
    return DecodeTrace(
        scene_id=scene_id,
        caption=tuple(tokens),
        records=records,
        evals=evals,
        wall_ns=time.perf_counter_ns() - start,
        beam_label=label,
        converged=converged,
        score=float(score),
    )


def naic_decode(model, features: np.ndarray, *, length: int = 24, scene_id: str = "") -> DecodeTrace:
    """One-shot baseline: a single evaluation predicts every position."""
    if length < 1:
        raise StagingError(f"length must be >= 1, got {length}")
    start = time.perf_counter_ns()
    log_probs = model.positions_log_probs(features, length)
    winners = log_probs.argmax(axis=1)
    tokens: list[str] = []
    score = 0.0
    for pos, col in enumerate(winners):
        score += float(log_probs[pos, int(col)])
        if int(col) == model.eos_out_index:
            break
        tokens.append(model.out_tokens[int(col)])
    return DecodeTrace(
        scene_id=scene_id,
        caption=tuple(tokens),
        records=(StageRecord(inserted=len(tokens), beam=1),),
        evals=1,
        wall_ns=time.perf_counter_ns() - start,
        beam_label="one-shot",
        converged=True,
        score=score,
    )


def save_decodes(path: str | Path, traces: Sequence[DecodeTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False) + "\n")


def load_decodes(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line_no) from None
            required = {"scene", "caption", "stages", "evals", "wall_ns", "beam"}
            if set(row) != required:
                raise FormatError(f"decode record fields must be exactly {sorted(required)}", line_no)
            rows.append(row)
    return rows
