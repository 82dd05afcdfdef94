"""Stage construction: masking DP, backward decomposition, training pairs.

One backward step removes a maximum-total-uncertainty subset of tokens
under the constraint that no two removed tokens are adjacent (an
independent set on the token path), so the most uncertain words end up
inserted in the latest stages. Iterating until the stage is empty yields
S_1 c S_2 c ... c S_K = caption; each consecutive stage transition (plus
a terminal all-[NONE] pair) becomes one training example.

`brute_force_mask` is the enumeration oracle `dp_mask` is tested
against; keep them independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus.vocab import BOS, EOS, NONE
from .errors import FormatError, StagingError


@dataclass(frozen=True)
class MaskPattern:
    """Binary selection of removed tokens with its total uncertainty."""

    phi: tuple[int, ...]
    value: float

    def __post_init__(self):
        for a, b in zip(self.phi, self.phi[1:]):
            if a == 1 and b == 1:
                raise StagingError(f"mask pattern has adjacent selections: {self.phi}")


def _selected_sum(u: Sequence[float], phi: Sequence[int]) -> float:
    # left-to-right accumulation; dp and the oracle must sum identically
    total = 0.0
    for value, bit in zip(u, phi):
        if bit:
            total += value
    return total


def dp_mask(u: Sequence[float]) -> MaskPattern:
    """Maximum-total-uncertainty non-adjacent subset via the path DP.

    Recurrence: keep the previous prefix value only when strictly
    greater than v[t-2] + u[t]; ties therefore mask the current (later)
    position. The skip branch extends the pattern with (0, 1) so the
    pattern always has full length. The t=1 initialization masks the
    lone token, so the pattern is never all-zero.
    """
    u = [float(x) for x in u]
    t_len = len(u)
    if t_len == 0:
        raise StagingError("dp_mask requires at least one uncertainty value")
    # v[t], phi[t] describe the best masking of the first t tokens
    v_prev2, v_prev1 = 0.0, u[0]
    phi_prev2: tuple[int, ...] = ()
    phi_prev1: tuple[int, ...] = (1,)
    for t in range(2, t_len + 1):
        ut = u[t - 1]
        if v_prev1 > v_prev2 + ut:
            v_cur = v_prev1
            phi_cur = phi_prev1 + (0,)
        else:
            v_cur = v_prev2 + ut
            phi_cur = phi_prev2 + (0, 1)
        v_prev2, v_prev1 = v_prev1, v_cur
        phi_prev2, phi_prev1 = phi_prev1, phi_cur
    return MaskPattern(phi=phi_prev1, value=_selected_sum(u, phi_prev1))


@lru_cache(maxsize=32)
def _valid_patterns(t_len: int) -> tuple[tuple[int, ...], ...]:
    patterns = []
    for bits in range(1 << t_len):
        if bits & (bits >> 1):
            continue
        patterns.append(tuple((bits >> i) & 1 for i in range(t_len)))
    return tuple(patterns)


def brute_force_mask(u: Sequence[float]) -> MaskPattern:
    """Exhaustive oracle over all non-adjacent patterns (T <= 22).

    Ties resolve to the pattern selecting the later position: among
    equal-value patterns pick the one whose reversed bit tuple is
    lexicographically largest.
    """
    u = [float(x) for x in u]
    t_len = len(u)
    if t_len == 0:
        raise StagingError("brute_force_mask requires at least one value")
    if t_len > 22:
        raise StagingError(f"brute_force_mask limited to T <= 22, got {t_len}")
    best_phi: tuple[int, ...] | None = None
    best_value = -np.inf
    for phi in _valid_patterns(t_len):
        value = _selected_sum(u, phi)
        if value > best_value or (
            value == best_value and best_phi is not None and phi[::-1] > best_phi[::-1]
        ):
            best_phi, best_value = phi, value
    assert best_phi is not None
    return MaskPattern(phi=best_phi, value=best_value)


@dataclass(frozen=True)
class StagePlan:
    """Backward decomposition of one caption into insertion stages.

    stages[k] holds the original caption indices present in stage k+1;
    insertions[k] lists (slot, original_index) pairs describing how
    stage k+1 grows out of stage k (stage 0 is empty). Slots index the
    gaps of the previous stage framed with [BOS]/[EOS].
    """

    caption: tuple[str, ...]
    stages: tuple[tuple[int, ...], ...]
    insertions: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    def stage_tokens(self, k: int) -> tuple[str, ...]:
        return tuple(self.caption[i] for i in self.stages[k])


def decompose(caption: Sequence[str], u: Sequence[float]) -> StagePlan:
    """Iterate dp_mask backward from the full caption until empty."""
    caption = tuple(caption)
    if not caption:
        raise StagingError("cannot decompose an empty caption")
    values = [float(x) for x in u]
    if len(values) != len(caption):
        raise StagingError(
            f"uncertainty profile length {len(values)} != caption length {len(caption)}"
        )
    current = list(range(len(caption)))
    stages_rev: list[tuple[int, ...]] = []
    inserts_rev: list[tuple[tuple[int, int], ...]] = []
    while current:
        pattern = dp_mask([values[i] for i in current])
        removed = [k for k, bit in enumerate(pattern.phi) if bit]
        if not removed:  # unreachable for dp_mask; defensive termination guard
            removed = [int(np.argmax([values[i] for i in current]))]
        removed_set = set(removed)
        kept = [current[k] for k in range(len(current)) if k not in removed_set]
        records = []
        for k in removed:
            orig = current[k]
            slot = sum(1 for pos in kept if pos < orig)
            records.append((slot, orig))
        stages_rev.append(tuple(current))
        inserts_rev.append(tuple(records))
        current = kept
    return StagePlan(
        caption=caption,
        stages=tuple(reversed(stages_rev)),
        insertions=tuple(reversed(inserts_rev)),
    )


def decompose_sequential(caption: Sequence[str]) -> StagePlan:
    """Left-to-right degenerate plan: one token per stage."""
    caption = tuple(caption)
    if not caption:
        raise StagingError("cannot decompose an empty caption")
    stages = tuple(tuple(range(k + 1)) for k in range(len(caption)))
    insertions = tuple(((k, k),) for k in range(len(caption)))
    return StagePlan(caption=caption, stages=stages, insertions=insertions)


@dataclass(frozen=True)
class StagePair:
    """One training example: framed input stage and per-slot targets."""

    scene_id: str
    input_tokens: tuple[str, ...]
    targets: tuple[str, ...]

    def __post_init__(self):
        if len(self.targets) != len(self.input_tokens) - 1:
            raise StagingError(
                f"{len(self.input_tokens)} framed tokens require "
                f"{len(self.input_tokens) - 1} slot targets, got {len(self.targets)}"
            )


def build_training_pairs(plan: StagePlan, scene_id: str) -> list[StagePair]:
    """Consecutive stage transitions plus the terminal all-[NONE] pair."""
    pairs = []
    prev: tuple[str, ...] = ()
    for k in range(plan.stage_count):
        framed = (BOS,) + prev + (EOS,)
        targets = [NONE] * (len(framed) - 1)
        for slot, orig in plan.insertions[k]:
            if not (0 <= slot < len(targets)):
                raise StagingError(f"insertion slot {slot} out of range for stage {k}")
            if targets[slot] != NONE:
                raise StagingError(f"two insertions target slot {slot} at stage {k}")
            targets[slot] = plan.caption[orig]
        pairs.append(StagePair(scene_id=scene_id, input_tokens=framed, targets=tuple(targets)))
        prev = plan.stage_tokens(k)
    final = (BOS,) + prev + (EOS,)
    pairs.append(
        StagePair(scene_id=scene_id, input_tokens=final, targets=(NONE,) * (len(final) - 1))
    )
    return pairs


def replay(plan: StagePlan) -> tuple[str, ...]:
    """Re-run the insertions forward from the empty sequence."""
    tokens: list[str] = []
    for k in range(plan.stage_count):
        for slot, orig in sorted(plan.insertions[k], reverse=True):
            tokens.insert(slot, plan.caption[orig])
    return tuple(tokens)


def save_pairs(path: str | Path, pairs: Sequence[StagePair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {"scene": p.scene_id, "input": list(p.input_tokens), "targets": list(p.targets)},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_pairs(path: str | Path) -> list[StagePair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line_no) from None
            if set(record) != {"scene", "input", "targets"}:
                raise FormatError("stage pair fields must be exactly scene/input/targets", line_no)
            try:
                pairs.append(
                    StagePair(
                        scene_id=str(record["scene"]),
                        input_tokens=tuple(str(t) for t in record["input"]),
                        targets=tuple(str(t) for t in record["targets"]),
                    )
                )
            except StagingError as exc:
                raise FormatError(str(exc), line_no) from None
    return pairs
