"""File formats: corpus JSONL, vocabulary JSON, stop-word lists."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from ..errors import FormatError
from .grammar import SceneInstance
from .vocab import Vocabulary

# Shipped default stop list; '#' starts a comment.
DEFAULT_STOP_LIST = """\
# function words excluded from the descriptive vocabulary
a
the
is
and
"""


def save_corpus(path: str | Path, scenes: Sequence[SceneInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            record = {
                "id": s.id,
                "objects": [[name, attr] for name, attr in s.objects],
                "relations": [[rel, i, j] for rel, i, j in s.relations],
                "caption": list(s.caption),
                "seed": s.seed,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _parse_scene(record: dict, line: int) -> SceneInstance:
    required = {"id", "objects", "relations", "caption", "seed"}
    if set(record) != required:
        raise FormatError(f"scene record fields must be exactly {sorted(required)}", line)
    try:
        objects = tuple((str(n), str(a)) for n, a in record["objects"])
        relations = tuple((str(r), int(i), int(j)) for r, i, j in record["relations"])
        caption = tuple(str(t) for t in record["caption"])
        seed = int(record["seed"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed scene record: {exc}", line) from None
    for _, i, j in relations:
        if not (0 <= i < len(objects) and 0 <= j < len(objects)):
            raise FormatError(f"relation index out of range for {len(objects)} objects", line)
    return SceneInstance(
        id=str(record["id"]), objects=objects, relations=relations, caption=caption, seed=seed
    )


def load_corpus(path: str | Path) -> list[SceneInstance]:
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(record, dict):
                raise FormatError("scene record must be a JSON object", line_no)
            scenes.append(_parse_scene(record, line_no))
    return scenes


def save_vocab(path: str | Path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocab.to_json(), fh, ensure_ascii=False, indent=0)
        fh.write("\n")


def load_vocab(path: str | Path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid vocabulary JSON: {exc.msg}", exc.lineno) from None
    return Vocabulary.from_json(payload)


def parse_stop_list(text: str) -> tuple[str, ...]:
    tokens = []
    for raw in text.splitlines():
        token = raw.split("#", 1)[0].strip()
        if token:
            tokens.append(token)
    return tuple(dict.fromkeys(tokens))


def load_stop_list(path: str | Path) -> tuple[str, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_stop_list(fh.read())


def default_stop_words() -> tuple[str, ...]:
    return parse_stop_list(DEFAULT_STOP_LIST)
