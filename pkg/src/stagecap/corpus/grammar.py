"""Synthetic scene/caption generator.

A scene is a set of (object, attribute) pairs plus derived relations;
the caption is a deterministic rendering of the sorted object list, so
a caption is fully regenerable from (grammar, seed) and is (up to
feature noise) a function of the scene content alone. Rendering pairs
consecutive objects into relation clauses and gives a leftover object a
copula clause:

    a red cube on the blue table and a lamp is shiny
    a mug is green
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import GrammarError
from ..seeding import derive_seed

OBJECT_WORDS = (
    "ball", "block", "book", "bottle", "bowl", "box", "chair", "cone",
    "cube", "cup", "disk", "lamp", "mug", "plate", "pyramid", "sphere",
    "table", "vase",
)
ATTRIBUTE_WORDS = (
    "red", "blue", "green", "yellow", "purple", "black", "white",
    "small", "large", "tiny", "shiny", "wooden", "metal", "glass",
)
RELATION_WORDS = ("on", "under", "beside", "behind", "near", "above")

# Word-class symbols templates may reference; anything else lowercase is
# emitted literally (a function word).
_CLASS_SYMBOLS = {"OBJ", "ATTR", "OBJ_S", "ATTR_S", "OBJ_O", "ATTR_O", "REL"}


@dataclass(frozen=True)
class SceneInstance:
    """One synthetic 'image': objects, relations, reference caption."""

    id: str
    objects: tuple[tuple[str, str], ...]
    relations: tuple[tuple[str, int, int], ...]
    caption: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class GrammarConfig:
    objects: tuple[str, ...] = OBJECT_WORDS
    attributes: tuple[str, ...] = ATTRIBUTE_WORDS
    relations: tuple[str, ...] = RELATION_WORDS
    max_objects: int = 5
    pair_template: tuple[str, ...] = ("a", "ATTR_S", "OBJ_S", "REL", "the", "ATTR_O", "OBJ_O")
    single_template: tuple[str, ...] = ("a", "OBJ", "is", "ATTR")
    clause_joiner: str = "and"
    min_caption_len: int = 4
    max_caption_len: int = 20

    def __post_init__(self):
        if self.max_objects < 1 or self.max_objects > len(self.objects):
            raise GrammarError(f"max_objects={self.max_objects} outside [1, {len(self.objects)}]")
        for template in (self.pair_template, self.single_template):
            for sym in template:
                if sym.isupper() and sym not in _CLASS_SYMBOLS:
                    raise GrammarError(f"template references unknown word class {sym!r}")

    @property
    def function_words(self) -> tuple[str, ...]:
        literals = [w for w in self.pair_template + self.single_template if not w.isupper()]
        literals.append(self.clause_joiner)
        seen: list[str] = []
        for w in literals:
            if w not in seen:
                seen.append(w)
        return tuple(seen)

    def terminals(self) -> set[str]:
        """Every token the grammar can emit."""
        return set(self.objects) | set(self.attributes) | set(self.relations) | set(self.function_words)


DEFAULT_GRAMMAR = GrammarConfig()


def _relation_word(config: GrammarConfig, subj_name_idx: int, obj_name_idx: int) -> str:
    # deterministic in the object pair so captions stay a function of scene content
    return config.relations[(subj_name_idx * 3 + obj_name_idx) % len(config.relations)]


def _fill(template: Iterable[str], table: dict[str, str]) -> list[str]:
    return [table[sym] if sym.isupper() else sym for sym in template]


def render_caption(
    objects: tuple[tuple[str, str], ...], config: GrammarConfig = DEFAULT_GRAMMAR
) -> tuple[tuple[str, ...], tuple[tuple[str, int, int], ...]]:
    """Render the caption and the relation triples it mentions."""
    name_idx = {w: i for i, w in enumerate(config.objects)}
    clauses: list[list[str]] = []
    relations: list[tuple[str, int, int]] = []
    i = 0
    while i + 1 < len(objects):
        (sn, sa), (on, oa) = objects[i], objects[i + 1]
        rel = _relation_word(config, name_idx[sn], name_idx[on])
        relations.append((rel, i, i + 1))
        clauses.append(
            _fill(
                config.pair_template,
                {"ATTR_S": sa, "OBJ_S": sn, "REL": rel, "ATTR_O": oa, "OBJ_O": on},
            )
        )
        i += 2
    if i < len(objects):
        name, attr = objects[i]
        clauses.append(_fill(config.single_template, {"OBJ": name, "ATTR": attr}))
    caption: list[str] = []
    for k, clause in enumerate(clauses):
        if k:
            caption.append(config.clause_joiner)
        caption.extend(clause)
    return tuple(caption), tuple(relations)


def generate_scene(seed: int, scene_id: str, config: GrammarConfig = DEFAULT_GRAMMAR) -> SceneInstance:
    """Regenerate a scene bit-exactly from its own 64-bit seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_obj = int(rng.integers(1, config.max_objects + 1))
    name_ids = np.sort(rng.choice(len(config.objects), size=n_obj, replace=False))
    attr_ids = rng.integers(0, len(config.attributes), size=n_obj)
    objects = tuple(
        (config.objects[int(n)], config.attributes[int(a)]) for n, a in zip(name_ids, attr_ids)
    )
    caption, relations = render_caption(objects, config)
    if not (config.min_caption_len <= len(caption) <= config.max_caption_len):
        raise GrammarError(
            f"rendered caption length {len(caption)} outside "
            f"[{config.min_caption_len}, {config.max_caption_len}]"
        )
    return SceneInstance(id=scene_id, objects=objects, relations=relations, caption=caption, seed=int(seed))


def generate_corpus(n: int, seed: int, config: GrammarConfig = DEFAULT_GRAMMAR) -> list[SceneInstance]:
    """Deterministic list of n scenes derived from one base seed."""
    if n < 1:
        raise GrammarError(f"corpus size must be >= 1, got {n}")
    scenes = []
    for i in range(n):
        instance_seed = derive_seed(seed, "scene", i)
        scenes.append(generate_scene(instance_seed, f"s{i:06d}", config))
    return scenes
