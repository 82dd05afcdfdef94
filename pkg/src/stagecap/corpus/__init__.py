"""Synthetic scene/caption corpus, region features, and vocabularies."""

from .features import features_for, region_features
from .grammar import (
    ATTRIBUTE_WORDS,
    DEFAULT_GRAMMAR,
    OBJECT_WORDS,
    RELATION_WORDS,
    GrammarConfig,
    SceneInstance,
    generate_corpus,
    generate_scene,
    render_caption,
)
from .io import (
    DEFAULT_STOP_LIST,
    default_stop_words,
    load_corpus,
    load_stop_list,
    load_vocab,
    parse_stop_list,
    save_corpus,
    save_vocab,
)
from .vocab import (
    BOS,
    EOS,
    NONE,
    PAD,
    SPECIAL_TOKENS,
    BoWVocabulary,
    Vocabulary,
    build_bow_vocab,
    build_vocab,
)

__all__ = [
    "ATTRIBUTE_WORDS",
    "BOS",
    "BoWVocabulary",
    "DEFAULT_GRAMMAR",
    "DEFAULT_STOP_LIST",
    "EOS",
    "GrammarConfig",
    "NONE",
    "OBJECT_WORDS",
    "PAD",
    "RELATION_WORDS",
    "SPECIAL_TOKENS",
    "SceneInstance",
    "Vocabulary",
    "build_bow_vocab",
    "build_vocab",
    "default_stop_words",
    "features_for",
    "generate_corpus",
    "generate_scene",
    "load_corpus",
    "load_stop_list",
    "load_vocab",
    "parse_stop_list",
    "region_features",
    "render_caption",
    "save_corpus",
    "save_vocab",
]
