"""Region feature synthesis (the stand-in for image encoders).

Each scene object becomes one region vector: a fixed codebook embedding
of its name plus one of its attribute, plus optional Gaussian noise.
Everything is a pure function of (scene, feature_seed, sigma), so the
same scene always presents the same "image".
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import CorpusError
from ..seeding import derive_seed
from .grammar import DEFAULT_GRAMMAR, GrammarConfig, SceneInstance


@lru_cache(maxsize=8)
def _codebook(words: tuple[str, ...], d_v: int, seed: int, tag: str) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "codebook", tag)))
    return {w: rng.normal(0.0, 1.0, size=d_v) for w in words}


def region_features(
    scene: SceneInstance,
    sigma: float = 0.0,
    d_v: int = 32,
    feature_seed: int = 0,
    grammar: GrammarConfig = DEFAULT_GRAMMAR,
) -> np.ndarray:
    """(len(objects), d_v) float64 region matrix for one scene."""
    if sigma < 0:
        raise CorpusError(f"noise sigma must be >= 0, got {sigma}")
    if d_v < 4:
        raise CorpusError(f"d_v must be >= 4, got {d_v}")
    objects = _codebook(grammar.objects, d_v, feature_seed, "objects")
    attributes = _codebook(grammar.attributes, d_v, feature_seed, "attributes")
    rows = np.empty((len(scene.objects), d_v))
    for r, (name, attr) in enumerate(scene.objects):
        if name not in objects:
            raise CorpusError(f"unknown object word {name!r}")
        if attr not in attributes:
            raise CorpusError(f"unknown attribute word {attr!r}")
        rows[r] = objects[name] + attributes[attr]
    if sigma > 0:
        noise_rng = np.random.Generator(np.random.PCG64(derive_seed(feature_seed, "noise", scene.seed)))
        rows += noise_rng.normal(0.0, sigma, size=rows.shape)
    return rows


def features_for(
    scenes,
    sigma: float = 0.0,
    d_v: int = 32,
    feature_seed: int = 0,
    grammar: GrammarConfig = DEFAULT_GRAMMAR,
) -> dict[str, np.ndarray]:
    """Scene id -> region matrix, computed once per corpus."""
    return {s.id: region_features(s, sigma, d_v, feature_seed, grammar) for s in scenes}
