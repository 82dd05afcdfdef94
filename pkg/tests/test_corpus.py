"""Corpus generation, features, vocabularies, and file round trips."""

import numpy as np
import pytest

from stagecap import corpus
from stagecap.errors import CorpusError, FormatError, GrammarError


@pytest.fixture(scope="module")
def scenes5000():
    return corpus.generate_corpus(5000, seed=7)


class TestGeneration:
    def test_same_seed_same_instance(self):
        a = corpus.generate_corpus(1, seed=7)[0]
        b = corpus.generate_corpus(1, seed=7)[0]
        assert a == b

    def test_instance_regenerable_from_own_seed(self, scenes5000):
        for scene in scenes5000[:50]:
            again = corpus.generate_scene(scene.seed, scene.id)
            assert again == scene

    def test_caption_lengths_within_bounds(self, scenes5000):
        assert len(scenes5000) == 5000
        lengths = {len(s.caption) for s in scenes5000}
        assert min(lengths) >= 4
        assert max(lengths) <= 20

    def test_long_captions_are_common(self, scenes5000):
        frac = sum(len(s.caption) >= 10 for s in scenes5000) / len(scenes5000)
        assert frac > 0.3

    def test_vocab_covers_grammar_terminals(self, scenes5000):
        terminals = corpus.DEFAULT_GRAMMAR.terminals()
        vocab = corpus.build_vocab(scenes5000, min_count=1)
        missing = terminals - set(vocab.tokens)
        assert not missing

    def test_relation_indices_valid(self, scenes5000):
        for s in scenes5000[:200]:
            for _, i, j in s.relations:
                assert 0 <= i < len(s.objects)
                assert 0 <= j < len(s.objects)

    def test_unknown_template_symbol_rejected(self):
        with pytest.raises(GrammarError, match="unknown word class"):
            corpus.GrammarConfig(pair_template=("a", "COLOUR", "OBJ_S", "REL", "the", "ATTR_O", "OBJ_O"))


class TestRegionFeatures:
    def test_shape(self):
        scene = corpus.generate_corpus(1, seed=3)[0]
        feats = corpus.region_features(scene, sigma=0.0, d_v=16)
        assert feats.shape == (len(scene.objects), 16)

    def test_sigma_zero_depends_only_on_content(self):
        scenes = corpus.generate_corpus(400, seed=11)
        by_content = {}
        for s in scenes:
            by_content.setdefault(s.objects, []).append(s)
        dup = next((v for v in by_content.values() if len(v) > 1), None)
        assert dup is not None, "expected at least one repeated object list in 400 scenes"
        f0 = corpus.region_features(dup[0], sigma=0.0, d_v=24)
        f1 = corpus.region_features(dup[1], sigma=0.0, d_v=24)
        assert np.array_equal(f0, f1)

    def test_noisy_features_bit_deterministic(self):
        scene = corpus.generate_corpus(1, seed=5)[0]
        f0 = corpus.region_features(scene, sigma=0.1, d_v=32, feature_seed=9)
        f1 = corpus.region_features(scene, sigma=0.1, d_v=32, feature_seed=9)
        assert np.array_equal(f0, f1)

    def test_unknown_word_rejected(self):
        scene = corpus.generate_corpus(1, seed=5)[0]
        bad = corpus.SceneInstance(
            id=scene.id,
            objects=(("dragon", "red"),),
            relations=(),
            caption=("a", "dragon", "is", "red"),
            seed=scene.seed,
        )
        with pytest.raises(CorpusError, match="unknown object"):
            corpus.region_features(bad)


class TestVocabulary:
    def _mini(self):
        return [
            corpus.SceneInstance("a0", (("cube", "red"),), (), ("a", "cube", "is", "red"), 1),
            corpus.SceneInstance("a1", (("cube", "blue"),), (), ("a", "cube", "is", "blue"), 2),
            corpus.SceneInstance("a2", (("ball", "red"),), (), ("the", "ball", "is", "red"), 3),
        ]

    def test_min_count_one_keeps_all(self):
        vocab = corpus.build_vocab(self._mini(), min_count=1)
        for token in ("a", "the", "cube", "ball", "is", "red", "blue"):
            assert token in vocab

    def test_min_count_filters_rare(self):
        scenes = self._mini()
        # 'blue' appears once, 'red' twice
        vocab = corpus.build_vocab(scenes, min_count=2)
        assert "red" in vocab
        assert "blue" not in vocab

    def test_specials_occupy_first_ids(self):
        vocab = corpus.build_vocab(self._mini())
        assert vocab.tokens[:4] == corpus.SPECIAL_TOKENS
        assert (vocab.pad_id, vocab.bos_id, vocab.eos_id, vocab.none_id) == (0, 1, 2, 3)

    def test_id_order_freq_then_lex(self):
        vocab = corpus.build_vocab(self._mini())
        # 'is' appears 3x -> first corpus token; 'red' 2x before 'a' 2x? both 2 -> lexicographic
        tokens = vocab.tokens[4:]
        counts = {"is": 3, "a": 2, "cube": 2, "red": 2, "ball": 1, "blue": 1, "the": 1}
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        assert list(tokens) == ordered

    def test_bow_is_set_difference(self):
        vocab = corpus.build_vocab(self._mini())
        bow = corpus.build_bow_vocab(vocab, ("a", "the", "is"))
        assert set(bow.tokens) == {"cube", "ball", "red", "blue"}

    def test_bow_empty_stop_list(self):
        vocab = corpus.build_vocab(self._mini())
        bow = corpus.build_bow_vocab(vocab, ())
        assert set(bow.tokens) == set(vocab.tokens[4:])

    def test_stop_token_kept_in_vocab_but_not_bow(self):
        vocab = corpus.build_vocab(self._mini())
        bow = corpus.build_bow_vocab(vocab, ("is",))
        assert "is" in vocab
        assert "is" not in bow

    def test_bow_never_empty(self):
        vocab = corpus.build_vocab(self._mini())
        all_tokens = vocab.tokens[4:]
        with pytest.raises(CorpusError, match="empty"):
            corpus.build_bow_vocab(vocab, all_tokens)

    def test_presence_vector(self):
        vocab = corpus.build_vocab(self._mini())
        bow = corpus.build_bow_vocab(vocab, ("a", "the", "is"))
        psi = bow.presence(("a", "cube", "is", "red"))
        hot = {bow.tokens[i] for i in np.flatnonzero(psi)}
        assert hot == {"cube", "red"}
        assert set(np.unique(psi)) <= {0.0, 1.0}

    def test_default_stop_words_cover_grammar_function_words(self):
        stop = corpus.default_stop_words()
        for w in corpus.DEFAULT_GRAMMAR.function_words:
            assert w in stop


class TestRoundTrips:
    def test_corpus_round_trip(self, tmp_path, scenes5000):
        path = tmp_path / "corpus.jsonl"
        subset = scenes5000[:100]
        corpus.save_corpus(path, subset)
        again = corpus.load_corpus(path)
        assert again == subset

    def test_corpus_schema_violation_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x", "objects": [], "caption": [], "seed": 1}\n')
        with pytest.raises(FormatError, match="line 1"):
            corpus.load_corpus(path)

    def test_vocab_round_trip(self, tmp_path, scenes5000):
        vocab = corpus.build_vocab(scenes5000[:100])
        path = tmp_path / "vocab.json"
        corpus.save_vocab(path, vocab)
        again = corpus.load_vocab(path)
        assert again.tokens == vocab.tokens
        assert again.content_hash() == vocab.content_hash()

    def test_stop_list_parsing(self):
        text = "# comment\n a \nthe # trailing\n\nis\n"
        assert corpus.parse_stop_list(text) == ("a", "the", "is")
