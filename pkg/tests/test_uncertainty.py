"""Uncertainty estimator: score range, loss arithmetic, gradients, training."""

import numpy as np
import pytest

from stagecap import corpus, uncertainty
from stagecap.errors import ShapeError
from stagecap.numcore import Graph, grad_check


@pytest.fixture(scope="module")
def small_world():
    scenes = corpus.generate_corpus(60, seed=21)
    vocab = corpus.build_vocab(scenes)
    bow = corpus.build_bow_vocab(vocab, corpus.default_stop_words())
    return scenes, vocab, bow


def toy_model(bow, seed=0, d_v=8):
    cfg = uncertainty.UncertaintyConfig(d_v=d_v, width=8, heads=2, d_ff=8, dropout=0.0)
    return uncertainty.UncertaintyModel(cfg, bow_size=len(bow), seed=seed)


class TestForward:
    def test_scores_in_range(self, small_world):
        scenes, _, bow = small_world
        model = toy_model(bow)
        rng = np.random.default_rng(0)
        pi = model.pi(rng.normal(size=(4, 8)))
        assert pi.shape == (len(bow),)
        assert np.all(pi >= -1.0) and np.all(pi <= 0.0)

    def test_zero_weights_give_minus_half(self, small_world):
        _, _, bow = small_world
        model = toy_model(bow)
        for t in model.parameters():
            t.data = np.zeros(t.shape)
        pi = model.pi(np.random.default_rng(1).normal(size=(3, 8)))
        np.testing.assert_allclose(pi, -0.5, atol=0)

    def test_deterministic(self, small_world):
        _, _, bow = small_world
        model = toy_model(bow)
        feats = np.random.default_rng(2).normal(size=(5, 8))
        assert np.array_equal(model.pi(feats), model.pi(feats))

    def test_width_mismatch_rejected(self, small_world):
        _, _, bow = small_world
        model = toy_model(bow)
        with pytest.raises(ShapeError):
            model.pi(np.zeros((3, 5)))


class TestLoss:
    def test_exact_fit_is_zero(self, small_world):
        _, _, bow = small_world
        caption = ("a", bow.tokens[0], "is", bow.tokens[1])
        pi = -bow.presence(caption)
        assert uncertainty.ue_loss(pi, caption, bow) == 0.0

    def test_zero_scores_count_present_words(self, small_world):
        _, _, bow = small_world
        caption = (bow.tokens[0], bow.tokens[1], bow.tokens[2], "a")
        assert uncertainty.ue_loss(np.zeros(len(bow)), caption, bow) == pytest.approx(3.0)

    def test_half_scores(self):
        bow = corpus.BoWVocabulary(tokens=tuple(f"w{i}" for i in range(10)), stop_words=("a",))
        caption = ("w0", "w1", "w2")
        pi = np.full(10, -0.5)
        assert uncertainty.ue_loss(pi, caption, bow) == pytest.approx(2.5)

    def test_nonnegative_and_zero_iff_exact(self, small_world):
        _, _, bow = small_world
        rng = np.random.default_rng(3)
        caption = (bow.tokens[0], bow.tokens[3])
        for _ in range(50):
            pi = -rng.uniform(0, 1, size=len(bow))
            loss = uncertainty.ue_loss(pi, caption, bow)
            assert loss >= 0.0
            if loss == 0.0:
                assert np.array_equal(pi, -bow.presence(caption))


class TestWordUncertainty:
    def test_mapping(self, small_world):
        _, _, bow = small_world
        pi = np.zeros(len(bow))
        target = bow.tokens[0]
        pi[bow.index_of(target)] = -0.8
        profile = uncertainty.word_uncertainty(pi, (target,), bow)
        assert profile.values[0] == pytest.approx(0.2)

    def test_out_of_vocab_gets_max(self, small_world):
        _, _, bow = small_world
        profile = uncertainty.word_uncertainty(np.zeros(len(bow)), ("a",), bow)
        assert profile.values == (1.0,)

    def test_boundary(self, small_world):
        _, _, bow = small_world
        pi = -np.ones(len(bow))
        profile = uncertainty.word_uncertainty(pi, (bow.tokens[0],), bow)
        assert profile.values[0] == 0.0

    def test_monotone_in_pi(self, small_world):
        _, _, bow = small_world
        token = bow.tokens[0]
        previous = -1.0
        for score in np.linspace(-1, 0, 11):
            pi = np.zeros(len(bow))
            pi[bow.index_of(token)] = score
            value = uncertainty.word_uncertainty(pi, (token,), bow).values[0]
            assert value >= previous
            previous = value

    def test_range_invariant(self, small_world):
        _, _, bow = small_world
        rng = np.random.default_rng(4)
        for _ in range(20):
            pi = -rng.uniform(0, 1, size=len(bow))
            caption = tuple(rng.choice(bow.tokens, size=5)) + ("a",)
            profile = uncertainty.word_uncertainty(pi, caption, bow)
            assert all(0.0 <= v <= 1.0 for v in profile.values)


class TestGradients:
    def test_ue_loss_grad_check(self, small_world):
        scenes, _, bow = small_world
        model = toy_model(bow, seed=5)
        pick = [s for s in scenes if len(s.objects) == 3][:2]
        feats = np.stack([corpus.region_features(s, 0.0, 8) for s in pick])
        presence = np.stack([bow.presence(s.caption) for s in pick])

        def build():
            g = Graph()
            return model.loss_var(g, feats, presence)

        report = grad_check(build, model.parameters(), rng=np.random.default_rng(0))
        assert report.max_rel_err < 1e-4, report.per_param


class TestTraining:
    def test_loss_halves_and_stats(self, small_world):
        scenes, _, bow = small_world
        result = uncertainty.train_ue(scenes, bow, seed=3, epochs=12, batch_size=16)
        assert result.epoch_losses[-1] <= 0.5 * result.epoch_losses[0]
        assert 0.0 <= result.u_avg <= 1.0

    def test_training_deterministic(self, small_world):
        scenes, _, bow = small_world
        a = uncertainty.train_ue(scenes[:30], bow, seed=9, epochs=2, batch_size=8)
        b = uncertainty.train_ue(scenes[:30], bow, seed=9, epochs=2, batch_size=8)
        assert a.epoch_losses == b.epoch_losses
        assert a.u_avg == b.u_avg
        for name, arr in a.model.state_tensors().items():
            assert np.array_equal(arr, b.model.state_tensors()[name])
