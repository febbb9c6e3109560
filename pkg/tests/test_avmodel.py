import itertools

import numpy as np
import pytest

from avguard import avdata, avmodel
from avguard import numerics as nm
from avguard.avmodel import (
    InfeasibleTargetError,
    SeqModel,
    TrainConfig,
    WordModel,
    ctc_brute_force,
    ctc_greedy_decode,
    ctc_loss,
    edit_distance,
    wer,
)


def uniform_logprobs(frames, classes):
    return np.log(np.full((frames, classes), 1.0 / classes))


def random_logprobs(frames, classes, rng):
    x = rng.normal(size=(frames, classes))
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


class TestWordForward:
    def test_deterministic_and_shaped(self, word_corpus, word_model):
        rec, clip = avdata.load_split(word_corpus, "test")[0]
        a, v = avmodel.clip_arrays(clip)
        first = word_model.forward(a, v).logits.data
        second = word_model.forward(a, v).logits.data
        assert first.shape == (word_corpus.classes,)
        np.testing.assert_array_equal(first, second)
        assert np.all(np.isfinite(first))

    def test_cross_entropy_input_gradient(self):
        # tiny dimensions keep the finite-difference sweep fast
        model = WordModel(3, samples_per_frame=8, pixels=9,
                          config=avmodel.ModelConfig(4, 3, 4, 3), seed=5)
        rng = np.random.default_rng(0)
        audio = rng.uniform(-2000, 2000, size=(2, 8))
        video = rng.uniform(0, 255, size=(2, 9))
        assert nm.grad_check(lambda x: model.loss_from(model.forward(x, video), 1), audio, step=0.1) < 1e-4
        assert nm.grad_check(lambda x: model.loss_from(model.forward(audio, x), 1), video, step=0.1) < 1e-4

    def test_dimension_mismatch(self, word_model):
        with pytest.raises(nm.ShapeError):
            word_model.forward(np.zeros((4, 10)), np.zeros((4, word_model.pixels)))


class TestCtcLoss:
    def test_single_frame_uniform(self):
        loss = ctc_loss(uniform_logprobs(1, 3), [0])
        assert abs(loss.item() - np.log(3.0)) < 1e-12

    def test_two_frames_uniform_three_paths(self):
        loss = ctc_loss(uniform_logprobs(2, 3), [0])
        assert abs(loss.item() - (-np.log(3.0 / 9.0))) < 1e-12

    def test_infeasible_target(self):
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(uniform_logprobs(2, 3), [0, 0, 1])  # needs >= 4 frames
        with pytest.raises(InfeasibleTargetError):
            ctc_loss(uniform_logprobs(1, 3), [0, 0])  # repeat needs a blank

    def test_matches_brute_force_enumeration(self, rng):
        for vocab, frames in itertools.product((1, 2, 3), (1, 2, 3, 4)):
            lp = random_logprobs(frames, vocab + 1, rng)
            for length in range(1, frames + 1):
                for target in itertools.product(range(vocab), repeat=length):
                    expected = ctc_brute_force(lp, target)
                    if np.isinf(expected):
                        with pytest.raises(InfeasibleTargetError):
                            ctc_loss(lp, target)
                        continue
                    assert abs(ctc_loss(lp, target).item() - expected) < 1e-9

    def test_probability_mass_partitions(self, rng):
        # all collapsed labelings partition path space: probabilities sum to
        # one, so every loss is non-negative
        for frames in (1, 2, 3):
            lp = random_logprobs(frames, 3, rng)
            mass = 0.0
            for length in range(0, frames + 1):
                for target in itertools.product(range(2), repeat=length):
                    if length == 0:
                        # all-blank-or-repeat paths collapse to the empty string
                        blank_mass = sum(
                            np.exp(sum(lp[t, c] for t, c in enumerate(path)))
                            for path in itertools.product(range(3), repeat=frames)
                            if not [c for k, c in enumerate(path)
                                    if c != 0 and (k == 0 or path[k - 1] != c)]
                        )
                        mass += blank_mass
                        continue
                    nll = ctc_brute_force(lp, target)
                    if np.isinf(nll):
                        continue
                    assert nll >= -1e-12
                    assert abs(ctc_loss(lp, target).item() - nll) < 1e-9
                    mass += np.exp(-nll)
            assert abs(mass - 1.0) < 1e-9

    def test_gradient_via_grad_check(self, rng):
        def f(x):
            return ctc_loss(nm.log_softmax(x), [1, 0, 0, 2])

        assert nm.grad_check(f, rng.normal(size=(8, 4)), step=1e-5) < 1e-4


class TestDecode:
    def test_collapse_rule(self):
        frames = np.full((5, 3), -10.0)
        for t, c in enumerate([0, 1, 1, 0, 2]):
            frames[t, c] = 0.0
        assert ctc_greedy_decode(frames) == (0, 1)

    def test_all_blanks(self):
        frames = np.zeros((4, 3))
        frames[:, 0] = 5.0
        assert ctc_greedy_decode(frames) == ()

    def test_blank_separates_repeats(self):
        frames = np.full((3, 3), -10.0)
        for t, c in enumerate([1, 0, 1]):
            frames[t, c] = 0.0
        assert ctc_greedy_decode(frames) == (0, 0)


class TestWer:
    def test_identical(self):
        phrase = ("bin", "blue", "at", "a", "zero", "please")
        assert wer(phrase, phrase) == 0.0

    def test_single_substitution_in_six(self):
        ref = ("bin", "blue", "at", "a", "zero", "please")
        hyp = ("bin", "blue", "at", "a", "zero", "now")
        assert wer(ref, hyp) == pytest.approx(1.0 / 6.0)

    def test_empty_hypothesis(self):
        assert wer(("a",) * 6, ()) == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            wer((), ("a",))

    def test_unnormalized_distance_is_symmetric(self, rng):
        for _ in range(50):
            a = tuple(rng.integers(0, 4, size=rng.integers(1, 8)))
            b = tuple(rng.integers(0, 4, size=rng.integers(0, 8)))
            assert edit_distance(a, b) == edit_distance(b, a)
        assert edit_distance((1, 2, 3), (1, 2, 3)) == 0


class TestSeqModel:
    def test_rows_are_distributions(self, sentence_corpus, seq_model):
        rec, clip = avdata.load_split(sentence_corpus, "test")[0]
        out = seq_model.forward(*avmodel.clip_arrays(clip))
        sums = np.exp(out.logprobs.data).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-9)

    def test_ctc_input_gradient(self):
        model = SeqModel(3, samples_per_frame=8, pixels=9,
                         config=avmodel.ModelConfig(4, 3, 4, 3), seed=5)
        rng = np.random.default_rng(0)
        audio = rng.uniform(-2000, 2000, size=(5, 8))
        video = rng.uniform(0, 255, size=(5, 9))

        def f(x):
            return model.loss_from(model.forward(x, video), (1, 2))

        assert nm.grad_check(f, audio, step=0.1) < 1e-4


class TestTraining:
    def test_word_validation_accuracy(self, word_model):
        history = word_model.train_history
        assert len(history) == avmodel.WORD_TRAIN_DEFAULTS.epochs
        assert max(history) >= 0.95

    def test_seq_validation_wer(self, seq_model):
        history = seq_model.train_history
        assert len(history) == avmodel.SEQ_TRAIN_DEFAULTS.epochs
        assert min(history) <= 0.05

    def test_training_is_deterministic(self, tmp_path):
        cfg = avdata.word_corpus_config(counts={"train": 12, "val": 4, "test": 4})
        manifest = avdata.make_corpus(cfg, tmp_path / "c")
        outs = []
        for _ in range(2):
            model = avmodel.WordModelFor(manifest, seed=3)
            avmodel.train_word(model, manifest, TrainConfig(epochs=3, seed=7))
            outs.append(np.concatenate([model.params[k].data.ravel() for k in sorted(model.params)]))
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_empty_split_rejected(self, tmp_path, word_corpus):
        model = avmodel.WordModelFor(word_corpus, seed=0)
        empty = avdata.CorpusManifest(root=word_corpus.root, kind="word", classes=10,
                                      vocab=[], clip=word_corpus.clip, records=[])
        with pytest.raises(ValueError):
            avmodel.train_word(model, empty, TrainConfig())


class TestCheckpoints:
    def test_round_trip_word(self, tmp_path, word_model, word_corpus):
        path = tmp_path / "word.ckpt"
        avmodel.save_model(word_model, path)
        loaded = avmodel.load_model(path)
        rec, clip = avdata.load_split(word_corpus, "test")[0]
        a, v = avmodel.clip_arrays(clip)
        np.testing.assert_array_equal(loaded.forward(a, v).logits.data,
                                      word_model.forward(a, v).logits.data)

    def test_round_trip_seq(self, tmp_path, seq_model, sentence_corpus):
        path = tmp_path / "seq.ckpt"
        avmodel.save_model(seq_model, path)
        loaded = avmodel.load_model(path)
        rec, clip = avdata.load_split(sentence_corpus, "test")[0]
        assert loaded.transcribe(clip) == seq_model.transcribe(clip)
