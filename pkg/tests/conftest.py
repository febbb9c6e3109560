"""Session-scoped corpora and trained models shared across test modules.

Training the toy recognizers and the sync embedder takes tens of seconds,
so each happens once per session; tests must not mutate them.
"""

import numpy as np
import pytest

from avguard import avdata, avmodel


@pytest.fixture(scope="session")
def word_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("word-corpus")
    return avdata.make_corpus(avdata.word_corpus_config(), root)


@pytest.fixture(scope="session")
def sentence_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("sentence-corpus")
    return avdata.make_corpus(avdata.sentence_corpus_config(), root)


@pytest.fixture(scope="session")
def word_model(word_corpus):
    model = avmodel.WordModelFor(word_corpus, seed=1)
    history = avmodel.train_word(model, word_corpus, avmodel.WORD_TRAIN_DEFAULTS)
    model.train_history = history
    return model


@pytest.fixture(scope="session")
def seq_model(sentence_corpus):
    model = avmodel.SeqModelFor(sentence_corpus, seed=1)
    history = avmodel.train_seq(model, sentence_corpus, avmodel.SEQ_TRAIN_DEFAULTS)
    model.train_history = history
    return model


@pytest.fixture(scope="session")
def sync_embedder(sentence_corpus):
    from avguard import syncnet

    embedder = syncnet.SyncEmbedderFor(sentence_corpus, seed=1)
    syncnet.train_sync(embedder, sentence_corpus, syncnet.SyncTrainConfig())
    return embedder


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240809)
