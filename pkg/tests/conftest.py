import numpy as np
import pytest

from metriclab import presets, synthlab
from metriclab.encoder import EncoderConfig, init_model
from metriclab.tokenizer import train_vocab


@pytest.fixture(scope="session")
def small_world():
    return synthlab.make_world(["aa", "bb", "cc", "dd"], concept_space=300)


@pytest.fixture(scope="session")
def small_corpora(small_world):
    return {
        code: synthlab.gen_corpus(small_world[code], 400, seed=11 + i)[0]
        for i, code in enumerate(sorted(small_world))
    }


@pytest.fixture(scope="session")
def small_vocab(small_corpora):
    lines = [s for v in small_corpora.values() for s in v]
    return train_vocab(lines, 420)


@pytest.fixture(scope="session")
def tiny_config(small_vocab):
    return EncoderConfig(
        layers=2,
        hidden=32,
        input_emb_dim=16,
        output_emb_dim=48,
        heads=2,
        head_dim=16,
        vocab_size=small_vocab.size,
        max_len=24,
        ffn_dim=64,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return init_model(tiny_config, seed=7)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(1234))
