import numpy as np
import pytest

from textslider.encoder import EncoderConfig, init_encoder
from textslider.gradcheck import toy_vocab
from textslider.trainer import PromptSpec, TrainConfig, train_slider

TOY = dict(vocab_size=256, max_len=16, d_model=32, n_heads=4, n_layers=2)

# "old vs young" fixture used for the convergence, sweep and runtime checks.
OLD_YOUNG = PromptSpec("person", "person, old", "person, young", [["male", "female"]])


@pytest.fixture(scope="session")
def vocab():
    return toy_vocab()


@pytest.fixture(scope="session")
def toy_config():
    return EncoderConfig(**TOY, seed=0)


@pytest.fixture(scope="session")
def toy_encoder(toy_config):
    return init_encoder(toy_config)


@pytest.fixture(scope="session")
def wide_encoder():
    return init_encoder(EncoderConfig(**{**TOY, "d_model": 48}, seed=1))


@pytest.fixture(scope="session")
def old_young():
    return OLD_YOUNG


@pytest.fixture(scope="session")
def trained(toy_encoder, vocab):
    """Full 500-epoch run on the toy encoder with default hyper-parameters."""
    return train_slider([toy_encoder], vocab, OLD_YOUNG, TrainConfig())


@pytest.fixture(scope="session")
def short_pair(toy_encoder, vocab):
    """Two quickly trained sliders on the same encoder, for composition checks."""
    smile = PromptSpec("person", "person, smiling, happy face", "person, frowning, sad", [["male"]])
    a = train_slider([toy_encoder], vocab, OLD_YOUNG, TrainConfig(epochs=30, learning_rate=1e-2, seed=1)).artifact
    b = train_slider([toy_encoder], vocab, smile, TrainConfig(epochs=30, learning_rate=1e-2, seed=2)).artifact
    return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
