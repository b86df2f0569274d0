"""Shared fixtures for nmtlab tests."""
import os
from typing import Callable, List

import numpy as np
import pytest

from nmtlab.config import ModelConfig, TrainConfig
from nmtlab.core.autodiff import Tensor, constant
from nmtlab.core.model import Seq2Seq
from nmtlab.corpus import Batch, SentencePair, make_batch

TINY_VOCAB = 11


def pytest_collection_modifyitems(config, items):
    """Skip slow learning runs unless NMTLAB_RUN_SLOW=1."""
    if os.environ.get("NMTLAB_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set NMTLAB_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def column() -> Callable[..., Tensor]:
    """Build a (n x 1) constant from values."""

    def build(*values: float) -> Tensor:
        return constant(np.array(values, dtype=np.float64)[:, None])

    return build


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Small Base+Base configuration."""
    return ModelConfig(embed_dim=6, hidden=8, condition_dim=5)


@pytest.fixture
def tiny_model(tiny_config) -> Seq2Seq:
    """Untrained tiny model over an 11-token vocabulary on both sides."""
    return Seq2Seq.initialize(tiny_config, TINY_VOCAB, TINY_VOCAB, seed=7)


@pytest.fixture
def tiny_pairs() -> List[SentencePair]:
    """Three indexed pairs of different lengths."""
    rows = [([4, 5, 6], [7, 8]), ([9, 10], [4, 5, 6, 7]), ([6], [8])]
    return [
        SentencePair(
            [f"s{i}" for i in src], [f"t{i}" for i in tgt], list(src), list(tgt)
        )
        for src, tgt in rows
    ]


@pytest.fixture
def tiny_batch(tiny_pairs) -> Batch:
    """Padded batch of :func:`tiny_pairs`."""
    return make_batch(tiny_pairs)


@pytest.fixture
def no_dropout() -> TrainConfig:
    """Training settings with dropout and clipping off."""
    return TrainConfig(dropout=0.0, clip_norm=0.0)
