"""Tests for model labels, scoring and the comparison table."""
import numpy as np
import pytest

from nmtlab.attention.base_attention import AlignmentMatrix
from nmtlab.config import EvalConfig
from nmtlab.const import AttentionKind, DecoderKind
from nmtlab.decode import Translation
from nmtlab.exceptions import ConfigError
from nmtlab.experiments import (
    DEFAULT_MODELS,
    ComparisonRow,
    format_table,
    parse_model_label,
    score_translations,
)


class TestLabels:
    def test_attention_and_decoder(self):
        """Labels name the attention unit and the decoder."""
        assert parse_model_label("recatt+conddec") == (
            AttentionKind.RECATT,
            DecoderKind.CONDDEC,
        )

    def test_decoder_defaults_to_base(self):
        """A bare attention name uses the plain decoder."""
        expected = (AttentionKind.HYBRID2, DecoderKind.BASE)
        assert parse_model_label(" hybrid2 ") == expected

    def test_defaults_are_valid(self):
        """Every default label parses."""
        assert len({parse_model_label(label) for label in DEFAULT_MODELS}) == len(
            DEFAULT_MODELS
        )

    @pytest.mark.parametrize("label", ["rnnsearch", "base+lstm", "+base"])
    def test_invalid(self, label):
        """Unknown variants are configuration errors."""
        with pytest.raises(ConfigError):
            parse_model_label(label)


def test_score_translations():
    """Test raw and post-processed BLEU with diagnostic flag rates."""
    diagonal = AlignmentMatrix(np.eye(2))
    stuck = AlignmentMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
    translations = [
        Translation(
            src_tokens=["a", "b"],
            tokens=["x", "y"],
            raw_tokens=["x", "<unk>"],
            ids=[4, 3],
            score=-1.0,
            alignment=diagonal,
        ),
        Translation(
            src_tokens=["c", "d"],
            tokens=["z", "z"],
            raw_tokens=["z", "z"],
            ids=[6, 6],
            score=-2.0,
            alignment=stuck,
        ),
    ]
    references = [["x", "y"], ["z", "w"]]
    raw, post, repetition, coverage = score_translations(
        translations, references, EvalConfig(smoothing=True)
    )
    assert raw.precisions[0] == pytest.approx(2 / 4)
    assert post.precisions[0] == pytest.approx(3 / 4)
    assert post.score > raw.score
    assert (repetition, coverage) == (0.5, 0.5)


def test_format_table():
    """Test the fixed-width comparison table."""
    rows = [
        ComparisonRow("base+base", 0.25, 0.3, 0.05, 0.5, 0.0, 40),
        ComparisonRow("recatt+base", 0.3125, 0.35, 0.0375, 0.25, 0.125, 40),
    ]
    lines = format_table(rows).splitlines()
    assert lines[0].split() == ["model", "BLEU", "+post", "gain", "rep%", "cov%"]
    assert set(lines[1]) == {"-"}
    assert lines[2].split() == ["base+base", "25.00", "30.00", "5.00", "50.0", "0.0"]
    assert lines[3].split()[:2] == ["recatt+base", "31.25"]
    assert rows[0].to_dict()["updates"] == 40
