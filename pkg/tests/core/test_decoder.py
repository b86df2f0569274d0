"""Tests for the decoder variants and the deep output layer."""
import numpy as np
import pytest

from nmtlab.config import ModelConfig
from nmtlab.core.autodiff import constant
from nmtlab.core.decoder import (
    CondDecDecoder,
    DecoderState,
    InputFeedDecoder,
    OutputParams,
    conddec_step,
    decoder_step_inputfeed,
    deep_output,
    get_decoder_class,
    last_states,
    output_shapes,
)
from nmtlab.core.model import Seq2Seq
from nmtlab.exceptions import ConfigError, DimensionError

VOCAB = 11


@pytest.fixture
def conddec_model():
    """Tiny Base+CondDec model."""
    config = ModelConfig(decoder="conddec", embed_dim=6, hidden=8, condition_dim=5)
    return Seq2Seq.initialize(config, VOCAB, VOCAB, seed=11)


def test_condition_decays_monotonically(conddec_model, tiny_batch):
    """Test that |sd| never grows from one step to the next."""
    result = conddec_model.forward(
        tiny_batch.src, tiny_batch.src_mask, tiny_batch.decoder_inputs
    )
    conditions = [c.data for c in result.conditions]
    assert conditions[0].shape == (5, tiny_batch.size)
    for before, after in zip(conditions, conditions[1:]):
        assert np.all(np.abs(after) <= np.abs(before))


def test_conddec_step_gate_bounds(conddec_model, column):
    """Test that an all-ones condition shrinks to the gate values in (0, 1)."""
    decoder = conddec_model.decoder
    hidden, embed = 8, 6
    h, sd = conddec_step(
        constant(np.zeros((hidden, 1))),
        constant(np.full((embed, 1), 0.1)),
        constant(np.full((2 * hidden, 1), 0.2)),
        constant(np.ones((5, 1))),
        decoder.gru,
        decoder.cond,
    )
    assert h.shape == (hidden, 1)
    assert np.all((sd.data > 0.0) & (sd.data < 1.0))
    with pytest.raises(DimensionError):
        conddec_step(
            constant(np.zeros((hidden, 1))),
            column(*[0.1] * embed),
            column(*[0.2] * (2 * hidden)),
            column(1.0, 1.0),
            decoder.gru,
            decoder.cond,
        )


def test_last_states_picks_each_sentence_end(conddec_model, tiny_batch):
    """Test that s_T is read at each column's last real position."""
    source = conddec_model.encode(tiny_batch.src, tiny_batch.src_mask)
    picked = last_states(source.states).data
    stacked = source.states.stacked.data
    for b, length in enumerate(tiny_batch.src_lengths):
        np.testing.assert_allclose(picked[:, b], stacked[length - 1, :, b])


def test_inputfeed_context_shapes_must_agree():
    """Test that c_{i-1} and c_i must have the same shape."""
    config = ModelConfig(decoder="inputfeed", embed_dim=4, hidden=3)
    model = Seq2Seq.initialize(config, VOCAB, VOCAB, seed=1)
    assert isinstance(model.decoder, InputFeedDecoder)
    assert model.params["dec.V"].shape == (3, 12)
    with pytest.raises(DimensionError):
        decoder_step_inputfeed(
            constant(np.zeros((3, 1))),
            constant(np.zeros((4, 1))),
            constant(np.zeros((6, 1))),
            constant(np.zeros((6, 2))),
            model.decoder.gru,
        )


class TestDeepOutput:
    def test_logits_shape(self, tiny_model, rng):
        """Readout yields one logit per target word per column."""
        out = tiny_model.output
        logits = deep_output(
            constant(rng.normal(size=(8, 2))),
            constant(rng.normal(size=(16, 2))),
            constant(rng.normal(size=(6, 2))),
            out,
        )
        assert logits.shape == (VOCAB, 2)

    def test_dropout_mask_applies_to_maxout_layer(self, tiny_model, rng):
        """A zero mask leaves only zero logits."""
        logits = deep_output(
            constant(rng.normal(size=(8, 1))),
            constant(rng.normal(size=(16, 1))),
            constant(rng.normal(size=(6, 1))),
            tiny_model.output,
            constant(np.zeros((8, 1))),
        )
        np.testing.assert_array_equal(logits.data, 0.0)

    def test_feature_size_checked(self, tiny_model):
        """[h; c; y] must match the pool maps."""
        with pytest.raises(DimensionError):
            deep_output(
                constant(np.zeros((8, 1))),
                constant(np.zeros((8, 1))),
                constant(np.zeros((6, 1))),
                tiny_model.output,
            )

    def test_pool_needs_two_maps(self, tiny_model):
        """A single map is not a maxout."""
        with pytest.raises(ConfigError):
            OutputParams(pools=[tiny_model.output.pools[0]], R=tiny_model.output.R)

    def test_output_shapes(self):
        """Pool maps read [h; c; y]; the readout maps maxout units to words."""
        config = ModelConfig(embed_dim=4, hidden=3, maxout_units=5, maxout_pool=3)
        shapes = output_shapes(config, 20)
        assert shapes["out.P2"] == (5, 3 + 6 + 4)
        assert shapes["out.R"] == (20, 5)
        assert "out.P3" not in shapes

    def test_maxout_units_take_the_pool_maximum(self, tiny_model, rng):
        """Each hidden unit is the largest of its pool's linear responses."""
        out = tiny_model.output
        h, c, y = (rng.normal(size=(n, 3)) for n in (8, 16, 6))
        features = np.concatenate([h, c, y], axis=0)
        responses = np.stack([p.data @ features for p in out.pools])
        expected = out.R.data @ responses.max(axis=0)
        logits = deep_output(constant(h), constant(c), constant(y), out)
        np.testing.assert_allclose(logits.data, expected, atol=1e-12)

    def test_pool_order_does_not_matter(self, rng):
        """Permuting the pool maps leaves the logits unchanged."""
        config = ModelConfig(embed_dim=6, hidden=8, maxout_pool=4)
        model = Seq2Seq.initialize(config, VOCAB, VOCAB, seed=5)
        out = model.output
        h, c, y = (constant(rng.normal(size=(n, 2))) for n in (8, 16, 6))
        reference = deep_output(h, c, y, out).data
        for _ in range(5):
            order = rng.permutation(len(out.pools))
            shuffled = OutputParams(pools=[out.pools[k] for k in order], R=out.R)
            logits = deep_output(h, c, y, shuffled)
            np.testing.assert_array_equal(logits.data, reference)


class TestRegistry:
    def test_lookup(self):
        """Decoder kinds resolve from their string values."""
        assert get_decoder_class("conddec") is CondDecDecoder

    def test_unknown(self):
        """An unknown decoder is a configuration error."""
        with pytest.raises(ConfigError):
            get_decoder_class("transformer")


def test_state_select_and_merge(conddec_model, tiny_batch):
    """Test that states split into columns and merge back unchanged."""
    source = conddec_model.encode(tiny_batch.src, tiny_batch.src_mask)
    state = conddec_model.initial_state(source)
    parts = [state.select([b]) for b in range(tiny_batch.size)]
    merged = DecoderState.merge(parts)
    np.testing.assert_allclose(merged.h.data, state.h.data)
    np.testing.assert_allclose(merged.sd.data, state.sd.data)
    np.testing.assert_allclose(
        merged.attention.c_prev.data, state.attention.c_prev.data
    )
