"""Tests for the attention units."""
import numpy as np
import pytest

from nmtlab.attention import (
    ATTENTION_UNITS,
    AttentionState,
    Hybrid2Attention,
    attend_base,
    attend_hybrid1,
    attend_hybrid2,
    collect_alignment,
    get_attention_class,
    get_available_attention,
)
from nmtlab.attention.hybrid import (
    attention_centre,
    location_features,
    uniform_weights,
)
from nmtlab.config import ModelConfig
from nmtlab.const import AttentionKind, DecoderKind
from nmtlab.core.autodiff import concat, constant
from nmtlab.core.encoder import GruParams, gru_step
from nmtlab.core.model import Seq2Seq
from nmtlab.core.params import ModelParams
from nmtlab.exceptions import ConfigError, ContractError, DimensionError

VOCAB = 11
DIMS = {"embed_dim": 6, "hidden": 8, "condition_dim": 5}


def _model(attention, decoder="base", seed=3, **extra):
    config = ModelConfig(attention=attention, decoder=decoder, **DIMS, **extra)
    return Seq2Seq.initialize(config, VOCAB, VOCAB, seed=seed)


def _reduced(model, attention="base", decoder="base", drop=(), remap=None):
    """Base-variant model sharing every common block of ``model``."""
    arrays = model.params.to_arrays()
    for name in drop:
        arrays.pop(name)
    for name, value in (remap or {}).items():
        arrays[name] = value
    config = ModelConfig(attention=attention, decoder=decoder, **DIMS)
    return Seq2Seq(config, VOCAB, VOCAB, ModelParams.from_arrays(arrays))


def _forward(model, batch):
    return model.forward(batch.src, batch.src_mask, batch.decoder_inputs)


@pytest.mark.parametrize("attention", [k.value for k in AttentionKind])
def test_weights_form_a_distribution(attention, tiny_batch):
    """Test that every unit puts all its mass on real source positions."""
    result = _forward(_model(attention), tiny_batch)
    for weights in result.weights:
        data = weights.data
        assert data.shape == tiny_batch.src_mask.shape
        np.testing.assert_allclose(data.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(data[~tiny_batch.src_mask.astype(bool)] == 0.0)
        assert np.all(data >= 0.0)


@pytest.mark.parametrize("attention", [k.value for k in AttentionKind])
def test_context_stays_inside_annotation_envelope(attention, tiny_pairs):
    """Test that each context entry lies between the annotation extremes."""
    model = _model(attention)
    pair = tiny_pairs[0]
    source = model.encode(pair.src_ids)
    state = model.initial_state(source)
    annotations = source.states.stacked.data[:, :, 0]
    for prev in (1, 7, 8):
        weights, context = model.attention.attend(
            state.h, state.attention, source.states, source.keys
        )
        c = context.data[:, 0]
        assert np.all(c <= annotations.max(axis=0) + 1e-12)
        assert np.all(c >= annotations.min(axis=0) - 1e-12)
        state, _, _ = model.step(state, [prev], source)


def _random_source(rng, batch=3, longest=6):
    """Random padded (T x B) ids and mask with at least one real token each."""
    lengths = rng.integers(1, longest + 1, size=batch)
    steps = int(lengths.max())
    mask = np.arange(steps)[:, None] < lengths[None, :]
    ids = rng.integers(4, VOCAB, size=(steps, batch))
    ids[~mask] = 0
    return ids, mask


@pytest.mark.parametrize("attention", [k.value for k in AttentionKind])
def test_random_weights_and_contexts(attention, rng):
    """Test the simplex and envelope properties on random models and masks."""
    for round_ in range(100):
        model = _model(attention, seed=round_)
        ids, mask = _random_source(rng)
        source = model.encode(ids, mask)
        state = model.initial_state(source)
        annotations = source.states.stacked.data
        for _ in range(4):
            weights, context = model.attention.attend(
                state.h, state.attention, source.states, source.keys
            )
            w = weights.data
            assert np.all(w >= 0.0)
            assert np.all(w[~mask] == 0.0)
            np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-9)
            for b in range(ids.shape[1]):
                real = annotations[mask[:, b], :, b]
                assert np.all(context.data[:, b] <= real.max(axis=0) + 1e-12)
                assert np.all(context.data[:, b] >= real.min(axis=0) - 1e-12)
            prev = rng.integers(4, VOCAB, size=ids.shape[1])
            state, _, _ = model.step(state, prev, source)


def test_rnnatt_two_step_unroll():
    """Test that two decoder steps equal hand-chained ATT_OUT and ATT_RNN calls."""
    model = _model("rnnatt")
    unit = model.attention
    cell = GruParams.from_params(model.params, "att_rnn")
    source = model.encode([4, 5, 6])
    state0 = model.initial_state(source)
    state1, _, w1 = model.step(state0, [1], source)
    _, _, w2 = model.step(state1, [7], source)

    q0 = constant(np.zeros((cell.hidden, 1)))
    w1_hand, c1 = attend_base(q0, source.states, unit)
    q1 = gru_step(concat([state0.h, c1], axis=0), q0, cell)
    w2_hand, _ = attend_base(q1, source.states, unit)
    np.testing.assert_allclose(w1.data, w1_hand.data, atol=1e-12)
    np.testing.assert_allclose(w2.data, w2_hand.data, atol=1e-12)
    np.testing.assert_allclose(state1.attention.q.data, q1.data, atol=1e-12)


def test_rnnatt_zero_cell_keeps_zero_state():
    """With a zero ATT_RNN cell q stays at 0.5 * q_prev."""
    model = _model("rnnatt")
    for name in model.params:
        if name.startswith("att_rnn."):
            model.params[name].data[...] = 0.0
    unit = model.attention
    source = model.encode([4, 5])
    state = model.initial_state(source)
    weights, context = unit.attend(state.h, state.attention, source.states, source.keys)
    advanced = unit.advance(state.attention, state.h, weights, context)
    np.testing.assert_array_equal(advanced.q.data, 0.0)


class TestReductions:
    def test_recatt_with_zero_v_equals_base(self, tiny_batch):
        """RecAtt degenerates to Base when V = 0."""
        rec = _model("recatt")
        rec.params["att.V"].data[...] = 0.0
        base = _reduced(rec, drop=("att.V",))
        expected = _forward(base, tiny_batch).log_probs
        for a, b in zip(_forward(rec, tiny_batch).log_probs, expected):
            np.testing.assert_array_equal(a.data, b.data)

    def test_hybrid2_with_zero_kernel_equals_base(self, tiny_batch):
        """Hybrid2 degenerates to Base when Q = 0."""
        hyb = _model("hybrid2")
        hyb.params["att.Q"].data[...] = 0.0
        base = _reduced(hyb, drop=("att.Q", "att.G"))
        hyb_out, base_out = _forward(hyb, tiny_batch), _forward(base, tiny_batch)
        for a, b in zip(hyb_out.weights, base_out.weights):
            np.testing.assert_allclose(a.data, b.data, atol=1e-12)
        for a, b in zip(hyb_out.log_probs, base_out.log_probs):
            np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_inputfeed_with_zero_feedback_equals_base(self, tiny_batch):
        """InputFeed degenerates to Base when the c_prev columns are zero."""
        feed = _model("base", "inputfeed")
        width = 2 * DIMS["hidden"]
        remap = {}
        for name in ("dec.V", "dec.Vr", "dec.Vz"):
            feed.params[name].data[:, width:] = 0.0
            remap[name] = feed.params[name].data[:, :width].copy()
        base = _reduced(feed, remap=remap)
        expected = _forward(base, tiny_batch).log_probs
        for a, b in zip(_forward(feed, tiny_batch).log_probs, expected):
            np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_conddec_with_zero_injection_matches_base(self, tiny_batch):
        """CondDec with Vh = 0 produces the Base decoder's outputs."""
        cond = _model("base", "conddec")
        cond.params["dec.Vh"].data[...] = 0.0
        base = _reduced(cond, drop=("dec.Wd", "dec.Ud", "dec.Vd", "dec.Vh", "dec.M"))
        cond_out = _forward(cond, tiny_batch)
        for a, b in zip(cond_out.log_probs, _forward(base, tiny_batch).log_probs):
            np.testing.assert_allclose(a.data, b.data, atol=1e-12)
        assert len(cond_out.conditions) == len(cond_out.log_probs) + 1


class TestLocation:
    def test_uniform_initial_weights(self, tiny_batch):
        """w_0 is uniform over each sentence's real positions."""
        model = _model("hybrid1")
        source = model.encode(tiny_batch.src, tiny_batch.src_mask)
        w0 = uniform_weights(source.states).data
        np.testing.assert_allclose(w0[:, 0], [1 / 3] * 3)
        np.testing.assert_allclose(w0[:, 1], [0.5, 0.5, 0.0])
        np.testing.assert_allclose(w0[:, 2], [1.0, 0.0, 0.0])

    def test_attention_centre_is_one_based(self):
        """m = sum_j j * w_j with j starting at 1."""
        w = constant(np.array([[1.0, 0.0], [0.0, 0.5], [0.0, 0.5]]))
        np.testing.assert_allclose(attention_centre(w).data, [1.0, 2.5])

    def test_uniform_centre_is_the_middle(self):
        """Uniform weights over T positions have centre (T + 1) / 2."""
        for steps in range(1, 8):
            w = constant(np.full((steps, 1), 1.0 / steps))
            assert attention_centre(w).data[0] == pytest.approx((steps + 1) / 2)

    def test_hybrid1_two_positions_closed_form(self):
        """Flat scores and uniform w_prev give sigma(-0.5), sigma(0.5) renormalised."""
        model = _model("hybrid1")
        model.params["att.v"].data[...] = 0.0
        source = model.encode([4, 5])
        state = model.initial_state(source)
        weights, context = model.attention.attend(
            state.h, state.attention, source.states, source.keys
        )
        np.testing.assert_allclose(weights.data[:, 0], [0.3775, 0.6225], atol=1e-4)
        expected = source.states.stacked.data[:, :, 0].T @ weights.data[:, 0]
        np.testing.assert_allclose(context.data[:, 0], expected, atol=1e-12)

    def test_hybrid1_single_position(self):
        """One source word always gets weight 1."""
        model = _model("hybrid1")
        source = model.encode([6])
        state = model.initial_state(source)
        weights, _ = model.attention.attend(
            state.h, state.attention, source.states, source.keys
        )
        np.testing.assert_allclose(weights.data, [[1.0]])

    @pytest.mark.parametrize(
        "hot,expected",
        [(2, {1: 2, 2: 1, 3: 0}), (0, {0: 1, 1: 0}), (4, {3: 2, 4: 1})],
    )
    def test_location_features_of_one_hot_weights(self, rng, hot, expected):
        """A one-hot w_prev copies kernel taps to its neighbours, zero padded."""
        kernel = rng.normal(size=(4, 3))
        w = np.zeros((5, 1))
        w[hot, 0] = 1.0
        g = location_features(constant(w), constant(kernel)).data
        assert g.shape == (5, 4, 1)
        for t in range(5):
            want = kernel[:, expected[t]] if t in expected else np.zeros(4)
            np.testing.assert_allclose(g[t, :, 0], want, atol=1e-15)

    def test_location_features_match_direct_sum(self, rng):
        """The convolution equals a direct sum over kernel taps."""
        for width in (1, 3, 5):
            kernel = rng.normal(size=(2, width))
            w = rng.dirichlet(np.ones(6), size=2).T
            g = location_features(constant(w), constant(kernel)).data
            half = width // 2
            for t in range(6):
                for b in range(2):
                    direct = sum(
                        kernel[:, k] * w[t + k - half, b]
                        for k in range(width)
                        if 0 <= t + k - half < 6
                    )
                    np.testing.assert_allclose(g[t, :, b], direct, atol=1e-12)

    def test_hybrid1_rejects_non_distribution(self, tiny_batch):
        """Previous weights must sum to one over real positions."""
        model = _model("hybrid1")
        source = model.encode(tiny_batch.src, tiny_batch.src_mask)
        state = model.initial_state(source)
        bad = constant(np.full(tiny_batch.src_mask.shape, 0.9))
        with pytest.raises(ContractError):
            attend_hybrid1(state.h, bad, source.states, model.attention, source.keys)

    def test_hybrid2_rejects_misshaped_previous_weights(self, tiny_batch):
        """w_{i-1} must be (T x B)."""
        model = _model("hybrid2")
        source = model.encode(tiny_batch.src, tiny_batch.src_mask)
        state = model.initial_state(source)
        with pytest.raises(DimensionError):
            attend_hybrid2(
                state.h, constant(np.ones((2, 3))), source.states, model.attention
            )

    def test_hybrid1_prefers_positions_after_the_centre(self):
        """With flat content scores the logistic favours later positions."""
        model = _model("hybrid1")
        model.params["att.v"].data[...] = 0.0
        source = model.encode([4, 5, 6, 7])
        state = model.initial_state(source)
        weights, _ = model.attention.attend(
            state.h, state.attention, source.states, source.keys
        )
        assert np.all(np.diff(weights.data[:, 0]) > 0)

    def test_hybrid2_even_kernel_is_rejected(self):
        """Even convolution widths have no centre position."""
        config = ModelConfig(attention="hybrid2", kernel_width=4, **DIMS)
        with pytest.raises(ConfigError):
            config.check()
        with pytest.raises(ConfigError):
            Hybrid2Attention.param_shapes(config)


class TestRegistry:
    def test_every_kind_is_registered(self):
        """All five units are available by name."""
        assert set(get_available_attention()) == {k.value for k in AttentionKind}
        assert set(ATTENTION_UNITS) == set(AttentionKind)

    def test_lookup_by_value(self):
        """Kinds resolve from their string values."""
        assert get_attention_class("hybrid2") is Hybrid2Attention

    def test_unknown_kind(self):
        """An unknown name is a configuration error."""
        with pytest.raises(ConfigError):
            get_attention_class("luong")

    @pytest.mark.parametrize("attention", [AttentionKind.RECATT, AttentionKind.RNNATT])
    def test_conddec_over_recurrent_attention_is_gated(self, attention):
        """These combinations need the experimental flag."""
        with pytest.raises(ConfigError, match="experimental"):
            ModelConfig(attention=attention, decoder=DecoderKind.CONDDEC).check()
        ModelConfig(
            attention=attention, decoder=DecoderKind.CONDDEC, experimental=True
        ).check()


class TestStateHelpers:
    def test_select_and_merge(self):
        """Column selection and merging round the batch back together."""
        state = AttentionState(
            c_prev=constant(np.arange(6.0).reshape(2, 3)), w_prev=None, q=None
        )
        parts = [state.select([k]) for k in (2, 0)]
        merged = AttentionState.merge(parts)
        np.testing.assert_array_equal(merged.c_prev.data, [[2.0, 0.0], [5.0, 3.0]])
        assert merged.w_prev is None

    def test_collect_alignment(self):
        """Per-step vectors stack into a (steps x positions) matrix."""
        matrix = collect_alignment([np.array([[0.5], [0.5]]), constant([1.0, 0.0])])
        assert matrix.shape == (2, 2)
        assert matrix.rows(1).shape == (1, 2)

    def test_collect_alignment_rejects_ragged_rows(self):
        """Rows of different widths cannot form a matrix."""
        with pytest.raises(ContractError):
            collect_alignment([[0.5, 0.5], [1.0]])
