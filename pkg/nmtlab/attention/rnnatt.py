"""Attention unit with its own recurrent state (RnnAtt).

The unit is a small RNN: ``c_i = ATT_OUT(q_{i-1}, {s_j})`` and
``q_i = ATT_RNN(q_{i-1}, h_{i-1}, c_i)``. The decoder then reads c_i where
its recurrence is written with c_t.
"""
from __future__ import annotations

from dataclasses import replace
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import numpy as np

from ..const import AttentionKind
from ..core.autodiff import Tensor, concat, constant
from ..core.encoder import EncoderStates, GruParams, gru_step
from ..core.params import ModelParams
from .base_attention import AttentionState, BaseAttention, attend_base

if TYPE_CHECKING:
    from ..config import ModelConfig

ATT_RNN_PREFIX = "att_rnn"


def attend_rnnatt(
    q_prev: Tensor,
    states: EncoderStates,
    variant: "RnnAttention",
    keys: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """ATT_OUT: base attention queried with the attention state."""
    return attend_base(q_prev, states, variant, keys)


def rnnatt_update(
    q_prev: Tensor, h_prev: Tensor, c_i: Tensor, variant: "RnnAttention"
) -> Tensor:
    """ATT_RNN: a GRU step over ``[h_{i-1}; c_i]`` with state q."""
    return gru_step(concat([h_prev, c_i], axis=0), q_prev, variant.rnn)


class RnnAttention(BaseAttention):
    """Attention that keeps its own hidden state q."""

    kind = AttentionKind.RNNATT

    def __init__(self, params: ModelParams, config: "ModelConfig") -> None:
        """Bind the scoring blocks and the ATT_RNN cell."""
        super().__init__(params, config)
        self.rnn = GruParams.from_params(params, ATT_RNN_PREFIX)

    @classmethod
    def query_dim(cls, config: "ModelConfig") -> int:
        return config.att_hidden

    @classmethod
    def param_shapes(cls, config: "ModelConfig") -> Dict[str, Tuple[int, ...]]:
        shapes = super().param_shapes(config)
        shapes.update(
            GruParams.shapes(
                ATT_RNN_PREFIX, config.hidden + 2 * config.hidden, config.att_hidden
            )
        )
        return shapes

    def initial_state(self, states: EncoderStates) -> AttentionState:
        """c_0 = 0 and q_0 = 0."""
        state = super().initial_state(states)
        return replace(
            state, q=constant(np.zeros((self.rnn.hidden, states.batch)))
        )

    def attend(
        self,
        h_prev: Tensor,
        state: AttentionState,
        states: EncoderStates,
        keys: Tensor,
    ) -> Tuple[Tensor, Tensor]:
        return attend_rnnatt(state.q, states, self, keys)

    def advance(
        self,
        state: AttentionState,
        h_prev: Tensor,
        weights: Tensor,
        context: Tensor,
    ) -> AttentionState:
        return replace(
            state, c_prev=context, q=rnnatt_update(state.q, h_prev, context, self)
        )
