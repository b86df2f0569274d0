"""Attention that also sees the previous context (RecAtt)."""
from __future__ import annotations

from typing import TYPE_CHECKING, Dict, Optional, Tuple

from ..const import AttentionKind
from ..core.autodiff import Tensor, add, matmul
from ..core.encoder import EncoderStates
from ..core.params import ModelParams
from ..exceptions import DimensionError
from .base_attention import AttentionState, BaseAttention, score_and_pool, source_keys

if TYPE_CHECKING:
    from ..config import ModelConfig


def attend_recatt(
    h_prev: Tensor,
    c_prev: Tensor,
    states: EncoderStates,
    variant: "RecAttention",
    keys: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """Three-argument sum match ``W h + U s_j + V c_prev``."""
    if c_prev.shape[0] != variant.V.shape[1]:
        raise DimensionError(
            f"recatt: previous context {c_prev.shape} does not fit V {variant.V.shape}"
        )
    if h_prev.shape[0] != variant.W.shape[1]:
        raise DimensionError(
            f"recatt: query {h_prev.shape} does not fit W {variant.W.shape}"
        )
    keys = source_keys(states, variant.U) if keys is None else keys
    query = add(matmul(variant.W, h_prev), matmul(variant.V, c_prev))
    return score_and_pool(query, states, variant.v, keys)


class RecAttention(BaseAttention):
    """Feeds c_{i-1} back into the match function."""

    kind = AttentionKind.RECATT

    def __init__(self, params: ModelParams, config: "ModelConfig") -> None:
        """Bind the attention blocks plus V."""
        super().__init__(params, config)
        self.V = params["att.V"]

    @classmethod
    def param_shapes(cls, config: "ModelConfig") -> Dict[str, Tuple[int, ...]]:
        shapes = super().param_shapes(config)
        shapes["att.V"] = (config.attention_dim, 2 * config.hidden)
        return shapes

    def attend(
        self,
        h_prev: Tensor,
        state: AttentionState,
        states: EncoderStates,
        keys: Tensor,
    ) -> Tuple[Tensor, Tensor]:
        return attend_recatt(h_prev, state.c_prev, states, self, keys)
