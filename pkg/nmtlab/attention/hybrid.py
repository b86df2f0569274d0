"""Location-aware attention units that read the previous weights.

Positions are 1-based. Hybrid1 scales each content score by
``Logistic(j - m)`` where m is the average attention centre of the previous
step; the factor is applied exactly as written, which favours forward
movement rather than penalising jump distance symmetrically. Hybrid2 adds a
convolution of the previous weights as a third term of the match function.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import numpy as np

from ..const import SIMPLEX_TOLERANCE, AttentionKind
from ..core.autodiff import (
    Tensor,
    constant,
    contract,
    conv_windows,
    expand,
    log_sigmoid,
    matmul,
    sub,
)
from ..core.encoder import EncoderStates
from ..core.params import ModelParams
from ..exceptions import ConfigError, DimensionError
from .base_attention import (
    AttentionState,
    BaseAttention,
    check_simplex,
    score_and_pool,
    source_keys,
)

if TYPE_CHECKING:
    from ..config import ModelConfig

_LOGGER = logging.getLogger(__name__)


def uniform_weights(states: EncoderStates) -> Tensor:
    """Uniform distribution over each column's real positions."""
    mask = states.mask.astype(np.float64)
    return constant(mask / np.maximum(mask.sum(axis=0, keepdims=True), 1.0))


def attention_centre(w_prev: Tensor) -> Tensor:
    """``m = sum_j j * w_j`` per column, j starting at 1."""
    steps, batch = w_prev.shape
    positions = np.repeat(np.arange(1, steps + 1, dtype=np.float64)[:, None], batch, 1)
    return contract("tb,tb->b", constant(positions), w_prev)


def _check_previous(w_prev: Tensor, states: EncoderStates) -> None:
    if w_prev.shape != states.mask.shape:
        raise DimensionError(
            f"previous weights {w_prev.shape} do not fit {states.length} positions "
            f"x {states.batch} sentences"
        )
    check_simplex(w_prev, states.mask, SIMPLEX_TOLERANCE)


def attend_hybrid1(
    h_prev: Tensor,
    w_prev: Tensor,
    states: EncoderStates,
    variant: "Hybrid1Attention",
    keys: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """``w_j ∝ Logistic(j - m) exp(e_j)``, computed in log space."""
    _check_previous(w_prev, states)
    if h_prev.shape[0] != variant.W.shape[1]:
        raise DimensionError(
            f"hybrid1: query {h_prev.shape} does not fit W {variant.W.shape}"
        )
    steps, batch = w_prev.shape
    positions = constant(
        np.repeat(np.arange(1, steps + 1, dtype=np.float64)[:, None], batch, 1)
    )
    centre = expand(attention_centre(w_prev), steps)
    log_prior = log_sigmoid(sub(positions, centre))
    keys = source_keys(states, variant.U) if keys is None else keys
    return score_and_pool(
        matmul(variant.W, h_prev), states, variant.v, keys, log_prior=log_prior
    )


def location_features(w_prev: Tensor, kernel: Tensor) -> Tensor:
    """``g_j = Q * w_prev`` at every position: (T x F x B), zero padded."""
    width = kernel.shape[1]
    if width % 2 == 0:
        raise ConfigError(f"hybrid2: kernel width must be odd, got {width}")
    return contract("fk,tkb->tfb", kernel, conv_windows(w_prev, width))


def attend_hybrid2(
    h_prev: Tensor,
    w_prev: Tensor,
    states: EncoderStates,
    variant: "Hybrid2Attention",
    keys: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """Three-argument sum match with ``g_j`` as the third term."""
    _check_previous(w_prev, states)
    if h_prev.shape[0] != variant.W.shape[1]:
        raise DimensionError(
            f"hybrid2: query {h_prev.shape} does not fit W {variant.W.shape}"
        )
    features = location_features(w_prev, variant.Q)
    extra = contract("af,tfb->tab", variant.G, features)
    keys = source_keys(states, variant.U) if keys is None else keys
    return score_and_pool(
        matmul(variant.W, h_prev), states, variant.v, keys, extra=extra
    )


class _LocationAttention(BaseAttention):
    """Shared state handling for units that carry w_{i-1}."""

    def initial_state(self, states: EncoderStates) -> AttentionState:
        """c_0 = 0 and w_0 uniform over the real positions."""
        return replace(super().initial_state(states), w_prev=uniform_weights(states))

    def advance(
        self,
        state: AttentionState,
        h_prev: Tensor,
        weights: Tensor,
        context: Tensor,
    ) -> AttentionState:
        return replace(state, c_prev=context, w_prev=weights)


class Hybrid1Attention(_LocationAttention):
    """Content scores reweighted by the logistic of the jump from m."""

    kind = AttentionKind.HYBRID1

    def attend(
        self,
        h_prev: Tensor,
        state: AttentionState,
        states: EncoderStates,
        keys: Tensor,
    ) -> Tuple[Tensor, Tensor]:
        return attend_hybrid1(h_prev, state.w_prev, states, self, keys)


class Hybrid2Attention(_LocationAttention):
    """Content scores plus a convolution of the previous weights."""

    kind = AttentionKind.HYBRID2

    def __init__(self, params: ModelParams, config: "ModelConfig") -> None:
        """Bind the attention blocks plus kernel Q and feature matrix G."""
        super().__init__(params, config)
        self.Q = params["att.Q"]
        self.G = params["att.G"]

    @classmethod
    def param_shapes(cls, config: "ModelConfig") -> Dict[str, Tuple[int, ...]]:
        if config.kernel_width % 2 == 0:
            raise ConfigError(
                f"hybrid2: kernel width must be odd, got {config.kernel_width}"
            )
        shapes = super().param_shapes(config)
        shapes["att.Q"] = (config.conv_features, config.kernel_width)
        shapes["att.G"] = (config.attention_dim, config.conv_features)
        return shapes

    def attend(
        self,
        h_prev: Tensor,
        state: AttentionState,
        states: EncoderStates,
        keys: Tensor,
    ) -> Tuple[Tensor, Tensor]:
        return attend_hybrid2(h_prev, state.w_prev, states, self, keys)
