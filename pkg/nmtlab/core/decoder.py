"""Decoder step variants and the deep-output prediction layer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from ..attention.base_attention import AttentionState
from ..const import DecoderKind
from ..exceptions import ConfigError, DimensionError
from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    contract,
    hadamard,
    matmul,
    maximum,
    sigmoid,
    tanh,
)
from .encoder import EncoderStates, GruParams, gru_step
from .params import ModelParams

if TYPE_CHECKING:
    from ..config import ModelConfig

_LOGGER = logging.getLogger(__name__)

DECODER_PREFIX = "dec"
OUTPUT_PREFIX = "out"


@dataclass
class CondDecParams:
    """Decay gate, condition injection and condition initialisation."""

    Wd: Tensor
    Ud: Tensor
    Vd: Tensor
    Vh: Tensor
    M: Tensor

    @property
    def condition_dim(self) -> int:
        """Size of sd."""
        return self.Wd.shape[0]


@dataclass
class OutputParams:
    """Maxout pool maps and the readout to vocabulary logits."""

    pools: List[Tensor]
    R: Tensor

    def __post_init__(self) -> None:
        if len(self.pools) < 2:
            raise ConfigError(f"maxout pool size must be >= 2, got {len(self.pools)}")

    @classmethod
    def from_params(cls, params: ModelParams, pool: int) -> "OutputParams":
        """Collect ``out.P0 .. out.P{pool-1}`` and ``out.R``."""
        return cls(
            pools=[params[f"{OUTPUT_PREFIX}.P{k}"] for k in range(pool)],
            R=params[f"{OUTPUT_PREFIX}.R"],
        )


@dataclass
class DecoderState:
    """Everything carried between decoder steps for a batch of hypotheses."""

    h: Tensor
    attention: AttentionState
    sd: Optional[Tensor] = None
    step: int = 0

    def select(self, columns: Sequence[int]) -> "DecoderState":
        """Copy out batch columns as constants (decoding only)."""
        cols = np.asarray(columns, dtype=np.int64)
        return DecoderState(
            h=constant(self.h.data[:, cols]),
            attention=self.attention.select(cols),
            sd=None if self.sd is None else constant(self.sd.data[:, cols]),
            step=self.step,
        )

    @staticmethod
    def merge(states: Sequence["DecoderState"]) -> "DecoderState":
        """Join single-column states into one batch (decoding only)."""
        sds = [s.sd for s in states]
        return DecoderState(
            h=constant(np.concatenate([s.h.data for s in states], axis=1)),
            attention=AttentionState.merge([s.attention for s in states]),
            sd=None
            if sds[0] is None
            else constant(np.concatenate([s.data for s in sds], axis=1)),
            step=states[0].step,
        )


def decoder_step_base(
    h_prev: Tensor, y_prev_embed: Tensor, c_i: Tensor, params: GruParams
) -> Tensor:
    """``h_i = RNN(h_{i-1}, y_{i-1}, c_i)``: a GRU step with context."""
    # The recurrence reads the current context c_i, not c_t.
    return gru_step(y_prev_embed, h_prev, params, c_i)


def decoder_step_inputfeed(
    h_prev: Tensor,
    y_prev_embed: Tensor,
    c_i: Tensor,
    c_prev: Tensor,
    params: GruParams,
) -> Tensor:
    """As the base step with ``[c_i; c_{i-1}]`` as context."""
    if c_prev.shape != c_i.shape:
        raise DimensionError(
            f"inputfeed: previous context {c_prev.shape} vs context {c_i.shape}"
        )
    return gru_step(y_prev_embed, h_prev, params, concat([c_i, c_prev], axis=0))


def conddec_step(
    h_prev: Tensor,
    y_prev_embed: Tensor,
    c_i: Tensor,
    sd_prev: Tensor,
    params: GruParams,
    cond: CondDecParams,
) -> Tuple[Tensor, Tensor]:
    """Decay-gated condition step.

    ``d = sigma(Wd y + Ud h + Vd c)``, ``sd_i = d * sd_{i-1}`` and
    ``h_i = GRU(...) + tanh(Vh sd_i)``.
    """
    if sd_prev.shape[0] != cond.condition_dim:
        raise DimensionError(
            f"conddec: condition {sd_prev.shape} does not fit Wd {cond.Wd.shape}"
        )
    gate_in = add(
        add(matmul(cond.Wd, y_prev_embed), matmul(cond.Ud, h_prev)),
        matmul(cond.Vd, c_i),
    )
    sd = hadamard(sigmoid(gate_in), sd_prev)
    h = add(
        decoder_step_base(h_prev, y_prev_embed, c_i, params),
        tanh(matmul(cond.Vh, sd)),
    )
    return h, sd


def last_states(states: EncoderStates) -> Tensor:
    """Annotation at each sentence's last real position: (2H x B)."""
    select = np.zeros(states.mask.shape)
    select[states.lengths - 1, np.arange(states.batch)] = 1.0
    return contract("tb,tdb->db", constant(select), states.stacked)


def init_condition(last_encoder_state: Tensor, cond: CondDecParams) -> Tensor:
    """``sd_0 = tanh(M s_T)``."""
    if last_encoder_state.shape[0] != cond.M.shape[1]:
        raise DimensionError(
            f"init_condition: state {last_encoder_state.shape} does not fit "
            f"M {cond.M.shape}"
        )
    return tanh(matmul(cond.M, last_encoder_state))


def init_decoder_state(states: EncoderStates, n_matrix: Tensor) -> Tensor:
    """``h_0 = tanh(N bwd_1)`` from the first backward encoder state."""
    first = states.backward[0]
    if first.shape[0] != n_matrix.shape[1]:
        raise DimensionError(
            f"init_decoder_state: state {first.shape} does not fit N {n_matrix.shape}"
        )
    return tanh(matmul(n_matrix, first))


def deep_output(
    h_i: Tensor,
    c_i: Tensor,
    y_prev_embed: Tensor,
    out: OutputParams,
    dropout: Optional[Tensor] = None,
) -> Tensor:
    """Single maxout hidden layer over ``[h; c; y]`` followed by the readout."""
    features = concat([h_i, c_i, y_prev_embed], axis=0)
    if features.shape[0] != out.pools[0].shape[1]:
        raise DimensionError(
            f"deep_output: features {features.shape} do not fit pool "
            f"{out.pools[0].shape}"
        )
    t = maximum([matmul(p, features) for p in out.pools])
    if dropout is not None:
        t = hadamard(t, dropout)
    return matmul(out.R, t)


def output_shapes(config: "ModelConfig", tgt_vocab: int) -> Dict[str, Tuple[int, ...]]:
    """Deep-output blocks for a configuration."""
    features = config.hidden + 2 * config.hidden + config.embed_dim
    shapes: Dict[str, Tuple[int, ...]] = {
        f"{OUTPUT_PREFIX}.P{k}": (config.maxout_units, features)
        for k in range(config.maxout_pool)
    }
    shapes[f"{OUTPUT_PREFIX}.R"] = (tgt_vocab, config.maxout_units)
    return shapes


class BaseDecoder:
    """Attention decoder ``h_i = RNN(h_{i-1}, y_{i-1}, c_i)``."""

    kind = DecoderKind.BASE
    context_factor = 1

    def __init__(self, params: ModelParams, config: "ModelConfig") -> None:
        """Bind the decoder blocks of ``params``."""
        self.config = config
        self.gru = GruParams.from_params(params, DECODER_PREFIX)
        self.N = params[f"{DECODER_PREFIX}.N"]

    @classmethod
    def param_shapes(cls, config: "ModelConfig") -> Dict[str, Tuple[int, ...]]:
        """Blocks this variant needs."""
        shapes = GruParams.shapes(
            DECODER_PREFIX,
            config.embed_dim,
            config.hidden,
            cls.context_factor * 2 * config.hidden,
        )
        shapes[f"{DECODER_PREFIX}.N"] = (config.hidden, config.hidden)
        return shapes

    def initial_h(self, states: EncoderStates) -> Tensor:
        """Starting hidden state."""
        return init_decoder_state(states, self.N)

    def initial_condition(self, states: EncoderStates) -> Optional[Tensor]:
        """Starting condition vector; only CondDec has one."""
        return None

    def step(
        self,
        h_prev: Tensor,
        y_prev_embed: Tensor,
        c_i: Tensor,
        c_prev: Optional[Tensor],
        sd_prev: Optional[Tensor],
    ) -> Tuple[Tensor, Optional[Tensor]]:
        """Return (h_i, sd_i)."""
        return decoder_step_base(h_prev, y_prev_embed, c_i, self.gru), None


class InputFeedDecoder(BaseDecoder):
    """Also feeds the previous attention output to the recurrence."""

    kind = DecoderKind.INPUTFEED
    context_factor = 2

    def step(
        self,
        h_prev: Tensor,
        y_prev_embed: Tensor,
        c_i: Tensor,
        c_prev: Optional[Tensor],
        sd_prev: Optional[Tensor],
    ) -> Tuple[Tensor, Optional[Tensor]]:
        return (
            decoder_step_inputfeed(h_prev, y_prev_embed, c_i, c_prev, self.gru),
            None,
        )


class CondDecDecoder(BaseDecoder):
    """Decoder with a decaying condition vector sd."""

    kind = DecoderKind.CONDDEC

    def __init__(self, params: ModelParams, config: "ModelConfig") -> None:
        """Bind the decoder blocks plus the decay gate."""
        super().__init__(params, config)
        self.cond = CondDecParams(
            **{
                name: params[f"{DECODER_PREFIX}.{name}"]
                for name in ("Wd", "Ud", "Vd", "Vh", "M")
            }
        )

    @classmethod
    def param_shapes(cls, config: "ModelConfig") -> Dict[str, Tuple[int, ...]]:
        shapes = super().param_shapes(config)
        cond, hidden = config.condition_dim, config.hidden
        shapes.update(
            {
                f"{DECODER_PREFIX}.Wd": (cond, config.embed_dim),
                f"{DECODER_PREFIX}.Ud": (cond, hidden),
                f"{DECODER_PREFIX}.Vd": (cond, 2 * hidden),
                f"{DECODER_PREFIX}.Vh": (hidden, cond),
                f"{DECODER_PREFIX}.M": (cond, 2 * hidden),
            }
        )
        return shapes

    def initial_condition(self, states: EncoderStates) -> Optional[Tensor]:
        return init_condition(last_states(states), self.cond)

    def step(
        self,
        h_prev: Tensor,
        y_prev_embed: Tensor,
        c_i: Tensor,
        c_prev: Optional[Tensor],
        sd_prev: Optional[Tensor],
    ) -> Tuple[Tensor, Optional[Tensor]]:
        return conddec_step(h_prev, y_prev_embed, c_i, sd_prev, self.gru, self.cond)


DECODERS: Dict[DecoderKind, Type[BaseDecoder]] = {
    DecoderKind.BASE: BaseDecoder,
    DecoderKind.INPUTFEED: InputFeedDecoder,
    DecoderKind.CONDDEC: CondDecDecoder,
}


def get_decoder_class(kind) -> Type[BaseDecoder]:
    """Look up the decoder class for a decoder kind (enum or its value)."""
    try:
        return DECODERS[DecoderKind(kind)]
    except ValueError as err:
        raise ConfigError(f"Unknown decoder variant: {kind}") from err


def create_decoder(params: ModelParams, config: "ModelConfig") -> BaseDecoder:
    """Instantiate the decoder selected by ``config.decoder``."""
    return get_decoder_class(config.decoder)(params, config)


def with_step(state: DecoderState, **changes) -> DecoderState:
    """Copy of ``state`` advanced by one step with the given field changes."""
    return replace(state, step=state.step + 1, **changes)
