"""Attention-based encoder-decoder assembled from the configured variants."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..attention import create_attention, get_attention_class
from ..config import ModelConfig
from ..exceptions import ContractError, DimensionError
from .autodiff import Tensor, constant, embed, hadamard, log_softmax
from .decoder import (
    DecoderState,
    OutputParams,
    create_decoder,
    deep_output,
    get_decoder_class,
    output_shapes,
    with_step,
)
from .encoder import EncoderStates, GruParams, encode
from .params import ModelParams, ShapeSpec

if TYPE_CHECKING:
    from ..checkpoint import Checkpoint
    from ..config import TrainConfig
    from ..corpus import Batch

_LOGGER = logging.getLogger(__name__)

SRC_EMBED = "src_embed"
TGT_EMBED = "tgt_embed"
ENC_FWD = "enc_fwd"
ENC_BWD = "enc_bwd"

MaskFactory = Callable[[Tuple[int, ...]], Tensor]


@dataclass
class SourceContext:
    """Encoder output plus the attention keys precomputed from it."""

    states: EncoderStates
    keys: Tensor

    @property
    def batch(self) -> int:
        """Number of sentences."""
        return self.states.batch

    def select(self, columns: Sequence[int]) -> "SourceContext":
        """Copy out batch columns as constants (decoding only)."""
        cols = np.asarray(columns, dtype=np.int64)
        return SourceContext(
            states=self.states.select(cols), keys=constant(self.keys.data[..., cols])
        )


@dataclass
class ForwardResult:
    """Per-step outputs of a teacher-forced pass."""

    log_probs: List[Tensor] = field(default_factory=list)
    weights: List[Tensor] = field(default_factory=list)
    conditions: List[Tensor] = field(default_factory=list)


class Seq2Seq:
    """Bidirectional GRU encoder, attention unit, decoder and deep output."""

    def __init__(
        self,
        config: ModelConfig,
        src_vocab_size: int,
        tgt_vocab_size: int,
        params: ModelParams,
    ) -> None:
        """Bind a configuration to a matching parameter collection."""
        config.check()
        expected = self.param_shapes(config, src_vocab_size, tgt_vocab_size)
        if params.shapes() != expected:
            missing = sorted(set(expected) - set(params.names()))
            raise ContractError(
                f"parameters do not match {config.label} (missing={missing})"
            )
        self.config = config
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.params = params
        self.src_embed = params[SRC_EMBED]
        self.tgt_embed = params[TGT_EMBED]
        self.enc_fwd = GruParams.from_params(params, ENC_FWD)
        self.enc_bwd = GruParams.from_params(params, ENC_BWD)
        self.attention = create_attention(params, config)
        self.decoder = create_decoder(params, config)
        self.output = OutputParams.from_params(params, config.maxout_pool)

    @staticmethod
    def param_shapes(
        config: ModelConfig, src_vocab_size: int, tgt_vocab_size: int
    ) -> ShapeSpec:
        """Every block of the configuration, in registration order."""
        embed_dim, hidden = config.embed_dim, config.hidden
        shapes: ShapeSpec = {
            SRC_EMBED: (embed_dim, src_vocab_size),
            TGT_EMBED: (embed_dim, tgt_vocab_size),
        }
        shapes.update(GruParams.shapes(ENC_FWD, embed_dim, hidden))
        shapes.update(GruParams.shapes(ENC_BWD, embed_dim, hidden))
        shapes.update(get_attention_class(config.attention).param_shapes(config))
        shapes.update(get_decoder_class(config.decoder).param_shapes(config))
        shapes.update(output_shapes(config, tgt_vocab_size))
        return shapes

    @classmethod
    def initialize(
        cls,
        config: ModelConfig,
        src_vocab_size: int,
        tgt_vocab_size: int,
        seed: int,
    ) -> "Seq2Seq":
        """Fresh model with Glorot-uniform parameters drawn from ``seed``."""
        config.check()
        rng = np.random.default_rng(seed)
        params = ModelParams.initialize(
            cls.param_shapes(config, src_vocab_size, tgt_vocab_size), rng
        )
        _LOGGER.info(
            "Initialized %s model with %d parameters", config.label, params.count()
        )
        return cls(config, src_vocab_size, tgt_vocab_size, params)

    @classmethod
    def from_checkpoint(cls, checkpoint: "Checkpoint") -> "Seq2Seq":
        """Model holding a checkpoint's parameters."""
        return cls(
            checkpoint.config.model,
            len(checkpoint.src_vocab),
            len(checkpoint.tgt_vocab),
            ModelParams.from_arrays(checkpoint.params),
        )

    def replica(self) -> "Seq2Seq":
        """Independent copy with its own parameter tensors."""
        return Seq2Seq(
            self.config, self.src_vocab_size, self.tgt_vocab_size, self.params.copy()
        )

    def encode(
        self,
        src_ids: Sequence,
        mask: Optional[np.ndarray] = None,
        noise: Optional[MaskFactory] = None,
    ) -> SourceContext:
        """Run the encoder and precompute the attention keys."""
        ids = np.asarray(src_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[:, None]
        dropout = None
        if noise is not None:
            dropout = [noise((self.config.embed_dim, ids.shape[1])) for _ in ids]
        states = encode(ids, self.src_embed, self.enc_fwd, self.enc_bwd, mask, dropout)
        return SourceContext(states=states, keys=self.attention.prepare(states))

    def initial_state(self, source: SourceContext) -> DecoderState:
        """Decoder state before the first target word."""
        states = source.states
        return DecoderState(
            h=self.decoder.initial_h(states),
            attention=self.attention.initial_state(states),
            sd=self.decoder.initial_condition(states),
        )

    def step(
        self,
        state: DecoderState,
        prev_ids: Sequence[int],
        source: SourceContext,
        noise: Optional[MaskFactory] = None,
    ) -> Tuple[DecoderState, Tensor, Tensor]:
        """Advance one target position.

        Returns the new state, log-probabilities over the target vocabulary
        (V x B) and this step's attention weights (T x B).
        """
        ids = np.asarray(prev_ids, dtype=np.int64).reshape(-1)
        if ids.size != source.batch:
            raise DimensionError(
                f"step: {ids.size} previous tokens for a batch of {source.batch}"
            )
        y = embed(self.tgt_embed, ids)
        if noise is not None:
            y = hadamard(y, noise(y.shape))
        weights, context = self.attention.attend(
            state.h, state.attention, source.states, source.keys
        )
        h, sd = self.decoder.step(state.h, y, context, state.attention.c_prev, state.sd)
        out_mask = None
        if noise is not None:
            out_mask = noise((self.config.maxout_units, ids.size))
        logits = deep_output(h, context, y, self.output, out_mask)
        attention = self.attention.advance(state.attention, state.h, weights, context)
        new_state = with_step(state, h=h, sd=sd, attention=attention)
        return new_state, log_softmax(logits, axis=0), weights

    def forward(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        tgt_in: np.ndarray,
        noise: Optional[MaskFactory] = None,
    ) -> ForwardResult:
        """Teacher-forced pass over a padded batch.

        ``tgt_in`` holds the decoder inputs (BOS first) as a (S x B) matrix.
        """
        source = self.encode(src_ids, src_mask, noise)
        state = self.initial_state(source)
        result = ForwardResult()
        if state.sd is not None:
            result.conditions.append(state.sd)
        for row in np.asarray(tgt_in, dtype=np.int64):
            state, log_probs, weights = self.step(state, row, source, noise)
            result.log_probs.append(log_probs)
            result.weights.append(weights)
            if state.sd is not None:
                result.conditions.append(state.sd)
        return result

    def loss(
        self,
        batch: "Batch",
        train: "TrainConfig",
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Total training loss of ``batch`` (dropout drawn from ``rng`` if given)."""
        from ..training import batch_loss  # pylint: disable=import-outside-toplevel

        return batch_loss(self, batch, train, rng).total

    def describe(self) -> Dict[str, object]:
        """Summary used in logs and reports."""
        return {
            "model": self.config.label,
            "parameters": self.params.count(),
            "blocks": len(self.params),
            "src_vocab": self.src_vocab_size,
            "tgt_vocab": self.tgt_vocab_size,
        }
