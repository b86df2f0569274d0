"""Base attention unit and shared scoring machinery."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..const import AttentionKind
from ..core.autodiff import (
    Tensor,
    add,
    constant,
    contract,
    expand,
    matmul,
    softmax,
    tanh,
)
from ..core.encoder import EncoderStates
from ..core.params import ModelParams
from ..exceptions import ContractError, DimensionError

if TYPE_CHECKING:
    from ..config import ModelConfig

_LOGGER = logging.getLogger(__name__)


@dataclass
class AttentionState:
    """Recurrent attention state carried from one decoder step to the next."""

    c_prev: Optional[Tensor] = None
    w_prev: Optional[Tensor] = None
    q: Optional[Tensor] = None

    def select(self, columns: Sequence[int]) -> "AttentionState":
        """Copy out batch columns as constants (decoding only)."""
        cols = np.asarray(columns, dtype=np.int64)
        return AttentionState(
            **{
                name: None if value is None else constant(value.data[:, cols])
                for name, value in self._fields().items()
            }
        )

    @staticmethod
    def merge(states: Sequence["AttentionState"]) -> "AttentionState":
        """Concatenate single-column states into one batch (decoding only)."""
        first = states[0]
        merged = {}
        for name, value in first._fields().items():
            if value is None:
                merged[name] = None
            else:
                merged[name] = constant(
                    np.concatenate([getattr(s, name).data for s in states], axis=1)
                )
        return AttentionState(**merged)

    def _fields(self) -> Dict[str, Optional[Tensor]]:
        return {"c_prev": self.c_prev, "w_prev": self.w_prev, "q": self.q}


@dataclass
class AlignmentMatrix:
    """Attention weights; rows are target steps, columns source positions."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ContractError(
                f"alignment must be a matrix, got shape {self.weights.shape}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        """(target steps, source positions)."""
        return self.weights.shape  # type: ignore[return-value]

    def rows(self, count: int) -> "AlignmentMatrix":
        """First ``count`` rows."""
        return AlignmentMatrix(self.weights[:count])


def collect_alignment(per_step_weights: Sequence) -> AlignmentMatrix:
    """Assemble per-step weight vectors, in decoding order, into a matrix."""
    rows: List[np.ndarray] = []
    for step in per_step_weights:
        data = step.data if isinstance(step, Tensor) else np.asarray(step, dtype=float)
        rows.append(np.asarray(data, dtype=np.float64).reshape(-1))
    if not rows:
        return AlignmentMatrix(np.zeros((0, 0)))
    width = rows[0].size
    if any(r.size != width for r in rows):
        raise ContractError(
            f"ragged alignment rows: lengths {sorted({r.size for r in rows})}"
        )
    return AlignmentMatrix(np.stack(rows))


def check_simplex(w: Tensor, mask: np.ndarray, tolerance: float) -> None:
    """Raise if any column of ``w`` is not a distribution over real positions."""
    data = w.data
    if np.any(data < -tolerance) or np.any(
        np.abs(np.sum(data * mask, axis=0) - 1.0) > tolerance
    ):
        raise ContractError(
            f"previous weights are not a distribution (column sums "
            f"{np.round(np.sum(data * mask, axis=0), 8).tolist()})"
        )


def source_keys(states: EncoderStates, u_alpha: Tensor) -> Tensor:
    """``U^a s_j`` for every position: (T x A x B)."""
    if u_alpha.shape[1] != states.dim:
        raise DimensionError(
            f"attention: U {u_alpha.shape} does not fit annotations of size "
            f"{states.dim}"
        )
    return contract("ad,tdb->tab", u_alpha, states.stacked)


def score_and_pool(
    query: Tensor,
    states: EncoderStates,
    v: Tensor,
    keys: Tensor,
    extra: Optional[Tensor] = None,
    log_prior: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """Sum-match scoring, normalisation and weighted pooling.

    ``query`` is the (A x B) position-independent part of the match function,
    ``extra`` an optional (T x A x B) position-dependent term and
    ``log_prior`` an optional (T x B) additive log-weight.
    """
    if query.shape[0] != keys.shape[1] or query.shape[1] != keys.shape[2]:
        raise DimensionError(
            f"attention: query {query.shape} does not fit keys {keys.shape}"
        )
    pre = add(expand(query, states.length), keys)
    if extra is not None:
        pre = add(pre, extra)
    scores = contract("a,tab->tb", v, tanh(pre))
    if log_prior is not None:
        scores = add(scores, log_prior)
    weights = softmax(scores, axis=0, mask=states.mask)
    context = contract("tb,tdb->db", weights, states.stacked)
    return weights, context


def attend_base(
    h_prev: Tensor,
    states: EncoderStates,
    variant: "BaseAttention",
    keys: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """``e_j = v^T tanh(W h + U s_j)``, softmax, weighted average of s_j."""
    if states.length == 0:
        raise DimensionError("attention: no encoder states")
    if h_prev.shape[0] != variant.W.shape[1]:
        raise DimensionError(
            f"attention: query {h_prev.shape} does not fit W {variant.W.shape}"
        )
    keys = source_keys(states, variant.U) if keys is None else keys
    return score_and_pool(matmul(variant.W, h_prev), states, variant.v, keys)


class BaseAttention:
    """Content-based attention with the sum match function."""

    kind = AttentionKind.BASE

    def __init__(self, params: ModelParams, config: "ModelConfig") -> None:
        """Bind the attention blocks of ``params``."""
        self.config = config
        self.W = params["att.W"]
        self.U = params["att.U"]
        self.v = params["att.v"]

    @classmethod
    def query_dim(cls, config: "ModelConfig") -> int:
        """Size of the vector the match function receives as its query."""
        return config.hidden

    @classmethod
    def param_shapes(cls, config: "ModelConfig") -> Dict[str, Tuple[int, ...]]:
        """Blocks this variant needs."""
        att = config.attention_dim
        return {
            "att.W": (att, cls.query_dim(config)),
            "att.U": (att, 2 * config.hidden),
            "att.v": (att,),
        }

    def prepare(self, states: EncoderStates) -> Tensor:
        """Precompute the source keys once per sentence batch."""
        return source_keys(states, self.U)

    def initial_state(self, states: EncoderStates) -> AttentionState:
        """Starting state: c_0 = 0."""
        return AttentionState(c_prev=constant(np.zeros((states.dim, states.batch))))

    def attend(
        self,
        h_prev: Tensor,
        state: AttentionState,
        states: EncoderStates,
        keys: Tensor,
    ) -> Tuple[Tensor, Tensor]:
        """Return (weights (T x B), context (2H x B)) for this step."""
        return attend_base(h_prev, states, self, keys)

    def advance(
        self,
        state: AttentionState,
        h_prev: Tensor,
        weights: Tensor,
        context: Tensor,
    ) -> AttentionState:
        """Next recurrent state; the base unit keeps the context for InputFeed."""
        return replace(state, c_prev=context)
