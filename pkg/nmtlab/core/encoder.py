"""GRU cell and bidirectional encoder.

All vectors are column-batched: a hidden state is an (H x B) matrix, one
column per sentence. A single sentence is simply B = 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import DimensionError, InputError
from .autodiff import (
    Tensor,
    add,
    affine,
    constant,
    concat,
    embed,
    hadamard,
    matmul,
    sigmoid,
    stack,
    tanh,
)
from .params import ModelParams

_LOGGER = logging.getLogger(__name__)

GRU_CORE = ("W", "U", "Wr", "Ur", "Wz", "Uz")
GRU_CONTEXT = ("V", "Vr", "Vz")


@dataclass
class GruParams:
    """Candidate, reset and update matrices; optional context matrices.

    Biases are omitted, as in the cell's defining equations.
    """

    W: Tensor
    U: Tensor
    Wr: Tensor
    Ur: Tensor
    Wz: Tensor
    Uz: Tensor
    V: Optional[Tensor] = None
    Vr: Optional[Tensor] = None
    Vz: Optional[Tensor] = None

    @property
    def hidden(self) -> int:
        """Hidden size."""
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        """Input size."""
        return self.W.shape[1]

    @property
    def context_dim(self) -> int:
        """Context size, 0 when the cell takes no context."""
        return 0 if self.V is None else self.V.shape[1]

    @staticmethod
    def shapes(
        prefix: str, input_dim: int, hidden: int, context_dim: int = 0
    ) -> Dict[str, Tuple[int, ...]]:
        """Parameter shapes under ``prefix`` for the given sizes."""
        shapes = {}
        for name in GRU_CORE:
            cols = hidden if name.startswith("U") else input_dim
            shapes[f"{prefix}.{name}"] = (hidden, cols)
        if context_dim:
            for name in GRU_CONTEXT:
                shapes[f"{prefix}.{name}"] = (hidden, context_dim)
        return shapes

    @classmethod
    def from_params(cls, params: ModelParams, prefix: str) -> "GruParams":
        """Collect the blocks registered under ``prefix``."""
        blocks = {name: params[f"{prefix}.{name}"] for name in GRU_CORE}
        if f"{prefix}.V" in params:
            blocks.update({name: params[f"{prefix}.{name}"] for name in GRU_CONTEXT})
        return cls(**blocks)


def gate_inputs(
    x: Tensor, h: Tensor, w: Tensor, u: Tensor, v: Optional[Tensor], c: Optional[Tensor]
) -> Tensor:
    """Compute ``W x + U h (+ V c)``."""
    out = add(matmul(w, x), matmul(u, h))
    if v is not None and c is not None:
        out = add(out, matmul(v, c))
    return out


def gru_step(
    x: Tensor, h_prev: Tensor, p: GruParams, c: Optional[Tensor] = None
) -> Tensor:
    """One GRU step; context terms ``V c`` join each gate when ``c`` is given."""
    _check_step(x, h_prev, p, c)
    return gru_parts(x, h_prev, p, c)[0]


def gru_parts(
    x: Tensor, h_prev: Tensor, p: GruParams, c: Optional[Tensor] = None
) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """Return (h, candidate, reset gate, update gate)."""
    r = sigmoid(gate_inputs(x, h_prev, p.Wr, p.Ur, p.Vr, c))
    candidate_in = add(hadamard(r, matmul(p.U, h_prev)), matmul(p.W, x))
    if p.V is not None and c is not None:
        candidate_in = add(candidate_in, matmul(p.V, c))
    h_cand = tanh(candidate_in)
    z = sigmoid(gate_inputs(x, h_prev, p.Wz, p.Uz, p.Vz, c))
    h = add(hadamard(affine(z, -1.0, 1.0), h_cand), hadamard(z, h_prev))
    return h, h_cand, r, z


def _check_step(
    x: Tensor, h_prev: Tensor, p: GruParams, c: Optional[Tensor]
) -> None:
    if x.shape[0] != p.input_dim or h_prev.shape[0] != p.hidden:
        raise DimensionError(
            f"gru_step: input {x.shape} / state {h_prev.shape} do not fit "
            f"W {p.W.shape} / U {p.U.shape}"
        )
    if c is not None:
        if p.V is None:
            raise DimensionError("gru_step: context given to a cell without V")
        if c.shape[0] != p.context_dim:
            raise DimensionError(
                f"gru_step: context {c.shape} does not fit V {p.V.shape}"
            )


@dataclass
class EncoderStates:
    """Per-position annotations s_j = [fwd_j ; bwd_j] for a batch."""

    forward: List[Tensor]
    backward: List[Tensor]
    states: List[Tensor]
    stacked: Tensor
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def length(self) -> int:
        """Padded source length."""
        return len(self.states)

    @property
    def dim(self) -> int:
        """Annotation size, 2 x hidden."""
        return self.stacked.shape[1]

    @property
    def batch(self) -> int:
        """Number of sentences."""
        return self.stacked.shape[2]

    def select(self, columns: Sequence[int]) -> "EncoderStates":
        """Copy out a subset (or repetition) of batch columns as constants."""
        cols = np.asarray(columns, dtype=np.int64)

        def pick(t: Tensor) -> Tensor:
            return constant(t.data[..., cols])

        return EncoderStates(
            forward=[pick(t) for t in self.forward],
            backward=[pick(t) for t in self.backward],
            states=[pick(t) for t in self.states],
            stacked=pick(self.stacked),
            mask=self.mask[:, cols],
            lengths=self.lengths[cols],
        )


def _blend(new: Tensor, old: Tensor, keep: np.ndarray) -> Tensor:
    """Take ``new`` where the column is a real token, else carry ``old``."""
    if keep.all():
        return new
    m = np.broadcast_to(keep.astype(np.float64), new.shape)
    return add(hadamard(constant(m), new), hadamard(constant(1.0 - m), old))


def encode(
    src_ids: Sequence,
    embed_table: Tensor,
    fwd: GruParams,
    bwd: GruParams,
    mask: Optional[np.ndarray] = None,
    dropout: Optional[List[Tensor]] = None,
) -> EncoderStates:
    """Run both GRU directions over a (T x B) id matrix (or a 1-D id list).

    Padded cells (``mask == 0``) leave the running state untouched, so the
    backward pass starts at each sentence's real last token.
    """
    ids = np.asarray(src_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[:, None]
    if ids.size == 0:
        raise InputError("encode: empty source sentence")
    steps, batch = ids.shape
    keep = np.ones((steps, batch), dtype=bool) if mask is None else mask.astype(bool)

    xs = [embed(embed_table, ids[t]) for t in range(steps)]
    if dropout is not None:
        xs = [hadamard(x, m) for x, m in zip(xs, dropout)]

    h = constant(np.zeros((fwd.hidden, batch)))
    forward = []
    for t in range(steps):
        h = _blend(gru_step(xs[t], h, fwd), h, keep[t])
        forward.append(h)

    h = constant(np.zeros((bwd.hidden, batch)))
    backward: List[Tensor] = [None] * steps  # type: ignore[list-item]
    for t in reversed(range(steps)):
        h = _blend(gru_step(xs[t], h, bwd), h, keep[t])
        backward[t] = h

    states = [concat([f, b], axis=0) for f, b in zip(forward, backward)]
    return EncoderStates(
        forward=forward,
        backward=backward,
        states=states,
        stacked=stack(states),
        mask=keep,
        lengths=keep.sum(axis=0),
    )
