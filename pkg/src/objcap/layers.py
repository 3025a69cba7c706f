"""Parameterized building blocks: embeddings, dense projection, LSTMs.

All layers operate on single rows (shape 1*d); sequences are plain Python
lists of rows. Parameters live in small dataclasses so models can collect
them under stable names for checkpointing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    add_rowvector,
    concat,
    glorot_uniform,
    matmul,
    mul,
    sigmoid,
    slice_axis,
    take_row,
    tanh,
    zeros,
)


@dataclass
class DenseParams:
    weight: Tensor  # (in_dim, out_dim)
    bias: Tensor  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def dense_init(in_dim: int, out_dim: int, rng: np.random.Generator) -> DenseParams:
    return DenseParams(
        weight=glorot_uniform((in_dim, out_dim), rng),
        bias=zeros((out_dim,), requires_grad=True),
    )


def dense(p: DenseParams, x: Tensor) -> Tensor:
    """Affine map x @ W + b. No activation; callers add their own."""
    return add_rowvector(matmul(x, p.weight), p.bias)


# The vocabulary head is the same affine map, kept as its own name because
# its output is logits consumed by softmax/cross-entropy.
vocab_head = dense


@dataclass
class LstmParams:
    """Weights for one LSTM direction.

    The 4h gate axis is laid out in fixed blocks (i, f, g, o):
    input gate, forget gate, cell candidate, output gate.
    """

    W: Tensor  # (input_dim, 4h)
    U: Tensor  # (h, 4h)
    b: Tensor  # (4h,)
    hidden_size: int


def lstm_init(input_dim: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
    h = hidden_size
    b = np.zeros(4 * h, dtype=np.float64)
    b[h : 2 * h] = 1.0  # forget-gate bias starts open
    return LstmParams(
        W=glorot_uniform((input_dim, 4 * h), rng),
        U=glorot_uniform((h, 4 * h), rng),
        b=Tensor(b, requires_grad=True),
        hidden_size=h,
    )


def lstm_step(p: LstmParams, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One step of the standard forget-gate LSTM. Returns (h', c')."""
    n = p.hidden_size
    if x.shape != (1, p.W.shape[0]) or h.shape != (1, n) or c.shape != (1, n):
        raise ValueError(
            f"lstm_step: got x {x.shape}, h {h.shape}, c {c.shape} "
            f"for input_dim {p.W.shape[0]}, hidden {n}"
        )
    z = add_rowvector(add(matmul(x, p.W), matmul(h, p.U)), p.b)
    i = sigmoid(slice_axis(z, 1, 0, n))
    f = sigmoid(slice_axis(z, 1, n, 2 * n))
    g = tanh(slice_axis(z, 1, 2 * n, 3 * n))
    o = sigmoid(slice_axis(z, 1, 3 * n, 4 * n))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2


def lstm_unroll(
    p: LstmParams, inputs: list[Tensor], h0: Tensor | None = None, c0: Tensor | None = None
) -> list[Tensor]:
    """Left-to-right unroll; returns the hidden state at every step."""
    if not inputs:
        raise ValueError("lstm_unroll: empty input sequence")
    h = h0 if h0 is not None else zeros((1, p.hidden_size))
    c = c0 if c0 is not None else zeros((1, p.hidden_size))
    states = []
    for x in inputs:
        h, c = lstm_step(p, x, h, c)
        states.append(h)
    return states


def bilstm(p_fwd: LstmParams, p_bwd: LstmParams, inputs: list[Tensor]) -> list[Tensor]:
    """Bidirectional unroll; output[t] = concat(fwd[t], bwd[t]), aligned.

    The backward stream runs over the reversed inputs and is re-reversed so
    both halves at position t describe the same input position.
    """
    fwd = lstm_unroll(p_fwd, inputs)
    bwd = lstm_unroll(p_bwd, inputs[::-1])[::-1]
    return [concat([f, b], axis=1) for f, b in zip(fwd, bwd)]


@dataclass
class EmbeddingTable:
    table: Tensor  # (vocab_size, embed_dim)
    trainable: bool

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.table.shape[1]


def embedding_init(vocab_size: int, embed_dim: int, rng: np.random.Generator) -> EmbeddingTable:
    return EmbeddingTable(table=glorot_uniform((vocab_size, embed_dim), rng), trainable=True)


def frozen_embedding(matrix) -> EmbeddingTable:
    """Fixed lookup table (e.g. pretrained vectors); excluded from training."""
    return EmbeddingTable(table=Tensor(matrix, requires_grad=False), trainable=False)


def embed(table: EmbeddingTable, index: int) -> Tensor:
    """Row lookup as a 1*d tensor; joins the autodiff graph iff trainable."""
    return take_row(table.table, index)
