"""Recurrent encoder that maps an observed track to a fixed conditioning vector.

The observed trajectory is converted to relative displacements, each step is
linearly embedded into 16 dimensions and run through a stack of three gated
recurrent units with hidden size 16 (zero initial states). The final hidden
state of the top unit passes through an ELU and a linear head, again with 16
output dimensions. The recurrence makes the encoder independent of the input
length.

Gate equations (update gate z, reset gate r, candidate n):

    r = sigmoid(W_ir x + W_hr h + b_r)
    z = sigmoid(W_iz x + W_hz h + b_z)
    n = tanh(W_in x + r * (W_hn h) + b_n)
    h' = (1 - z) * n + z * h

All parameters are float64 and initialized uniformly in +-1/sqrt(fan_in)
from a caller-supplied seeded generator.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import Tensor, nn

from trajflow.errors import InvalidInputError

DTYPE = torch.float64

HIDDEN_SIZE = 16
NUM_LAYERS = 3


def to_displacements(abs_positions) -> np.ndarray:
    """Per-step displacements of an absolute track: out[t] = abs[t+1] - abs[t]."""
    pos = np.asarray(abs_positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
        raise InvalidInputError(
            f"need at least two 2-d positions, got shape {pos.shape}"
        )
    return np.diff(pos, axis=0)


def uniform_param(shape: tuple[int, ...], fan_in: int, generator: torch.Generator) -> nn.Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    weight = (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound
    return nn.Parameter(weight)


class GRUCell(nn.Module):
    """One gated recurrent unit with packed gate weights (order: r, z, n)."""

    def __init__(self, input_size: int, hidden_size: int, generator: torch.Generator):
        super().__init__()
        self.hidden_size = hidden_size
        self.w_ih = uniform_param((3 * hidden_size, input_size), input_size, generator)
        self.w_hh = uniform_param((3 * hidden_size, hidden_size), hidden_size, generator)
        self.bias = uniform_param((3 * hidden_size,), hidden_size, generator)

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        hs = self.hidden_size
        gi = x @ self.w_ih.T
        gh = h @ self.w_hh.T
        b = self.bias
        r = torch.sigmoid(gi[..., :hs] + gh[..., :hs] + b[:hs])
        z = torch.sigmoid(gi[..., hs : 2 * hs] + gh[..., hs : 2 * hs] + b[hs : 2 * hs])
        n = torch.tanh(gi[..., 2 * hs :] + r * gh[..., 2 * hs :] + b[2 * hs :])
        return (1.0 - z) * n + z * h


class MotionEncoder(nn.Module):
    """Embed + 3-layer GRU stack + ELU + linear head.

    Embedding and hidden width are 16; the head keeps that width by default
    but can project to a different conditioning size.
    """

    def __init__(
        self,
        generator: torch.Generator,
        hidden_size: int = HIDDEN_SIZE,
        num_layers: int = NUM_LAYERS,
        out_dim: int | None = None,
    ):
        super().__init__()
        self.hidden_size = hidden_size
        self.out_dim = out_dim if out_dim is not None else hidden_size
        self.embed_w = uniform_param((hidden_size, 2), 2, generator)
        self.embed_b = uniform_param((hidden_size,), 2, generator)
        self.cells = nn.ModuleList(
            GRUCell(hidden_size, hidden_size, generator) for _ in range(num_layers)
        )
        self.head_w = uniform_param((self.out_dim, hidden_size), hidden_size, generator)
        self.head_b = uniform_param((self.out_dim,), hidden_size, generator)

    def forward(self, displacements: Tensor) -> Tensor:
        """Encode a batch of displacement sequences (batch, steps, 2) -> (batch, out_dim)."""
        if displacements.ndim != 3 or displacements.shape[-1] != 2 or displacements.shape[1] < 1:
            raise InvalidInputError(
                f"expected a non-empty (batch, steps, 2) tensor, got shape {tuple(displacements.shape)}"
            )
        x = displacements.to(DTYPE) @ self.embed_w.T + self.embed_b
        batch = x.shape[0]
        states = [
            torch.zeros(batch, self.hidden_size, dtype=DTYPE) for _ in self.cells
        ]
        for t in range(x.shape[1]):
            inp = x[:, t]
            for i, cell in enumerate(self.cells):
                states[i] = cell(inp, states[i])
                inp = states[i]
        out = torch.nn.functional.elu(states[-1])
        return out @ self.head_w.T + self.head_b


def encode(o_rel, encoder: MotionEncoder) -> np.ndarray:
    """Encode one displacement sequence (steps, 2) to a 16-vector."""
    seq = np.asarray(o_rel, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != 2 or seq.shape[0] < 1:
        raise InvalidInputError(f"need a non-empty (steps, 2) array, got shape {seq.shape}")
    if not np.all(np.isfinite(seq)):
        raise InvalidInputError("displacements contain non-finite entries")
    with torch.no_grad():
        c = encoder(torch.as_tensor(seq).unsqueeze(0))
    return c.squeeze(0).numpy()
