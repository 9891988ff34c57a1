"""Conditional coupling flow built from spline transforms and permutations.

Each flow layer splits its input: the first half passes through unchanged,
and a feed-forward conditioner maps (first half ++ conditioning vector) to the
spline parameters that transform the second half element-wise. Fixed random
permutations between layers (none after the last) let every coordinate be
transformed across the stack; their Jacobian determinant is exactly 1, so
they contribute nothing to the log-determinant.

Sampling pushes standard-normal noise forward through the stack and reports
the exact log-likelihood of each sample from the accumulated forward
log-determinants. `log_prob` runs the stack in reverse and is the training
(maximum-likelihood) direction.

Permutations are drawn once at model initialization from the seeded
generator and serialize with the checkpoint, so a trained model is a fixed,
well-defined bijection.

Conditioner output layout, per transformed element: K width logits, then K
height logits, then K-1 raw interior derivatives (contiguous blocks). This
layout is fixed for checkpoint stability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from trajflow.encoder import HIDDEN_SIZE, MotionEncoder, uniform_param
from trajflow.errors import InvalidInputError, NumericError
from trajflow.splines import DTYPE, knots_from_raw, rqs_transform

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowConfig:
    """Hyperparameters of the full flow (dimensions and conditioner shape)."""

    dim: int
    n_layers: int = 10
    k_bins: int = 8
    support_b: float = 15.0
    cond_dim: int = HIDDEN_SIZE
    conditioner_hidden: int = 32
    conditioner_depth: int = 5

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2 != 0:
            raise InvalidInputError(f"dim must be even and >= 2, got {self.dim}")
        if self.n_layers < 1:
            raise InvalidInputError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.k_bins < 2:
            raise InvalidInputError(f"k_bins must be >= 2, got {self.k_bins}")
        if not self.support_b > 0:
            raise InvalidInputError(f"support_b must be positive, got {self.support_b}")
        if min(self.cond_dim, self.conditioner_hidden, self.conditioner_depth) < 1:
            raise InvalidInputError("conditioner sizes must be positive")

    @property
    def split(self) -> int:
        """Number of pass-through coordinates (the split point d - 1)."""
        return self.dim // 2

    @property
    def n_transformed(self) -> int:
        return self.dim - self.split

    @property
    def theta_len(self) -> int:
        return self.n_transformed * (3 * self.k_bins - 1)


def apply_permutation(v: Tensor, perm: Tensor) -> Tensor:
    """Reorder the last axis; the log-determinant contribution is exactly 0."""
    return v[..., perm]


def invert_permutation(v: Tensor, perm: Tensor) -> Tensor:
    return v[..., torch.argsort(perm)]


def random_permutation(dim: int, generator: torch.Generator) -> Tensor:
    return torch.randperm(dim, generator=generator)


def standard_normal_logpdf(u: Tensor) -> Tensor:
    return -0.5 * (u * u).sum(dim=-1) - 0.5 * u.shape[-1] * LOG_TWO_PI


class CouplingLayer(nn.Module):
    """One coupling layer plus the permutation that follows it (None on the last)."""

    def __init__(
        self,
        config: FlowConfig,
        index: int,
        generator: torch.Generator,
        perm: Tensor | None,
        out_init_scale: float = 0.0,
    ):
        super().__init__()
        self.config = config
        self.index = index
        sizes = (
            [config.split + config.cond_dim]
            + [config.conditioner_hidden] * config.conditioner_depth
            + [config.theta_len]
        )
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(uniform_param((fan_out, fan_in), fan_in, generator))
            biases.append(uniform_param((fan_out,), fan_in, generator))
        # A small (or zero) output layer keeps the initial flow (near) identity.
        with torch.no_grad():
            weights[-1].mul_(out_init_scale)
            biases[-1].mul_(out_init_scale)
        self.weights = nn.ParameterList(weights)
        self.biases = nn.ParameterList(biases)
        if perm is not None:
            self.register_buffer("perm", perm)
        else:
            self.perm = None

    def conditioner(self, passthrough: Tensor, c: Tensor) -> Tensor:
        h = torch.cat([passthrough, c], dim=-1)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = torch.nn.functional.elu(h @ w.T + b)
        theta = h @ self.weights[-1].T + self.biases[-1]
        return theta.view(*theta.shape[:-1], self.config.n_transformed, -1)

    def _spline_params(self, passthrough: Tensor, c: Tensor):
        theta = self.conditioner(passthrough, c)
        if not torch.isfinite(theta).all():
            raise NumericError(f"non-finite conditioner output in flow layer {self.index}")
        return knots_from_raw(theta, self.config.k_bins, self.config.support_b)

    def coupling_forward(self, u: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        split = self.config.split
        passthrough = u[..., :split]
        kx, ky, d = self._spline_params(passthrough, c)
        y, ld = rqs_transform(u[..., split:], kx, ky, d, self.config.support_b)
        logdet = ld.sum(dim=-1)
        if not (torch.isfinite(y).all() and torch.isfinite(logdet).all()):
            raise NumericError(f"non-finite output in flow layer {self.index}")
        return torch.cat([passthrough, y], dim=-1), logdet

    def coupling_inverse(self, x: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        split = self.config.split
        passthrough = x[..., :split]
        kx, ky, d = self._spline_params(passthrough, c)
        u, ld = rqs_transform(
            x[..., split:], kx, ky, d, self.config.support_b, inverse=True
        )
        logdet = ld.sum(dim=-1)
        if not (torch.isfinite(u).all() and torch.isfinite(logdet).all()):
            raise NumericError(f"non-finite output in flow layer {self.index}")
        return torch.cat([passthrough, u], dim=-1), logdet


class FlowModel(nn.Module):
    """Motion encoder plus a stack of conditional spline coupling layers.

    `alpha` is the displacement scale applied to training targets; samples
    must be divided by it before decoding to trajectories. It is 1 until a
    training run with a different scale sets it, and it persists in
    checkpoints.
    """

    def __init__(
        self,
        config: FlowConfig,
        generator: torch.Generator | None = None,
        seed: int = 0,
        out_init_scale: float = 0.0,
    ):
        super().__init__()
        if generator is None:
            generator = torch.Generator()
            generator.manual_seed(seed)
        self.config = config
        self.alpha = 1.0
        self.encoder = MotionEncoder(generator, out_dim=config.cond_dim)
        layers = []
        for i in range(config.n_layers):
            perm = (
                random_permutation(config.dim, generator)
                if i < config.n_layers - 1
                else None
            )
            layers.append(CouplingLayer(config, i, generator, perm, out_init_scale))
        self.layers = nn.ModuleList(layers)

    def encode(self, observed_rel: Tensor) -> Tensor:
        return self.encoder(observed_rel)

    def forward_flow(self, u: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        h = u.to(DTYPE)
        logdet = torch.zeros(h.shape[:-1], dtype=DTYPE)
        for layer in self.layers:
            h, ld = layer.coupling_forward(h, c)
            logdet = logdet + ld
            if layer.perm is not None:
                h = apply_permutation(h, layer.perm)
        return h, logdet

    def inverse_flow(self, x: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        h = x.to(DTYPE)
        logdet = torch.zeros(h.shape[:-1], dtype=DTYPE)
        for layer in reversed(self.layers):
            if layer.perm is not None:
                h = invert_permutation(h, layer.perm)
            h, ld = layer.coupling_inverse(h, c)
            logdet = logdet + ld
        return h, logdet

    def log_prob(self, z: Tensor, c: Tensor) -> Tensor:
        """Exact log-density of `z` given conditioning `c` (inverse direction)."""
        u, logdet = self.inverse_flow(z, c)
        return standard_normal_logpdf(u) + logdet

    def sample(
        self, c: Tensor, n_samples: int, generator: torch.Generator
    ) -> tuple[Tensor, Tensor]:
        """Draw samples with their exact log-likelihoods in one forward pass.

        `c` is a single conditioning vector. Outputs live in the scaled
        displacement space: divide by `alpha` before decoding.
        """
        if n_samples < 0:
            raise InvalidInputError(f"n_samples must be >= 0, got {n_samples}")
        dim = self.config.dim
        if n_samples == 0:
            return torch.empty(0, dim, dtype=DTYPE), torch.empty(0, dtype=DTYPE)
        if c.ndim != 1:
            raise InvalidInputError(f"c must be a single vector, got shape {tuple(c.shape)}")
        with torch.no_grad():
            u = torch.randn(n_samples, dim, generator=generator, dtype=DTYPE)
            z, logdet = self.forward_flow(u, c.unsqueeze(0).expand(n_samples, -1))
            log_likelihood = standard_normal_logpdf(u) - logdet
        return z, log_likelihood
