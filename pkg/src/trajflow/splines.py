"""Monotonic rational-quadratic spline transforms.

A spline is defined by K bins on the square [-B, B] x [-B, B]: K+1 knot
coordinates that increase strictly from (-B, -B) to (B, B), plus a positive
derivative at every knot. Boundary derivatives are fixed to 1 so the map
continues as the identity outside the support ("linear tails"), which keeps
the transform a bijection on the whole real line.

Raw conditioner outputs are turned into valid knots here: widths and heights
are softmax-normalized, scaled to cover 2B, and cumulatively summed from -B;
interior derivatives pass through a softplus with a small floor. The floors
(1e-3 of the bin-size / unit-derivative scale) prevent degenerate bins and
unbounded log-determinants.

Everything is computed in 64-bit floats: the log-determinant accumulates over
many stacked layers and 32-bit drift is visible in round-trip tests.

The vectorized functions (`knots_from_raw`, `rqs_transform`) operate on
torch tensors with arbitrary matching batch shape and are differentiable.
The scalar API (`build_spline_params`, `rqs_forward`, `rqs_inverse`) wraps
them for single-element use with explicit `SplineParams`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from trajflow.errors import InvalidInputError, NumericError

DTYPE = torch.float64

MIN_BIN_FRACTION = 1e-3
MIN_DERIVATIVE = 1e-3


@dataclass(frozen=True)
class SplineParams:
    """Knots and derivatives of one element-wise spline.

    knot_x, knot_y: (K+1,) strictly increasing, endpoints exactly -B and +B.
    derivs: (K+1,) positive, boundary entries equal to 1.
    """

    knot_x: np.ndarray
    knot_y: np.ndarray
    derivs: np.ndarray
    support_b: float

    @property
    def n_bins(self) -> int:
        return len(self.knot_x) - 1

    def validate(self) -> None:
        b = self.support_b
        if not b > 0:
            raise InvalidInputError(f"support_b must be positive, got {b}")
        kx, ky, d = (np.asarray(a, dtype=np.float64) for a in (self.knot_x, self.knot_y, self.derivs))
        if kx.shape != ky.shape or kx.shape != d.shape or kx.ndim != 1 or len(kx) < 2:
            raise InvalidInputError("knot_x, knot_y, derivs must be 1-d arrays of equal length >= 2")
        for name, a in (("knot_x", kx), ("knot_y", ky), ("derivs", d)):
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} contains non-finite entries")
        tol = 1e-9 * b
        for name, a in (("knot_x", kx), ("knot_y", ky)):
            if np.any(np.diff(a) <= 0):
                raise InvalidInputError(f"{name} is not strictly increasing")
            if abs(a[0] + b) > tol or abs(a[-1] - b) > tol:
                raise InvalidInputError(f"{name} endpoints must be -B and +B")
        if np.any(d <= 0):
            raise InvalidInputError("derivs must be strictly positive")
        if abs(d[0] - 1.0) > 1e-12 or abs(d[-1] - 1.0) > 1e-12:
            raise InvalidInputError("boundary derivatives must equal 1")


def _softplus_offset(min_derivative: float) -> float:
    # Chosen so a raw value of 0 maps to a derivative of exactly 1.
    return float(np.log(np.expm1(1.0 - min_derivative)))


def knots_from_raw(
    raw: Tensor,
    k_bins: int,
    support_b: float,
    min_bin_fraction: float = MIN_BIN_FRACTION,
    min_derivative: float = MIN_DERIVATIVE,
) -> tuple[Tensor, Tensor, Tensor]:
    """Map raw parameters (..., 3K-1) to (knot_x, knot_y, derivs), each (..., K+1).

    The first K entries are width logits, the next K height logits, the last
    K-1 raw interior derivatives. Widths and heights are softmaxed, floored at
    `min_bin_fraction` of the 2B extent, scaled by 2B and cumulatively summed
    from -B. Interior derivatives go through softplus (offset so raw 0 gives
    derivative 1) plus `min_derivative`; boundary derivatives are constant 1.
    """
    if k_bins < 2:
        raise InvalidInputError(f"k_bins must be >= 2, got {k_bins}")
    if not support_b > 0:
        raise InvalidInputError(f"support_b must be positive, got {support_b}")
    if min_bin_fraction * k_bins >= 1.0:
        raise InvalidInputError(
            f"min_bin_fraction * k_bins must be < 1, got {min_bin_fraction * k_bins}"
        )
    if raw.shape[-1] != 3 * k_bins - 1:
        raise InvalidInputError(
            f"raw must have {3 * k_bins - 1} entries in the last axis, got {raw.shape[-1]}"
        )
    if not torch.isfinite(raw).all():
        raise InvalidInputError("raw spline parameters contain non-finite entries")

    raw = raw.to(DTYPE)
    w_logits = raw[..., :k_bins]
    h_logits = raw[..., k_bins : 2 * k_bins]
    d_raw = raw[..., 2 * k_bins :]

    def edges(logits: Tensor) -> Tensor:
        frac = torch.softmax(logits, dim=-1)
        frac = min_bin_fraction + (1.0 - min_bin_fraction * k_bins) * frac
        cum = torch.cumsum(frac, dim=-1) * (2.0 * support_b) - support_b
        lo = torch.full_like(cum[..., :1], -support_b)
        hi = torch.full_like(cum[..., :1], support_b)
        # Interior knots from the cumulative sum; endpoints pinned exactly.
        return torch.cat([lo, cum[..., :-1], hi], dim=-1)

    knot_x = edges(w_logits)
    knot_y = edges(h_logits)

    one = torch.ones_like(d_raw[..., :1])
    d_inner = min_derivative + torch.nn.functional.softplus(
        d_raw + _softplus_offset(min_derivative)
    )
    derivs = torch.cat([one, d_inner, one], dim=-1)
    return knot_x, knot_y, derivs


def _gather(edges: Tensor, idx: Tensor) -> Tensor:
    return edges.gather(-1, idx.unsqueeze(-1)).squeeze(-1)


def rqs_transform(
    inputs: Tensor,
    knot_x: Tensor,
    knot_y: Tensor,
    derivs: Tensor,
    support_b: float,
    inverse: bool = False,
) -> tuple[Tensor, Tensor]:
    """Apply the spline element-wise; returns (outputs, log |d out / d in|).

    `inputs` has any shape (...); the knot tensors have shape (..., K+1) with
    the same leading shape. Points with |input| > B pass through unchanged
    with zero log-derivative; |input| = B counts as inside the support.

    In bin k with width w, height h, slope s = h / w and normalized position
    xi = (x - x_k) / w, the forward map is

        y = y_k + h * (s xi^2 + d_k xi (1 - xi))
                  / (s + (d_{k+1} + d_k - 2 s) xi (1 - xi))

    and the inverse solves the corresponding quadratic in xi using the
    numerically stable root 2c / (-b - sqrt(b^2 - 4ac)).
    """
    b_sup = float(support_b)
    inside = inputs.abs() <= b_sup
    t = inputs.clamp(-b_sup, b_sup)

    edges = knot_y if inverse else knot_x
    # Ties at an interior knot resolve to the right (higher) bin.
    k = torch.searchsorted(edges.contiguous(), t.unsqueeze(-1).contiguous(), right=True)
    k = (k.squeeze(-1) - 1).clamp(0, knot_x.shape[-1] - 2)

    xl, xr = _gather(knot_x[..., :-1], k), _gather(knot_x[..., 1:], k)
    yl, yr = _gather(knot_y[..., :-1], k), _gather(knot_y[..., 1:], k)
    dl, dr = _gather(derivs[..., :-1], k), _gather(derivs[..., 1:], k)

    w = xr - xl
    h = yr - yl
    s = h / w
    coef = dr + dl - 2.0 * s

    if not inverse:
        xi = (t - xl) / w
    else:
        u = t - yl
        a = h * (s - dl) + u * coef
        bq = h * dl - u * coef
        c = -s * u
        disc = bq * bq - 4.0 * a * c
        if (disc < 0).any():
            raise NumericError(
                "negative discriminant in spline inversion (corrupted parameters)"
            )
        xi = 2.0 * c / (-bq - torch.sqrt(disc))

    xi1m = 1.0 - xi
    den = s + coef * xi * xi1m
    log_deriv = (
        2.0 * torch.log(s)
        + torch.log(dr * xi * xi + 2.0 * s * xi * xi1m + dl * xi1m * xi1m)
        - 2.0 * torch.log(den)
    )

    if not inverse:
        out_in = yl + h * (s * xi * xi + dl * xi * xi1m) / den
        ld_in = log_deriv
    else:
        out_in = xl + xi * w
        ld_in = -log_deriv

    zero = torch.zeros_like(ld_in)
    return torch.where(inside, out_in, inputs), torch.where(inside, ld_in, zero)


# ---------------------------------------------------------------------------
# Scalar API over explicit SplineParams
# ---------------------------------------------------------------------------

def build_spline_params(
    raw, k_bins: int, support_b: float,
    min_bin_fraction: float = MIN_BIN_FRACTION,
    min_derivative: float = MIN_DERIVATIVE,
) -> SplineParams:
    """Construct validated `SplineParams` from a raw length-(3K-1) vector."""
    raw_t = torch.as_tensor(np.asarray(raw, dtype=np.float64), dtype=DTYPE)
    if raw_t.ndim != 1:
        raise InvalidInputError(f"raw must be a 1-d vector, got shape {tuple(raw_t.shape)}")
    kx, ky, d = knots_from_raw(raw_t, k_bins, support_b, min_bin_fraction, min_derivative)
    p = SplineParams(kx.numpy(), ky.numpy(), d.numpy(), float(support_b))
    p.validate()
    return p


def _as_tensors(p: SplineParams) -> tuple[Tensor, Tensor, Tensor]:
    return (
        torch.as_tensor(p.knot_x, dtype=DTYPE),
        torch.as_tensor(p.knot_y, dtype=DTYPE),
        torch.as_tensor(p.derivs, dtype=DTYPE),
    )


def rqs_forward(x_in: float, p: SplineParams) -> tuple[float, float]:
    """Forward spline map of one scalar; returns (y, log |dy/dx|)."""
    p.validate()
    kx, ky, d = _as_tensors(p)
    y, ld = rqs_transform(torch.tensor(x_in, dtype=DTYPE), kx, ky, d, p.support_b)
    return float(y), float(ld)


def rqs_inverse(y_in: float, p: SplineParams) -> tuple[float, float]:
    """Inverse spline map of one scalar; returns (x, log |dx/dy|)."""
    p.validate()
    kx, ky, d = _as_tensors(p)
    x, ld = rqs_transform(
        torch.tensor(y_in, dtype=DTYPE), kx, ky, d, p.support_b, inverse=True
    )
    return float(x), float(ld)
