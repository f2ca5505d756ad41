"""Kolmogorov-Arnold layers on a reflectional-switch basis, plus the KAN
transformer block (pre-norm residual with DropPath) and the KAN head.

Each edge (i -> j) of a layer carries a learnable univariate function:
a weighted sum of bumps b(x) = 1 - tanh((x - g_k)/h)^2 centered on a shared
uniform knot grid, plus an optional silu base path. Node j sums its incoming
edge functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import make_rng


def rswaf_basis(x, knot: float, width: float):
    """Reflectional switch bump: 1 - tanh((x - knot)/width)^2.

    Even about the knot, peaks at 1 there, decays to 0 in both tails.
    """
    if width <= 0:
        raise ValueError(f"basis width must be positive, got {width}")
    t = np.tanh((np.asarray(x, dtype=np.float64) - knot) / width)
    out = 1.0 - t * t
    return float(out) if np.isscalar(x) else out


@dataclass
class RswafEdgeBank:
    """All edge functions of one KAN layer: coefficients (out, in, G) on a
    shared knot grid, plus an optional silu base weight (out, in)."""

    in_dim: int
    out_dim: int
    grid: np.ndarray  # (G,) strictly increasing knots
    h: float
    coeffs: Tensor
    base_weight: Tensor | None

    @classmethod
    def create(
        cls,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        grid_size: int = 8,
        grid_range: float = 2.0,
        include_base: bool = True,
    ) -> "RswafEdgeBank":
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"invalid KAN layer dims {in_dim}x{out_dim}")
        grid = np.linspace(-grid_range, grid_range, grid_size)
        h = (grid[1] - grid[0]) / 2.0 if grid_size > 1 else grid_range
        coeffs = Tensor(rng.normal(0.0, 0.1, size=(out_dim, in_dim, grid_size)), requires_grad=True)
        base = None
        if include_base:
            base = Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim)),
                requires_grad=True,
            )
        return cls(in_dim, out_dim, grid, float(h), coeffs, base)

    def parameters(self) -> list[Tensor]:
        out = [self.coeffs]
        if self.base_weight is not None:
            out.append(self.base_weight)
        return out

    def forward(self, x: Tensor) -> Tensor:
        return kan_layer_forward(x, self)


def kan_layer_forward(x, bank: RswafEdgeBank) -> Tensor:
    """y_j = sum_i [ w_b[j,i] silu(x_i) + sum_k c[j,i,k] b(x_i; g_k, h) ]."""
    x = ad.as_tensor(x)
    vector_in = x.data.ndim == 1
    if vector_in:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.shape[-1] != bank.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != layer in_dim {bank.in_dim}")
    g = x.shape[:-1]
    n_knots = bank.grid.shape[0]

    xe = ad.reshape(x, g + (bank.in_dim, 1))
    t = ad.tanh(ad.mul(ad.sub(xe, Tensor(bank.grid)), 1.0 / bank.h))
    basis = ad.sub(1.0, ad.mul(t, t))  # (..., in, G)
    flat = ad.reshape(basis, g + (bank.in_dim * n_knots,))
    cmat = ad.reshape(bank.coeffs, (bank.out_dim, bank.in_dim * n_knots))
    y = ad.matmul(flat, ad.transpose(cmat))
    if bank.base_weight is not None:
        y = ad.add(y, ad.matmul(ad.silu(x), ad.transpose(bank.base_weight)))
    if vector_in:
        y = ad.reshape(y, (bank.out_dim,))
    return y


def _branch_drop(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """DropPath core; tolerates rate >= 1 (always drop) as a test hook."""
    if not training or rate == 0.0:
        return x
    if rate >= 1.0:
        return ad.mul(x, 0.0)
    keep_prob = 1.0 - rate
    n = x.shape[0]
    mask = (rng.random(n) < keep_prob).astype(np.float64) / keep_prob
    mask = mask.reshape((n,) + (1,) * (x.data.ndim - 1))
    return ad.mul(x, Tensor(mask))


def drop_path(x, rate: float, training: bool, rng=None) -> Tensor:
    """Per-sample stochastic branch dropping with survival rescaling.

    Samples are indexed along the first axis. In eval mode this is the
    identity; in training each sample's branch is kept with probability
    1 - rate and scaled by 1/(1 - rate).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop_path rate must lie in [0, 1), got {rate}")
    x = ad.as_tensor(x)
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(int(rng))
    if training and rate > 0.0 and rng is None:
        raise ValueError("drop_path in training mode needs a generator or seed")
    return _branch_drop(x, rate, training, rng)


@dataclass
class KanBlockParams:
    """Pre-norm KAN residual block: x + drop_path(kan(layer_norm(x)))."""

    ln_gain: Tensor
    ln_bias: Tensor
    layers: list[RswafEdgeBank]
    drop_path_rate: float = 0.1

    def parameters(self) -> list[Tensor]:
        out = [self.ln_gain, self.ln_bias]
        for bank in self.layers:
            out.extend(bank.parameters())
        return out


def make_kan_block(
    d_model: int,
    rng: np.random.Generator,
    grid_size: int = 8,
    grid_range: float = 2.0,
    drop_path_rate: float = 0.1,
    n_layers: int = 1,
    include_base: bool = True,
) -> KanBlockParams:
    if not 0.0 <= drop_path_rate < 1.0:
        raise ValueError(f"drop_path_rate must lie in [0, 1), got {drop_path_rate}")
    if n_layers == 1:
        widths = [(d_model, d_model)]
    elif n_layers == 2:
        widths = [(d_model, 2 * d_model), (2 * d_model, d_model)]
    else:
        raise ValueError(f"KAN blocks support 1 or 2 stacked layers, got {n_layers}")
    layers = [
        RswafEdgeBank.create(i, o, rng, grid_size, grid_range, include_base) for i, o in widths
    ]
    return KanBlockParams(
        ln_gain=Tensor(np.ones(d_model), requires_grad=True),
        ln_bias=Tensor(np.zeros(d_model), requires_grad=True),
        layers=layers,
        drop_path_rate=drop_path_rate,
    )


def kan_block_forward(tokens, params: KanBlockParams, training: bool = False, rng=None) -> Tensor:
    tokens = ad.as_tensor(tokens)
    if tokens.shape[-1] != params.layers[0].in_dim:
        raise ValueError(
            f"token width {tokens.shape[-1]} != block width {params.layers[0].in_dim}"
        )
    h = ad.layer_norm(tokens, params.ln_gain, params.ln_bias)
    for bank in params.layers:
        h = kan_layer_forward(h, bank)
    return ad.add(tokens, _branch_drop(h, params.drop_path_rate, training, rng))


@dataclass
class KanHead:
    """Stack of edge banks mapping the class token to 2 logits."""

    layers: list[RswafEdgeBank] = field(default_factory=list)

    @classmethod
    def create(
        cls,
        d_model: int,
        rng: np.random.Generator,
        grid_size: int = 8,
        grid_range: float = 2.0,
        include_base: bool = True,
    ) -> "KanHead":
        return cls([RswafEdgeBank.create(d_model, 2, rng, grid_size, grid_range, include_base)])

    def parameters(self) -> list[Tensor]:
        out = []
        for bank in self.layers:
            out.extend(bank.parameters())
        return out

    def forward(self, x) -> Tensor:
        return kan_head_forward(x, self)


def kan_head_forward(class_token, head: KanHead) -> Tensor:
    h = ad.as_tensor(class_token)
    for bank in head.layers:
        h = kan_layer_forward(h, bank)
    return h
