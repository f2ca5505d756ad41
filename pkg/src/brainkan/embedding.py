"""Token embedding: fuse function descriptions (FC rows) with position
descriptions into transformer inputs.

Default fusion is additive: token_i = proj_fc(fc_i) + proj_pos(pos_i), with
the bias carried by the FC path only. A concatenation mode is available for
ablation, splitting the embedding width between the two projections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import FunctionRepresentation


@dataclass
class TokenEmbedding:
    w_fc: Tensor  # (d_fc, A)
    b_fc: Tensor  # (d_fc,)
    w_pos: Tensor  # (d_pos, 3); d_pos == d_fc for sum fusion
    fusion: str = "sum"

    @classmethod
    def create(
        cls,
        n_anchors: int,
        d_model: int,
        rng: np.random.Generator,
        fusion: str = "sum",
    ) -> "TokenEmbedding":
        if fusion not in ("sum", "concat"):
            raise ValueError(f"fusion must be 'sum' or 'concat', got {fusion!r}")
        if fusion == "sum":
            d_fc, d_pos = d_model, d_model
        else:
            d_pos = max(1, d_model // 4)
            d_fc = d_model - d_pos
        return cls(
            w_fc=Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_anchors), (d_fc, n_anchors)), requires_grad=True),
            b_fc=Tensor(np.zeros(d_fc), requires_grad=True),
            w_pos=Tensor(rng.normal(0.0, 1.0 / np.sqrt(3.0), (d_pos, 3)), requires_grad=True),
            fusion=fusion,
        )

    @property
    def n_anchors(self) -> int:
        return self.w_fc.shape[1]

    @property
    def d_model(self) -> int:
        if self.fusion == "sum":
            return self.w_fc.shape[0]
        return self.w_fc.shape[0] + self.w_pos.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.w_fc, self.b_fc, self.w_pos]

    def forward(self, fc, positions) -> Tensor:
        """Embed FC rows (..., A) and positions (..., 3) into (..., d_model)."""
        fc = ad.as_tensor(fc)
        positions = ad.as_tensor(positions)
        if fc.shape[-1] != self.n_anchors:
            raise ValueError(
                f"FC width {fc.shape[-1]} does not match projection width {self.n_anchors}"
            )
        if positions.shape[-1] != 3:
            raise ValueError(f"positions must have width 3, got {positions.shape[-1]}")
        f = ad.add(ad.matmul(fc, ad.transpose(self.w_fc)), self.b_fc)
        p = ad.matmul(positions, ad.transpose(self.w_pos))
        if self.fusion == "sum":
            return ad.add(f, p)
        return ad.concat([f, p], axis=-1)


def embed_tokens(rep: FunctionRepresentation, embedding: TokenEmbedding) -> Tensor:
    """Token sequence (N, d_model) for one subject's representation."""
    return embedding.forward(rep.fc, rep.positions)
