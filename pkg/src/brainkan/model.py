"""ViT/DeiT-style encoder classifiers over FC-derived tokens.

Both backbones share the same pre-norm encoder; DeiT adds a distillation
token and a second head trained against the ground-truth labels (no teacher
at this scale), with the two heads' logits averaged at inference. The
feed-forward block and the classification head are independently either MLP
or KAN, spanning the four variants mlp-mlp, kan-kan, kan-mlp, mlp-kan.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import TokenEmbedding
from .kan import KanBlockParams, KanHead, _branch_drop, kan_block_forward, make_kan_block
from .rng import make_rng

BACKBONES = ("vit", "deit")
FFN_KINDS = ("mlp", "kan")
VARIANTS = ("mlp-mlp", "kan-kan", "kan-mlp", "mlp-kan")


@dataclass
class ModelConfig:
    backbone: str = "vit"
    encoder_ffn: str = "mlp"
    head: str = "mlp"
    d_model: int = 64
    depth: int = 4
    n_heads: int = 4
    mlp_hidden_ratio: int = 2
    kan_grid_size: int = 8
    kan_grid_range: float = 2.0
    kan_block_layers: int = 1
    kan_base_path: bool = True
    drop_path_rate: float = 0.1
    mlp_drop_path: bool = True
    fusion: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.encoder_ffn not in FFN_KINDS or self.head not in FFN_KINDS:
            raise ValueError(
                f"encoder_ffn/head must be 'mlp' or 'kan', got {self.encoder_ffn!r}/{self.head!r}"
            )
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError(f"drop_path_rate must lie in [0, 1), got {self.drop_path_rate}")

    @property
    def variant(self) -> str:
        return f"{self.encoder_ffn}-{self.head}"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def parse_variant(name: str) -> tuple[str, str]:
    """Split 'kan-mlp' style names into (encoder_ffn, head)."""
    if name not in VARIANTS:
        raise ValueError(f"unknown configuration {name!r}, expected one of {VARIANTS}")
    ffn, head = name.split("-")
    return ffn, head


# ---------------------------------------------------------------------------
# blocks


@dataclass
class AttentionParams:
    ln_gain: Tensor
    ln_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    n_heads: int
    drop_path_rate: float

    def parameters(self) -> list[Tensor]:
        return [
            self.ln_gain, self.ln_bias,
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
        ]


def _linear_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim), (out_dim, in_dim)), requires_grad=True)


def _make_attention(d_model: int, n_heads: int, rate: float, rng) -> AttentionParams:
    return AttentionParams(
        ln_gain=Tensor(np.ones(d_model), requires_grad=True),
        ln_bias=Tensor(np.zeros(d_model), requires_grad=True),
        wq=_linear_init(rng, d_model, d_model),
        bq=Tensor(np.zeros(d_model), requires_grad=True),
        wk=_linear_init(rng, d_model, d_model),
        bk=Tensor(np.zeros(d_model), requires_grad=True),
        wv=_linear_init(rng, d_model, d_model),
        bv=Tensor(np.zeros(d_model), requires_grad=True),
        wo=_linear_init(rng, d_model, d_model),
        bo=Tensor(np.zeros(d_model), requires_grad=True),
        n_heads=n_heads,
        drop_path_rate=rate,
    )


def attention_forward(x: Tensor, p: AttentionParams, training: bool = False, rng=None) -> Tensor:
    """Pre-norm multi-head self-attention with a DropPath residual."""
    b, n, d = x.shape
    dh = d // p.n_heads
    h = ad.layer_norm(x, p.ln_gain, p.ln_bias)
    q = ad.add(ad.matmul(h, ad.transpose(p.wq)), p.bq)
    k = ad.add(ad.matmul(h, ad.transpose(p.wk)), p.bk)
    v = ad.add(ad.matmul(h, ad.transpose(p.wv)), p.bv)

    def split(t):  # (B, N, d) -> (B, H, N, dh)
        return ad.transpose(ad.reshape(t, (b, n, p.n_heads, dh)), (0, 2, 1, 3))

    q, k, v = split(q), split(k), split(v)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(attn, v)  # (B, H, N, dh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    out = ad.add(ad.matmul(ctx, ad.transpose(p.wo)), p.bo)
    return ad.add(x, _branch_drop(out, p.drop_path_rate, training, rng))


@dataclass
class MlpBlockParams:
    ln_gain: Tensor
    ln_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    drop_path_rate: float

    def parameters(self) -> list[Tensor]:
        return [self.ln_gain, self.ln_bias, self.w1, self.b1, self.w2, self.b2]


def _make_mlp_block(d_model: int, hidden: int, rate: float, rng) -> MlpBlockParams:
    return MlpBlockParams(
        ln_gain=Tensor(np.ones(d_model), requires_grad=True),
        ln_bias=Tensor(np.zeros(d_model), requires_grad=True),
        w1=_linear_init(rng, hidden, d_model),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=_linear_init(rng, d_model, hidden),
        b2=Tensor(np.zeros(d_model), requires_grad=True),
        drop_path_rate=rate,
    )


def mlp_block_forward(x: Tensor, p: MlpBlockParams, training: bool = False, rng=None) -> Tensor:
    h = ad.layer_norm(x, p.ln_gain, p.ln_bias)
    h = ad.add(ad.matmul(h, ad.transpose(p.w1)), p.b1)
    h = ad.gelu(h)
    h = ad.add(ad.matmul(h, ad.transpose(p.w2)), p.b2)
    return ad.add(x, _branch_drop(h, p.drop_path_rate, training, rng))


@dataclass
class MlpHead:
    w: Tensor  # (2, d)
    b: Tensor  # (2,)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]

    def forward(self, x) -> Tensor:
        return ad.add(ad.matmul(x, ad.transpose(self.w)), self.b)


# ---------------------------------------------------------------------------
# model


@dataclass
class ClassifierModel:
    config: ModelConfig
    embedding: TokenEmbedding
    class_token: Tensor
    dist_token: Tensor | None
    blocks: list[tuple[AttentionParams, object]]
    final_ln_gain: Tensor
    final_ln_bias: Tensor
    head: object
    dist_head: object | None

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, t in zip(("embed.w_fc", "embed.b_fc", "embed.w_pos"), self.embedding.parameters()):
            out[name] = t
        out["cls_token"] = self.class_token
        if self.dist_token is not None:
            out["dist_token"] = self.dist_token
        attn_names = ("ln_gain", "ln_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        for i, (attn, ffn) in enumerate(self.blocks):
            for name, t in zip(attn_names, attn.parameters()):
                out[f"block{i}.attn.{name}"] = t
            out.update(_ffn_named(f"block{i}.ffn", ffn))
        out["final_ln.gain"] = self.final_ln_gain
        out["final_ln.bias"] = self.final_ln_bias
        out.update(_head_named("head", self.head))
        if self.dist_head is not None:
            out.update(_head_named("dist_head", self.dist_head))
        return out


def _ffn_named(prefix: str, ffn) -> dict[str, Tensor]:
    out = {}
    if isinstance(ffn, MlpBlockParams):
        for name, t in zip(("ln_gain", "ln_bias", "w1", "b1", "w2", "b2"), ffn.parameters()):
            out[f"{prefix}.{name}"] = t
    else:
        out[f"{prefix}.ln_gain"] = ffn.ln_gain
        out[f"{prefix}.ln_bias"] = ffn.ln_bias
        for j, bank in enumerate(ffn.layers):
            out[f"{prefix}.layer{j}.coeffs"] = bank.coeffs
            if bank.base_weight is not None:
                out[f"{prefix}.layer{j}.base_w"] = bank.base_weight
    return out


def _head_named(prefix: str, head) -> dict[str, Tensor]:
    out = {}
    if isinstance(head, MlpHead):
        out[f"{prefix}.w"] = head.w
        out[f"{prefix}.b"] = head.b
    else:
        for j, bank in enumerate(head.layers):
            out[f"{prefix}.layer{j}.coeffs"] = bank.coeffs
            if bank.base_weight is not None:
                out[f"{prefix}.layer{j}.base_w"] = bank.base_weight
    return out


def build_model(config: ModelConfig, n_anchors: int) -> ClassifierModel:
    """Instantiate a classifier with deterministic seed-driven initialization."""
    rng = make_rng(config.seed)
    d = config.d_model
    embedding = TokenEmbedding.create(n_anchors, d, rng, fusion=config.fusion)
    class_token = Tensor(rng.normal(0.0, 0.02, (1, 1, d)), requires_grad=True)
    dist_token = None
    if config.backbone == "deit":
        dist_token = Tensor(rng.normal(0.0, 0.02, (1, 1, d)), requires_grad=True)

    blocks = []
    for _ in range(config.depth):
        attn = _make_attention(d, config.n_heads, config.drop_path_rate, rng)
        if config.encoder_ffn == "kan":
            ffn = make_kan_block(
                d,
                rng,
                grid_size=config.kan_grid_size,
                grid_range=config.kan_grid_range,
                drop_path_rate=config.drop_path_rate,
                n_layers=config.kan_block_layers,
                include_base=config.kan_base_path,
            )
        else:
            rate = config.drop_path_rate if config.mlp_drop_path else 0.0
            ffn = _make_mlp_block(d, config.mlp_hidden_ratio * d, rate, rng)
        blocks.append((attn, ffn))

    final_ln_gain = Tensor(np.ones(d), requires_grad=True)
    final_ln_bias = Tensor(np.zeros(d), requires_grad=True)

    def make_head():
        if config.head == "kan":
            return KanHead.create(
                d, rng,
                grid_size=config.kan_grid_size,
                grid_range=config.kan_grid_range,
                include_base=config.kan_base_path,
            )
        return MlpHead(w=_linear_init(rng, 2, d), b=Tensor(np.zeros(2), requires_grad=True))

    head = make_head()
    dist_head = make_head() if config.backbone == "deit" else None
    return ClassifierModel(
        config=config,
        embedding=embedding,
        class_token=class_token,
        dist_token=dist_token,
        blocks=blocks,
        final_ln_gain=final_ln_gain,
        final_ln_bias=final_ln_bias,
        head=head,
        dist_head=dist_head,
    )


def _encode(model: ClassifierModel, tokens, training: bool, rng) -> Tensor:
    tokens = ad.as_tensor(tokens)
    if tokens.data.ndim == 2:
        tokens = ad.reshape(tokens, (1,) + tokens.shape)
    b, n, d = tokens.shape
    if d != model.config.d_model:
        raise ValueError(f"token width {d} != model width {model.config.d_model}")
    special = [ad.broadcast_to(model.class_token, (b, 1, d))]
    if model.dist_token is not None:
        special.append(ad.broadcast_to(model.dist_token, (b, 1, d)))
    x = ad.concat(special + [tokens], axis=1)
    for attn, ffn in model.blocks:
        x = attention_forward(x, attn, training, rng)
        if isinstance(ffn, KanBlockParams):
            x = kan_block_forward(x, ffn, training, rng)
        else:
            x = mlp_block_forward(x, ffn, training, rng)
    return ad.layer_norm(x, model.final_ln_gain, model.final_ln_bias)


def head_logits(model: ClassifierModel, tokens, training: bool = False, rng=None) -> list[Tensor]:
    """Per-head logits: one entry for ViT, two (class, distillation) for DeiT."""
    x = _encode(model, tokens, training, rng)
    outs = [model.head.forward(x[:, 0, :])]
    if model.dist_head is not None:
        outs.append(model.dist_head.forward(x[:, 1, :]))
    return outs


def forward(model: ClassifierModel, tokens, training: bool = False, rng=None) -> Tensor:
    """Logits (batch, 2); DeiT averages its two heads."""
    outs = head_logits(model, tokens, training, rng)
    if len(outs) == 1:
        return outs[0]
    return ad.mul(ad.add(outs[0], outs[1]), 0.5)


def model_loss(model: ClassifierModel, tokens, labels, training: bool = True, rng=None) -> Tensor:
    """Cross-entropy; DeiT trains both heads on the labels and averages the losses."""
    outs = head_logits(model, tokens, training, rng)
    losses = [ad.cross_entropy(o, labels) for o in outs]
    if len(losses) == 1:
        return losses[0]
    return ad.mul(ad.add(losses[0], losses[1]), 0.5)


def embed_batch(model: ClassifierModel, reps: Sequence) -> Tensor:
    """Stack subject representations and embed them as one (B, N, d) batch."""
    fc = np.stack([r.fc for r in reps])
    pos = np.stack([r.positions for r in reps])
    return model.embedding.forward(fc, pos)


def predict_logits(model: ClassifierModel, reps: Sequence, training: bool = False, rng=None) -> Tensor:
    return forward(model, embed_batch(model, reps), training, rng)


def count_parameters(model: ClassifierModel) -> int:
    return sum(t.size for t in model.parameters())


def save_config(config: ModelConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return ModelConfig.from_json(json.load(fh))
