"""Toy causal transformer shared by the passage encoder and the listwise reranker.

Pre-norm blocks with RMS normalization, multi-head causal self-attention and a
SiLU feed-forward, learned absolute positions, no biases. The causal mask is
additive: -1e9 on the strictly-upper triangle before the row softmax, which in
double precision underflows masked attention weights to exactly zero, so hidden
states are bitwise independent of later positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 64
    ffn_mult: int = 4
    norm_eps: float = 1e-6
    init_scale: float = 0.02

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ConfigError("d_model, n_layers and n_heads must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")
        if self.norm_eps < 0:
            raise ConfigError("norm_eps must be >= 0")


class CausalTransformer:
    """Parameter container plus the forward pass; training mutates parameters in place."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        s = config.init_scale
        d, f = config.d_model, config.d_model * config.ffn_mult
        p: dict[str, Tensor] = {}
        p["tok_emb"] = ad.param(rng.normal(0.0, s, (config.vocab_size, d)))
        p["pos_emb"] = ad.param(rng.normal(0.0, s, (config.max_seq_len, d)))
        for i in range(config.n_layers):
            p[f"layers.{i}.attn_norm.weight"] = ad.param(np.ones(d))
            for w in ("wq", "wk", "wv", "wo"):
                p[f"layers.{i}.attn.{w}"] = ad.param(rng.normal(0.0, s, (d, d)))
            p[f"layers.{i}.mlp_norm.weight"] = ad.param(np.ones(d))
            p[f"layers.{i}.mlp.w1"] = ad.param(rng.normal(0.0, s, (d, f)))
            p[f"layers.{i}.mlp.w2"] = ad.param(rng.normal(0.0, s, (f, d)))
        p["final_norm.weight"] = ad.param(np.ones(d))
        self.params = p
        self._masks: dict[int, Tensor] = {}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def set_trainable(self, trainable: bool) -> None:
        for t in self.params.values():
            t.requires_grad = bool(trainable)

    def _mask(self, t: int) -> Tensor:
        cached = self._masks.get(t)
        if cached is None:
            cached = ad.tensor(np.triu(np.full((t, t), MASK_VALUE), k=1))
            self._masks[t] = cached
        return cached

    def embed_tokens(self, token_ids) -> Tensor:
        """Token embeddings plus learned absolute positions, shape [T, d]."""
        t = len(token_ids)
        if t == 0:
            raise ShapeError("empty token sequence")
        if t > self.config.max_seq_len:
            raise ShapeError(f"sequence length {t} exceeds max_seq_len={self.config.max_seq_len}")
        x = ad.take_rows(self.params["tok_emb"], token_ids)
        pos = ad.take_rows(self.params["pos_emb"], np.arange(t))
        return ad.add(x, pos)

    def _attention(self, x: Tensor, layer: int) -> Tensor:
        cfg = self.config
        head_dim = cfg.d_model // cfg.n_heads
        scale = 1.0 / math.sqrt(head_dim)
        q = ad.matmul(x, self.params[f"layers.{layer}.attn.wq"])
        k = ad.matmul(x, self.params[f"layers.{layer}.attn.wk"])
        v = ad.matmul(x, self.params[f"layers.{layer}.attn.wv"])
        mask = self._mask(x.shape[0])
        heads = []
        for h in range(cfg.n_heads):
            lo, hi = h * head_dim, (h + 1) * head_dim
            logits = ad.mul(ad.matmul(ad.cols(q, lo, hi), ad.transpose(ad.cols(k, lo, hi))), scale)
            weights = ad.softmax_rows(ad.add(logits, mask))
            heads.append(ad.matmul(weights, ad.cols(v, lo, hi)))
        return ad.matmul(ad.concat_cols(heads), self.params[f"layers.{layer}.attn.wo"])

    def _block(self, x: Tensor, layer: int) -> Tensor:
        cfg = self.config
        a = ad.rms_norm(x, self.params[f"layers.{layer}.attn_norm.weight"], cfg.norm_eps)
        x = ad.add(x, self._attention(a, layer))
        m = ad.rms_norm(x, self.params[f"layers.{layer}.mlp_norm.weight"], cfg.norm_eps)
        h = ad.silu(ad.matmul(m, self.params[f"layers.{layer}.mlp.w1"]))
        return ad.add(x, ad.matmul(h, self.params[f"layers.{layer}.mlp.w2"]))

    def forward_embedded(self, x: Tensor) -> Tensor:
        """Run the blocks over an already-embedded [T, d] sequence; post-norm output."""
        if x.ndim != 2 or x.shape[1] != self.config.d_model:
            raise ShapeError(f"expected [T, {self.config.d_model}] input, got {x.shape}")
        if x.shape[0] > self.config.max_seq_len:
            raise ShapeError(f"sequence length {x.shape[0]} exceeds max_seq_len={self.config.max_seq_len}")
        for i in range(self.config.n_layers):
            x = self._block(x, i)
        return ad.rms_norm(x, self.params["final_norm.weight"], self.config.norm_eps)

    def forward_tokens(self, token_ids) -> Tensor:
        return self.forward_embedded(self.embed_tokens(token_ids))
