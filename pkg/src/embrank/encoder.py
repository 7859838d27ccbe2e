"""Passage/query encoder: a causal transformer pooled at the final token.

Each text is processed independently and compressed to a single d-dimensional
embedding, taken directly from the last position's hidden state after the
final norm. No projection head sits between this output and the reranker's
input slots, so the two models must share the hidden dimension.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmbrankError, ShapeError
from .transformer import CausalTransformer, ModelConfig


class EncoderModel:
    """``normalize_output`` rescales embeddings to unit norm before use; the
    default (off) feeds raw hidden states into the residual fusion downstream."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 normalize_output: bool = False):
        self.transformer = CausalTransformer(config, rng)
        self.normalize_output = normalize_output

    @property
    def config(self) -> ModelConfig:
        return self.transformer.config

    def parameters(self) -> dict[str, Tensor]:
        return self.transformer.parameters()

    def set_trainable(self, trainable: bool) -> None:
        self.transformer.set_trainable(trainable)

    def encode_passage(self, token_ids) -> Tensor:
        """Compress one token sequence to a single [d] embedding (last-token pooling)."""
        n = len(token_ids)
        if n == 0:
            raise ShapeError("encode_passage: empty token sequence")
        if n > self.config.max_seq_len:
            raise ShapeError(f"encode_passage: length {n} exceeds "
                             f"max_seq_len={self.config.max_seq_len} (no silent truncation)")
        hidden = self.transformer.forward_tokens(token_ids)
        e = ad.pick(hidden, n - 1)
        if self.normalize_output:
            e = ad.div(e, ad.sqrt(ad.dot(e, e)))
        return e

    def encode_query(self, token_ids) -> Tensor:
        """Queries run through the identical network and pooling as passages."""
        return self.encode_passage(token_ids)

    def batch_encode(self, passages) -> list[Tensor]:
        """Element i equals encode_passage(passages[i]) bit for bit; order preserved."""
        out = []
        for i, tokens in enumerate(passages):
            try:
                out.append(self.encode_passage(tokens))
            except EmbrankError as exc:
                raise type(exc)(f"passage {i}: {exc}") from exc
        return out
