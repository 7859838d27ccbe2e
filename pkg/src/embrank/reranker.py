"""Listwise reranker over compressed passage embeddings.

The input sequence interleaves vocabulary tokens and injected encoder
embeddings: instruction tokens, query tokens, one embedding slot per
candidate passage, a repeated query anchor, and the EOS token. Causal
attention contextualizes the sequence; each passage representation is
the (optional) residual sum of its hidden state and its original
encoder embedding; relevance is the cosine similarity between the EOS
hidden state and each fused representation. The whole scoring path is
a single forward pass: no token is ever generated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Vocabulary
from .encoder import EncoderModel
from .errors import ConfigError, DegenerateInputError, ShapeError
from .runs import RunEntry, RunList, TokenCounter
from .transformer import CausalTransformer, ModelConfig


@dataclass
class RerankInput:
    x: Tensor                    # [T, d] embedded sequence, positions added
    passage_positions: list[int]  # contiguous block holding the injected embeddings
    eos_position: int
    n: int


@dataclass
class RerankOutput:
    fused: list[Tensor]          # r_i, each [d]
    h_eos: Tensor
    score_tensors: list[Tensor]  # graph-connected scalars, for training
    scores: list[float]
    permutation: list[int]       # doc indices by descending score, ties -> earlier input


def fuse_residual(h: Tensor, e: Tensor, *, residual: bool = True,
                  hidden_state: bool = True) -> Tensor:
    """Fused passage representation: h + e, or one of the two under ablation flags."""
    if not residual and not hidden_state:
        raise ConfigError("fuse_residual: residual and hidden_state cannot both be disabled")
    if not hidden_state:
        return e
    if not residual:
        return h
    return ad.add(h, e)


class RerankerModel:
    def __init__(self, config: ModelConfig, rng: np.random.Generator, eos_id: int, *,
                 residual_enabled: bool = True,
                 hidden_state_enabled: bool = True,
                 passage_position_embeddings: bool = True):
        if not residual_enabled and not hidden_state_enabled:
            raise ConfigError("residual_enabled and hidden_state_enabled cannot both be off")
        self.transformer = CausalTransformer(config, rng)
        self.eos_id = eos_id
        self.residual_enabled = residual_enabled
        self.hidden_state_enabled = hidden_state_enabled
        self.passage_position_embeddings = passage_position_embeddings

    @property
    def config(self) -> ModelConfig:
        return self.transformer.config

    def parameters(self) -> dict[str, Tensor]:
        return self.transformer.parameters()

    def set_trainable(self, trainable: bool) -> None:
        self.transformer.set_trainable(trainable)

    def assemble_input(self, instruction_ids, query_ids, embeddings) -> RerankInput:
        """Lay out [instruction; query; e_1..e_n; query anchor; EOS] and add positions.

        Vocabulary tokens pass through the reranker's own embedding table; the
        passage slots hold the encoder outputs verbatim (plus the positional
        embedding unless ``passage_position_embeddings`` is off).
        """
        n = len(embeddings)
        if n < 1:
            raise ShapeError("assemble_input: need at least one passage embedding")
        d = self.config.d_model
        for i, e in enumerate(embeddings):
            if e.shape != (d,):
                raise ShapeError(f"assemble_input: embedding {i} has shape {e.shape}, expected ({d},)")
        prefix_ids = list(instruction_ids) + list(query_ids)
        suffix_ids = list(query_ids) + [self.eos_id]
        total = len(prefix_ids) + n + len(suffix_ids)
        if total > self.config.max_seq_len:
            raise ShapeError(f"assemble_input: sequence of {total} exceeds "
                             f"max_seq_len={self.config.max_seq_len}")
        tok = self.transformer.params["tok_emb"]
        blocks = [ad.take_rows(tok, prefix_ids), ad.stack(embeddings),
                  ad.take_rows(tok, suffix_ids)]
        x = ad.concat_rows(blocks)
        pos = ad.take_rows(self.transformer.params["pos_emb"], np.arange(total))
        if not self.passage_position_embeddings:
            keep = np.ones((total, d))
            keep[len(prefix_ids):len(prefix_ids) + n] = 0.0
            pos = ad.mul(pos, ad.tensor(keep))
        return RerankInput(
            x=ad.add(x, pos),
            passage_positions=list(range(len(prefix_ids), len(prefix_ids) + n)),
            eos_position=total - 1,
            n=n,
        )

    def contextualize(self, rerank_input: RerankInput) -> Tensor:
        """Causal forward pass; returns the final-layer hidden state per position."""
        return self.transformer.forward_embedded(rerank_input.x)

    def score(self, h_eos: Tensor, fused: list[Tensor]) -> tuple[list[float], list[Tensor], list[int]]:
        """Cosine of the EOS aggregation state against each fused representation.

        The permutation is a stable descending argsort: score ties resolve to
        the earlier input position.
        """
        score_tensors = [ad.cosine_sim(h_eos, r) for r in fused]
        scores = [t.item() for t in score_tensors]
        permutation = [int(i) for i in np.argsort(-np.asarray(scores), kind="stable")]
        return scores, score_tensors, permutation

    def forward(self, instruction_ids, query_ids, embeddings) -> RerankOutput:
        rin = self.assemble_input(instruction_ids, query_ids, embeddings)
        hidden = self.contextualize(rin)
        h_eos = ad.pick(hidden, rin.eos_position)
        fused = [fuse_residual(ad.pick(hidden, p), e,
                               residual=self.residual_enabled,
                               hidden_state=self.hidden_state_enabled)
                 for p, e in zip(rin.passage_positions, embeddings)]
        scores, score_tensors, permutation = self.score(h_eos, fused)
        return RerankOutput(fused=fused, h_eos=h_eos, score_tensors=score_tensors,
                            scores=scores, permutation=permutation)


@dataclass
class ModelPair:
    """Encoder/reranker bundle sharing one vocabulary and hidden dimension."""

    encoder: EncoderModel
    reranker: RerankerModel
    vocab: Vocabulary

    def __post_init__(self):
        if self.encoder.config.d_model != self.reranker.config.d_model:
            raise ConfigError("encoder and reranker must share the hidden dimension")

    def instruction_ids(self) -> list[int]:
        return self.vocab.instruction_ids()


def build_model_pair(vocab: Vocabulary, seed: int, *,
                     d_model: int = 64, n_layers: int = 2, n_heads: int = 4,
                     encoder_max_len: int = 64, reranker_max_len: int = 256,
                     ffn_mult: int = 4,
                     normalize_embeddings: bool = False,
                     residual_enabled: bool = True,
                     hidden_state_enabled: bool = True,
                     passage_position_embeddings: bool = True) -> ModelPair:
    """Deterministic paired initialization: same seed, same weights, flags aside."""
    rng = np.random.default_rng(seed)
    enc_cfg = ModelConfig(vocab_size=len(vocab), d_model=d_model, n_layers=n_layers,
                          n_heads=n_heads, max_seq_len=encoder_max_len, ffn_mult=ffn_mult)
    rer_cfg = ModelConfig(vocab_size=len(vocab), d_model=d_model, n_layers=n_layers,
                          n_heads=n_heads, max_seq_len=reranker_max_len, ffn_mult=ffn_mult)
    encoder = EncoderModel(enc_cfg, rng, normalize_output=normalize_embeddings)
    reranker = RerankerModel(rer_cfg, rng, eos_id=vocab.eos_id,
                             residual_enabled=residual_enabled,
                             hidden_state_enabled=hidden_state_enabled,
                             passage_position_embeddings=passage_position_embeddings)
    return ModelPair(encoder=encoder, reranker=reranker, vocab=vocab)


@dataclass
class RerankResult:
    run: RunList
    output: RerankOutput
    embeddings: list[Tensor]


def rerank_detailed(query_ids, documents, models: ModelPair, *,
                    query_id: str = "q0", tag: str = "embrank",
                    counter: TokenCounter | None = None,
                    count_candidates: bool = True) -> RerankResult:
    """Encode, assemble, contextualize, fuse and score one candidate list.

    ``documents`` is a list of (doc_id, token_ids). Exactly two forward passes
    happen per candidate set: the encoder over each passage and the reranker
    over the assembled sequence. The counter records one processed passage
    token per injected embedding and never sees a generated token.
    """
    if not documents:
        raise DegenerateInputError("rerank: documents must be nonempty")
    if counter is None:
        counter = TokenCounter()
    embeddings = models.encoder.batch_encode([tokens for _, tokens in documents])
    output = models.reranker.forward(models.instruction_ids(), query_ids, embeddings)
    counter.count_processed(len(documents))
    if count_candidates:
        counter.candidates += len(documents)
    entries = [RunEntry(doc_id=documents[i][0], score=output.scores[i])
               for i in output.permutation]
    run = RunList(query_id=query_id, entries=entries, tag=tag, counters=counter)
    return RerankResult(run=run, output=output, embeddings=embeddings)


def rerank(query_ids, documents, models: ModelPair, *,
           query_id: str = "q0", tag: str = "embrank",
           counter: TokenCounter | None = None) -> RunList:
    """Single-pass listwise rerank; returns the ordered run with counters attached."""
    return rerank_detailed(query_ids, documents, models, query_id=query_id,
                           tag=tag, counter=counter).run
