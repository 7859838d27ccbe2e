"""First-stage retrieval, rank fusion, and the sliding-window protocol.

BM25 runs over an inverted index of token ids with the ln(1 + .) idf form,
so scores are non-negative. Dense retrieval is an exact full scan of the
encoder's passage embeddings (no approximate structures at this scale).
Reciprocal rank fusion combines two runs with 1/(K + rank), K defaulting
to 60. The sliding-window protocol reranks fixed-size overlapping slices
from the tail of the candidate list toward the head so strong candidates
bubble upward across windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Document
from .errors import ConfigError, DataFormatError, DegenerateInputError, ShapeError
from .reranker import ModelPair, rerank_detailed
from .runs import RunEntry, RunList, TokenCounter, sorted_entries
from .serialization import read_record_file, write_record_file

RRF_K_DEFAULT = 60


class InvertedIndex:
    """Token-id postings with document length statistics for BM25 scoring."""

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        if k1 < 0 or not 0.0 <= b <= 1.0:
            raise ConfigError(f"invalid BM25 parameters k1={k1}, b={b}")
        self.k1 = k1
        self.b = b
        self.doc_ids: list[str] = []
        self.doc_lengths: list[int] = []
        self.postings: dict[int, list[tuple[int, int]]] = {}
        self.avgdl = 0.0

    @classmethod
    def build(cls, documents: list[Document], k1: float = 1.2, b: float = 0.75) -> "InvertedIndex":
        index = cls(k1=k1, b=b)
        ordered = sorted(documents, key=lambda d: d.doc_id)
        index.doc_ids = [d.doc_id for d in ordered]
        index.doc_lengths = [len(d.tokens) for d in ordered]
        if any(n == 0 for n in index.doc_lengths):
            raise DataFormatError("cannot index a document with no tokens")
        for i, doc in enumerate(ordered):
            counts: dict[int, int] = {}
            for token in doc.tokens:
                counts[token] = counts.get(token, 0) + 1
            for token, tf in counts.items():
                index.postings.setdefault(token, []).append((i, tf))
        index.avgdl = sum(index.doc_lengths) / len(index.doc_lengths)
        return index

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def idf(self, token: int) -> float:
        df = len(self.postings.get(token, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def search(self, query_tokens, k: int, query_id: str = "q0") -> RunList:
        """Top-k by BM25; each query-token occurrence contributes its own term.

        Ties break by doc id ascending. An empty query yields an empty run.
        """
        if k < 1:
            raise ConfigError("bm25 search: k must be >= 1")
        if not query_tokens:
            return RunList(query_id=query_id, entries=[], tag="bm25")
        scores: dict[int, float] = {}
        for token in query_tokens:
            plist = self.postings.get(token)
            if not plist:
                continue
            idf = self.idf(token)
            for doc_idx, tf in plist:
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[doc_idx] / self.avgdl)
                scores[doc_idx] = scores.get(doc_idx, 0.0) + idf * tf * (self.k1 + 1.0) / (tf + norm)
        scored = {self.doc_ids[i]: s for i, s in scores.items()}
        return RunList(query_id=query_id, entries=sorted_entries(scored)[:k], tag="bm25")

    def save(self, path, corpus_checksum: str = "") -> None:
        tokens = sorted(self.postings)
        offsets = np.zeros(len(tokens) + 1, dtype=np.int64)
        doc_idx_parts, tf_parts = [], []
        for i, token in enumerate(tokens):
            plist = self.postings[token]
            offsets[i + 1] = offsets[i] + len(plist)
            doc_idx_parts.extend(p[0] for p in plist)
            tf_parts.extend(p[1] for p in plist)
        meta = {"kind": "embrank-bm25-index", "k1": self.k1, "b": self.b,
                "doc_ids": self.doc_ids, "tokens": tokens,
                "corpus_checksum": corpus_checksum}
        arrays = {
            "offsets": offsets,
            "doc_idx": np.asarray(doc_idx_parts, dtype=np.int64),
            "tf": np.asarray(tf_parts, dtype=np.int64),
            "doc_lengths": np.asarray(self.doc_lengths, dtype=np.int64),
        }
        write_record_file(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        meta, arrays = read_record_file(path)
        if meta.get("kind") != "embrank-bm25-index":
            raise DataFormatError(f"{path}: not a BM25 index file")
        index = cls(k1=meta["k1"], b=meta["b"])
        index.doc_ids = list(meta["doc_ids"])
        index.doc_lengths = [int(x) for x in arrays["doc_lengths"]]
        offsets = arrays["offsets"]
        doc_idx = arrays["doc_idx"]
        tf = arrays["tf"]
        for i, token in enumerate(meta["tokens"]):
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            index.postings[int(token)] = [(int(d), int(t))
                                          for d, t in zip(doc_idx[lo:hi], tf[lo:hi])]
        index.avgdl = sum(index.doc_lengths) / len(index.doc_lengths)
        return index


def bm25_search(index: InvertedIndex, query_tokens, k: int, query_id: str = "q0") -> RunList:
    return index.search(query_tokens, k, query_id=query_id)


@dataclass
class DenseIndex:
    """Exact full-scan index of passage embeddings from a specific encoder state."""

    matrix: np.ndarray                       # [n_docs, d]
    doc_ids: list[str]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def build(cls, documents: list[Document], encoder, *,
              corpus_checksum: str = "", encoder_checkpoint_id: str = "") -> "DenseIndex":
        embeddings = [encoder.encode_passage(d.tokens).data.copy() for d in documents]
        matrix = np.stack(embeddings, axis=0) if embeddings else np.zeros((0, 1))
        norms = np.linalg.norm(matrix, axis=1)
        if embeddings and np.any(norms == 0.0):
            raise DegenerateInputError("dense index: a passage embedding has zero norm")
        return cls(matrix=matrix, doc_ids=[d.doc_id for d in documents],
                   metadata={"corpus_checksum": corpus_checksum,
                             "encoder_checkpoint_id": encoder_checkpoint_id})

    def search(self, query_embedding: np.ndarray, k: int, query_id: str = "q0") -> RunList:
        """Cosine similarity against every row; ties break by doc id ascending."""
        if len(self.doc_ids) == 0:
            raise DegenerateInputError("dense index is empty")
        if k < 1:
            raise ConfigError("dense search: k must be >= 1")
        q = np.asarray(query_embedding, dtype=self.matrix.dtype).reshape(-1)
        qnorm = float(np.linalg.norm(q))
        if qnorm == 0.0:
            raise DegenerateInputError("dense search: query embedding has zero norm")
        # per-row dots: the full scan is the definition, kept reproducible bitwise
        scored = {doc_id: float(np.dot(q, row) / (qnorm * np.linalg.norm(row)))
                  for doc_id, row in zip(self.doc_ids, self.matrix)}
        return RunList(query_id=query_id, entries=sorted_entries(scored)[:k], tag="dense")

    def save(self, path) -> None:
        meta = {"kind": "embrank-dense-index", "doc_ids": self.doc_ids,
                "metadata": self.metadata}
        write_record_file(path, meta, {"matrix": self.matrix})

    @classmethod
    def load(cls, path) -> "DenseIndex":
        meta, arrays = read_record_file(path)
        if meta.get("kind") != "embrank-dense-index":
            raise DataFormatError(f"{path}: not a dense index file")
        return cls(matrix=arrays["matrix"], doc_ids=list(meta["doc_ids"]),
                   metadata=meta.get("metadata", {}))


def dense_search(index: DenseIndex, query_embedding, k: int, query_id: str = "q0") -> RunList:
    return index.search(query_embedding, k, query_id=query_id)


def rrf_fuse(run_a: RunList, run_b: RunList, k_const: int = RRF_K_DEFAULT) -> RunList:
    """Reciprocal rank fusion: score(d) = sum over runs of 1/(K + rank), ranks 1-based.

    Documents absent from a run contribute nothing from it; ties break by
    doc id ascending, making the fusion symmetric in its two arguments up
    to that tie rule.
    """
    if k_const < 0:
        raise ConfigError("rrf_fuse: K must be >= 0")
    if run_a.query_id != run_b.query_id:
        raise ConfigError(f"rrf_fuse: mismatched query ids "
                          f"{run_a.query_id!r} vs {run_b.query_id!r}")
    scores: dict[str, float] = {}
    for run in (run_a, run_b):
        for rank, entry in enumerate(run.entries, start=1):
            scores[entry.doc_id] = scores.get(entry.doc_id, 0.0) + 1.0 / (k_const + rank)
    return RunList(query_id=run_a.query_id, entries=sorted_entries(scores), tag="rrf")


def sliding_window_rerank(query_tokens, candidates, models: ModelPair, *,
                          window: int = 20, stride: int = 10,
                          query_id: str = "q0", tag: str = "embrank-sw") -> RunList:
    """Rerank overlapping windows from the tail of the list toward the head.

    Each window's reranked order replaces that slice in place, so documents
    promoted in a later (earlier-positioned) window can keep climbing. When
    the whole list fits one window this is bit-identical to the single-pass
    rerank, cosine scores included; with several windows the emitted scores
    are rank-derived (descending integers) because per-window cosines are
    not comparable across windows.
    """
    if not candidates:
        raise DegenerateInputError("sliding_window_rerank: candidates must be nonempty")
    if not 1 <= stride <= window:
        raise ConfigError(f"sliding_window_rerank: need 1 <= stride <= window, "
                          f"got stride={stride}, window={window}")
    overhead = len(models.instruction_ids()) + 2 * len(query_tokens) + 1
    budget = models.reranker.config.max_seq_len - overhead
    if window > budget:
        raise ShapeError(f"window {window} exceeds the reranker sequence budget {budget}")

    m = len(candidates)
    if m <= window:
        return rerank_detailed(query_tokens, candidates, models,
                               query_id=query_id, tag=tag).run

    counter = TokenCounter()
    work = list(candidates)
    start = m - window
    while True:
        stop = start + window
        piece = work[start:stop]
        result = rerank_detailed(query_tokens, piece, models, query_id=query_id,
                                 tag=tag, counter=counter, count_candidates=False)
        work[start:stop] = [piece[i] for i in result.output.permutation]
        if start == 0:
            break
        start = max(0, start - stride)
    counter.candidates = m
    entries = [RunEntry(doc_id=doc_id, score=float(m - i))
               for i, (doc_id, _) in enumerate(work)]
    return RunList(query_id=query_id, entries=entries, tag=tag, counters=counter)


RETRIEVAL_MODES = ("bm25", "dense", "rrf")


@dataclass
class EndToEndResult:
    first_stage: RunList
    reranked: RunList


def end_to_end(query_text: str, models: ModelPair, doc_tokens: dict[str, list[int]],
               bm25_index: InvertedIndex, dense_index: DenseIndex | None, mode: str,
               k: int = 100, *, query_id: str = "q0",
               rrf_k: int = RRF_K_DEFAULT) -> EndToEndResult:
    """Retrieve top-k by the chosen mode, then single-pass rerank the candidates.

    Mode "rrf" fuses the BM25 and dense top-k lists first and takes the top-k
    of the fusion, so the candidate set is a subset of the union of the two.
    """
    if mode not in RETRIEVAL_MODES:
        raise ConfigError(f"unknown retrieval mode {mode!r}; choose from {RETRIEVAL_MODES}")
    if mode in ("dense", "rrf") and dense_index is None:
        raise ConfigError(f"retrieval mode {mode!r} requires a dense index")
    query_tokens = models.vocab.encode(query_text)

    if mode == "bm25":
        first = bm25_search(bm25_index, query_tokens, k, query_id=query_id)
    elif mode == "dense":
        q_emb = models.encoder.encode_query(query_tokens).data
        first = dense_search(dense_index, q_emb, k, query_id=query_id)
    else:
        bm25_run = bm25_search(bm25_index, query_tokens, k, query_id=query_id)
        q_emb = models.encoder.encode_query(query_tokens).data
        dense_run = dense_search(dense_index, q_emb, k, query_id=query_id)
        fused = rrf_fuse(bm25_run, dense_run, rrf_k)
        first = RunList(query_id=query_id, entries=fused.entries[:k], tag="rrf")

    if not first.entries:
        return EndToEndResult(first_stage=first,
                              reranked=RunList(query_id=query_id, entries=[],
                                               tag=f"embrank-{mode}"))
    candidates = [(e.doc_id, doc_tokens[e.doc_id]) for e in first.entries]
    reranked = rerank_detailed(query_tokens, candidates, models,
                               query_id=query_id, tag=f"embrank-{mode}").run
    return EndToEndResult(first_stage=first, reranked=reranked)
