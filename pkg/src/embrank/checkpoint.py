"""Model checkpointing: flat named-parameter records, self-contained.

A checkpoint stores both models' parameters plus the vocabulary and the
model/flag configuration needed to rebuild the pair without the original
corpus. The parameter checksum identifies a weight state independently of
where it is stored.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .data import Vocabulary
from .encoder import EncoderModel
from .errors import DataFormatError
from .reranker import ModelPair, RerankerModel
from .serialization import read_record_file, sha256_arrays, write_record_file
from .transformer import ModelConfig

CHECKPOINT_KIND = "embrank-model-pair"


def parameter_checksum(models: ModelPair) -> str:
    arrays = {f"encoder.{k}": t.data for k, t in models.encoder.parameters().items()}
    arrays.update({f"reranker.{k}": t.data for k, t in models.reranker.parameters().items()})
    return sha256_arrays(arrays)


def save_checkpoint(path, models: ModelPair, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": CHECKPOINT_KIND,
        "encoder_config": asdict(models.encoder.config),
        "reranker_config": asdict(models.reranker.config),
        "normalize_embeddings": models.encoder.normalize_output,
        "residual_enabled": models.reranker.residual_enabled,
        "hidden_state_enabled": models.reranker.hidden_state_enabled,
        "passage_position_embeddings": models.reranker.passage_position_embeddings,
        "eos_id": models.reranker.eos_id,
        "vocab": models.vocab.id_to_token,
        "extra": extra_meta or {},
    }
    arrays = {f"encoder.{k}": t.data for k, t in models.encoder.parameters().items()}
    arrays.update({f"reranker.{k}": t.data for k, t in models.reranker.parameters().items()})
    write_record_file(path, meta, arrays)


def load_checkpoint(path) -> ModelPair:
    meta, arrays = read_record_file(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise DataFormatError(f"{path}: not a model checkpoint")
    vocab = Vocabulary(meta["vocab"])
    enc_cfg = ModelConfig(**meta["encoder_config"])
    rer_cfg = ModelConfig(**meta["reranker_config"])
    rng = np.random.default_rng(0)  # placeholder weights, overwritten below
    encoder = EncoderModel(enc_cfg, rng, normalize_output=meta["normalize_embeddings"])
    reranker = RerankerModel(rer_cfg, rng, eos_id=meta["eos_id"],
                             residual_enabled=meta["residual_enabled"],
                             hidden_state_enabled=meta["hidden_state_enabled"],
                             passage_position_embeddings=meta["passage_position_embeddings"])
    for prefix, model in (("encoder", encoder), ("reranker", reranker)):
        for name, tensor in model.parameters().items():
            key = f"{prefix}.{name}"
            if key not in arrays:
                raise DataFormatError(f"{path}: checkpoint missing parameter {key}")
            if arrays[key].shape != tensor.data.shape:
                raise DataFormatError(f"{path}: shape mismatch for {key}: "
                                      f"{arrays[key].shape} vs {tensor.data.shape}")
            tensor.data = arrays[key].astype(tensor.data.dtype)
    return ModelPair(encoder=encoder, reranker=reranker, vocab=vocab)
