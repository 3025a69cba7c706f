"""Checkpoint persistence.

A checkpoint is one JSON document: format version, model config, vocabulary,
and every named parameter as a decimal array. Floats serialize through
Python's shortest round-trip repr, so load(save(model)) reproduces forward
passes bit for bit. For m3 models the document also carries a fingerprint of
the GLOVE table the model was built against; loading with different label
vectors is refused.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from .data import RESERVED_TOKENS, GloveTable, ValidationError, Vocabulary
from .models import Model, ModelConfig, build

FORMAT_VERSION = 1


class CheckpointError(ValidationError):
    """Raised when a checkpoint cannot be loaded against the given inputs."""


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def glove_fingerprint(table: GloveTable) -> str:
    lines = []
    for word in sorted(table.vectors):
        vals = " ".join(repr(float(v)) for v in table.vectors[word])
        lines.append(f"{word} {vals}")
    return _sha256("\n".join(lines))


def vocab_fingerprint(tokens: list[str]) -> str:
    return _sha256("\n".join(tokens))


def save_checkpoint(path, model: Model, vocab: Vocabulary) -> None:
    if len(vocab) != model.config.vocab_size:
        raise CheckpointError(
            f"vocabulary size {len(vocab)} != model vocab_size {model.config.vocab_size}"
        )
    doc = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "vocab_tokens": vocab.tokens,
        "vocab_sha256": vocab_fingerprint(vocab.tokens),
        "glove_sha256": glove_fingerprint(model.glove) if model.glove is not None else None,
        "params": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path, glove: GloveTable | None = None) -> tuple[Model, Vocabulary]:
    """Rebuild the model and vocabulary. m3 checkpoints require the same
    GLOVE table they were saved with (checked by fingerprint)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r}")

    config = ModelConfig(**doc["model_config"])
    tokens = [str(t) for t in doc["vocab_tokens"]]
    if tuple(tokens[:4]) != RESERVED_TOKENS:
        raise CheckpointError(f"checkpoint vocabulary lacks the reserved tokens {RESERVED_TOKENS}")
    if vocab_fingerprint(tokens) != doc.get("vocab_sha256"):
        raise CheckpointError("vocabulary hash mismatch: checkpoint is corrupt or was edited")
    vocab = Vocabulary(tokens[4:])
    if len(vocab) != config.vocab_size:
        raise CheckpointError(f"vocabulary size {len(vocab)} != config vocab_size {config.vocab_size}")

    if config.variant == "m3":
        if glove is None:
            raise CheckpointError("this checkpoint needs the GLOVE table it was trained with")
        if glove_fingerprint(glove) != doc.get("glove_sha256"):
            raise CheckpointError(
                "GLOVE table hash mismatch: checkpoint was saved with different label vectors"
            )

    model = build(config, glove=glove if config.variant == "m3" else None)
    saved = doc["params"]
    if set(saved) != set(model.params):
        raise CheckpointError(
            f"parameter names do not match config: saved {sorted(saved)} "
            f"vs expected {sorted(model.params)}"
        )
    for name, p in model.params.items():
        entry = saved[name]
        shape = tuple(entry["shape"])
        if shape != p.shape:
            raise CheckpointError(f"parameter {name}: shape {shape} != expected {p.shape}")
        values = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
        p.data[:] = values
    return model, vocab
