"""Sentence encoders for the extraction adapter.

Two families: a dependency-free hashing encoder (deterministic, offline) and
pretrained sentence-transformer models (loaded lazily, optional dependency).
Encoder names: "hash" or "hash:<dim>", "st:<model-name>".
"""

from __future__ import annotations

import re
import zlib

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9']+")


class EncoderError(RuntimeError):
    pass


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashingEncoder:
    """Feature hashing of word unigrams and bigrams, L2-normalized.

    Stable across runs and platforms (crc32-based hashing, not Python's
    salted hash).
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise EncoderError("hash encoder dimension must be positive")
        self.dim = dim

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            toks = _tokens(text)
            grams = toks + [f"{a}_{b}" for a, b in zip(toks, toks[1:])]
            for g in grams:
                h = zlib.crc32(g.encode("utf-8"))
                idx = h % self.dim
                sign = 1.0 if (h >> 17) & 1 else -1.0
                out[row, idx] += sign
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class SentenceTransformerEncoder:
    """Wrapper over a pretrained sentence-transformers model."""

    def __init__(self, model_name: str, pooling: str = "mean"):
        if pooling not in ("mean", "cls"):
            raise EncoderError(f"unknown pooling {pooling!r}")
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderError(
                "sentence-transformers is not installed; use the 'hash' encoder "
                "or install gcdextract[transformers]"
            ) from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise EncoderError(f"cannot load encoder {model_name!r}: {exc}") from exc
        self.pooling = pooling
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        emb = self._model.encode(texts, convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(emb, dtype=np.float64)


def make_encoder(name: str, pooling: str = "mean"):
    """Build an encoder from its name: 'hash', 'hash:<dim>', or 'st:<model>'."""
    if name == "hash":
        return HashingEncoder()
    if name.startswith("hash:"):
        try:
            return HashingEncoder(dim=int(name.split(":", 1)[1]))
        except ValueError:
            raise EncoderError(f"bad hash encoder spec {name!r}")
    if name.startswith("st:"):
        return SentenceTransformerEncoder(name.split(":", 1)[1], pooling=pooling)
    raise EncoderError(f"unknown encoder {name!r} (expected 'hash[:dim]' or 'st:<model>')")
