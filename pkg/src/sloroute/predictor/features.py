"""TF-IDF featurization over a bounded token window."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ValidationError


def tokenize(text: str) -> list[str]:
    """Prompts are whitespace-separated token sequences; no tokenizer model."""
    return text.split()


@dataclass(frozen=True)
class TfidfVocab:
    """Fitted vocabulary: token index map plus smoothed idf weights."""

    index: dict[str, int]
    idf: np.ndarray
    window_length: int

    @property
    def size(self) -> int:
        return len(self.index)

    def tokens(self) -> list[str]:
        ordered = [""] * len(self.index)
        for token, i in self.index.items():
            ordered[i] = token
        return ordered


def fit_tfidf(corpus: Sequence[str], cap: int, window_length: int) -> TfidfVocab:
    """Fit idf weights on a corpus, keeping the top-``cap`` tokens.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1.  Vocabulary selection is by
    document frequency, ties broken lexicographically.
    """
    if not corpus:
        raise ValidationError("cannot fit TF-IDF on an empty corpus")
    if cap < 1 or window_length < 1:
        raise ValidationError("cap and window_length must be >= 1")
    df: Counter[str] = Counter()
    for doc in corpus:
        df.update(set(tokenize(doc)))
    ranked = sorted(df.items(), key=lambda item: (-item[1], item[0]))[:cap]
    n_docs = len(corpus)
    index = {token: i for i, (token, _) in enumerate(ranked)}
    idf = np.array(
        [math.log((1 + n_docs) / (1 + count)) + 1.0 for _, count in ranked],
        dtype=np.float64,
    )
    return TfidfVocab(index=index, idf=idf, window_length=window_length)


def featurize(vocab: TfidfVocab, text: str) -> np.ndarray:
    """tf*idf vector over the last ``window_length`` tokens, L2-normalized.

    Out-of-vocabulary tokens contribute nothing; if no token matches, the
    all-zero vector is returned unnormalized.
    """
    vec = np.zeros(vocab.size, dtype=np.float64)
    window = tokenize(text)[-vocab.window_length:]
    for token, count in Counter(window).items():
        i = vocab.index.get(token)
        if i is not None:
            vec[i] = count * vocab.idf[i]
    norm = np.linalg.norm(vec)
    if norm > 0.0:
        vec /= norm
    return vec


def featurize_batch(vocab: TfidfVocab, texts: Sequence[str]) -> np.ndarray:
    """Stack :func:`featurize` outputs into a dense (batch, vocab) matrix."""
    out = np.zeros((len(texts), vocab.size), dtype=np.float64)
    for row, text in enumerate(texts):
        window = tokenize(text)[-vocab.window_length:]
        for token, count in Counter(window).items():
            i = vocab.index.get(token)
            if i is not None:
                out[row, i] = count * vocab.idf[i]
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    np.divide(out, norms, out=out, where=norms > 0.0)
    return out
