"""Text front end: normalization, vocabulary, integer encoding and embeddings."""

from __future__ import annotations

import gzip
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, MalformedLine

PAD = "<pad>"
OOV = "<oov>"
PLACEHOLDER = "<del>"
RESERVED = (PAD, OOV, PLACEHOLDER)
PAD_ID, OOV_ID, PLACEHOLDER_ID = 0, 1, 2

# Ten categories of interest plus a catch-all.
UPOS_TAGS = ("NOUN", "VERB", "ADJ", "PRON", "ADP", "ADV", "DET", "AUX", "CCONJ", "PROPN", "OTHER")
STUDY_TAGS = UPOS_TAGS[:-1]

_MARKUP = re.compile(r"<\s*/?\s*[a-zA-Z][^<>]*>")
_WORD = re.compile(r"[^\W_]+")


def normalize_and_tokenize(raw_text: str) -> list[str]:
    """Lowercase, drop markup and punctuation, split on whitespace.

    >>> normalize_and_tokenize("The film is LITTLE better!")
    ['the', 'film', 'is', 'little', 'better']
    """
    return _WORD.findall(_MARKUP.sub(" ", raw_text.lower()))


def token_spans(raw_text: str) -> list[tuple[str, int, int]]:
    """Tokens of ``raw_text`` with their character offsets into the original string.

    Lowercasing can change string length for a handful of code points, so the
    offsets are only trusted when it does not.
    """
    lowered = raw_text.lower()
    if len(lowered) != len(raw_text):
        return [(t, -1, -1) for t in normalize_and_tokenize(raw_text)]
    cleaned = _MARKUP.sub(lambda m: " " * len(m.group()), lowered)
    return [(m.group(), m.start(), m.end()) for m in _WORD.finditer(cleaned)]


@dataclass(frozen=True)
class TaggedReview:
    id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    label: int

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError(f"{self.id}: {len(self.tokens)} tokens but {len(self.tags)} tags")
        if self.label not in (0, 1):
            raise ValueError(f"{self.id}: label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.words[:3] != RESERVED:
            raise ValueError("vocabulary must start with the reserved symbols")
        object.__setattr__(self, "index", {w: i for i, w in enumerate(self.words)})
        if len(self.index) != len(self.words):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def get(self, word: str) -> int:
        return self.index.get(word, OOV_ID)

    @property
    def size(self) -> int:
        return len(self.words)

    def to_text(self) -> str:
        return "".join(w + "\n" for w in self.words)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(tuple(Path(path).read_text(encoding="utf-8").splitlines()))


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Vocabulary of tokens seen at least ``min_count`` times.

    Words are ordered by descending frequency, ties broken lexicographically,
    after the three reserved symbols.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(doc)
    if n_docs == 0:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary(RESERVED + tuple(kept))


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> np.ndarray:
    """Fixed-length id vector: truncate to ``max_len`` and right-pad with PAD."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    out = np.zeros(max_len, dtype=np.int32)
    ids = [vocab.get(t) for t in tokens[:max_len]]
    out[: len(ids)] = ids
    return out


def encode_batch(docs: Iterable[Sequence[str]], vocab: Vocabulary, max_len: int) -> np.ndarray:
    docs = list(docs)
    out = np.zeros((len(docs), max_len), dtype=np.int32)
    for i, doc in enumerate(docs):
        out[i] = encode(doc, vocab, max_len)
    return out


@dataclass
class EmbeddingTable:
    dim: int
    matrix: np.ndarray  # |vocab| x dim, float32

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.dim:
            raise DimensionMismatch(f"matrix shape {self.matrix.shape} does not match dim {self.dim}")

    def save(self, path, vocab: Vocabulary) -> None:
        """Write in the same word-per-line text format that :func:`load_embeddings` reads."""
        with open(path, "w", encoding="utf-8") as fh:
            for word, row in zip(vocab.words, self.matrix):
                fh.write(word + " " + " ".join(repr(float(x)) for x in row) + "\n")


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def load_embeddings(path, dim: int, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Build an embedding table for ``vocab`` from a ``word f1 ... fD`` text file.

    Words missing from the file get uniform(-0.05, 0.05) vectors drawn from a
    seeded generator; PAD and PLACEHOLDER rows are always zero.
    """
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim)).astype(np.float32)
    file_dim = None
    with _open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            n = len(parts) - 1
            if file_dim is None:
                file_dim = n
                if n != dim:
                    raise DimensionMismatch(f"{path}: file vectors have dim {n}, requested {dim}")
            elif n != file_dim:
                raise MalformedLine(line_no, f"expected {file_dim + 1} fields, got {n + 1}")
            idx = vocab.index.get(parts[0])
            if idx is None or idx < len(RESERVED):
                continue
            try:
                matrix[idx] = np.array(parts[1:], dtype=np.float32)
            except ValueError as exc:
                raise MalformedLine(line_no, str(exc)) from None
    matrix[PAD_ID] = 0.0
    matrix[PLACEHOLDER_ID] = 0.0
    return EmbeddingTable(dim, matrix)


def random_embeddings(vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """Table used when no pretrained file is configured."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim)).astype(np.float32)
    matrix[PAD_ID] = 0.0
    matrix[PLACEHOLDER_ID] = 0.0
    return EmbeddingTable(dim, matrix)
