"""Count-based word vectors written in the GloVe text format.

Pretrained vectors cannot be fetched offline, so the pipeline derives its own
from a held-aside review corpus: windowed co-occurrence counts, positive PMI
with smoothed context frequencies, then a truncated SVD.
"""

from __future__ import annotations

import gzip
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import svds

from .errors import EmptyCorpus


def cooccurrence(docs: Sequence[Sequence[int]], n_words: int, window: int = 5) -> sparse.csr_matrix:
    """Symmetric co-occurrence counts weighted by ``1 / distance``; ids < 0 are skipped."""
    rows, cols, vals = [], [], []
    for doc in docs:
        ids = np.asarray(doc, dtype=np.int64)
        for d in range(1, window + 1):
            if len(ids) <= d:
                break
            a, b = ids[:-d], ids[d:]
            keep = (a >= 0) & (b >= 0)
            a, b = a[keep], b[keep]
            w = np.full(len(a), 1.0 / d)
            rows += [a, b]
            cols += [b, a]
            vals += [w, w]
    if not rows:
        return sparse.csr_matrix((n_words, n_words))
    m = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_words, n_words)
    )
    return m.tocsr()


def ppmi(counts: sparse.csr_matrix, alpha: float = 0.75) -> sparse.csr_matrix:
    total = counts.sum()
    row = np.asarray(counts.sum(axis=1)).ravel()
    col = np.asarray(counts.sum(axis=0)).ravel() ** alpha
    col_p = col / col.sum()
    row_p = row / total
    c = counts.tocoo()
    pmi = np.log((c.data / total) / (row_p[c.row] * col_p[c.col]))
    keep = pmi > 0
    return sparse.csr_matrix((pmi[keep], (c.row[keep], c.col[keep])), shape=counts.shape)


def train_vectors(
    corpus: Iterable[Sequence[str]],
    dim: int = 100,
    min_count: int = 5,
    window: int = 5,
    seed: int = 0,
) -> tuple[list[str], np.ndarray]:
    """Words (by descending frequency, then lexicographic) and unit-norm vectors."""
    docs = [list(d) for d in corpus]
    freq = Counter(t for d in docs for t in d)
    words = sorted((w for w, c in freq.items() if c >= min_count), key=lambda w: (-freq[w], w))
    if len(words) <= dim:
        raise EmptyCorpus(f"{len(words)} words with count >= {min_count}; need more than dim={dim}")
    index = {w: i for i, w in enumerate(words)}
    ids = [[index.get(t, -1) for t in d] for d in docs]
    m = ppmi(cooccurrence(ids, len(words), window))
    v0 = np.random.default_rng(seed).uniform(-1, 1, size=min(m.shape))
    u, s, _ = svds(m, k=dim, v0=v0)
    order = np.argsort(-s)
    vecs = u[:, order] * np.sqrt(s[order])
    # fix the sign ambiguity of singular vectors
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(dim)])
    vecs *= flip
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    vecs = vecs / np.where(norms > 0, norms, 1.0)
    return words, vecs.astype(np.float32)


def write_glove(path, words: Sequence[str], vectors: np.ndarray) -> None:
    """One ``word f1 ... fD`` line per word; ``.gz`` paths are gzip-compressed with a zero mtime."""
    lines = "".join(w + " " + " ".join(f"{x:.6f}" for x in row) + "\n" for w, row in zip(words, vectors))
    data = lines.encode("utf-8")
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
            fh.write(data)
    else:
        path.write_bytes(data)
