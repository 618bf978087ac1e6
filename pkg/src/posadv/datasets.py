"""Review corpora: loading, label remapping, de-duplication and stratified splits."""

from __future__ import annotations

import csv
import hashlib
import importlib.util
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientData, MalformedRow, MissingFile, UnknownLabel

csv.field_size_limit(sys.maxsize)

DATASETS = ("imdb", "amazon", "yelp", "custom")

# Polarity corpora use 1 = negative, 2 = positive.
_LABEL_MAPS = {
    "imdb": {"0": 0, "1": 1},
    "amazon": {"1": 0, "2": 1},
    "yelp": {"1": 0, "2": 1},
    "custom": {"0": 0, "1": 1},
}


@dataclass(frozen=True)
class Review:
    id: str
    label: int
    text: str


@dataclass
class SplitDataset:
    name: str
    train: list[Review]
    test: list[Review]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        overlap = {r.id for r in self.train} & {r.id for r in self.test}
        if overlap:
            raise ValueError(f"train/test overlap on {len(overlap)} reviews")


def imdb_source_path() -> Path:
    """CSV bundled with the ``movie-reviews`` distribution (25k labeled IMDB reviews)."""
    spec = importlib.util.find_spec("movie_reviews")
    if spec is None or not spec.submodule_search_locations:
        raise MissingFile("the 'movie-reviews' package is not installed; pip install movie-reviews")
    path = Path(list(spec.submodule_search_locations)[0]) / "data" / "combined_movie_reviews.csv"
    if not path.is_file():
        raise MissingFile(f"IMDB source file not found: {path}")
    return path


def is_auxiliary(review_id: str, fraction: int = 5) -> bool:
    """Stable 1-in-``fraction`` partition reserved for tagger and embedding training."""
    digest = hashlib.blake2b(review_id.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % fraction == 0


def read_reviews(path, fmt: str) -> list[Review]:
    """Parse one labeled file into reviews with 0/1 labels, in file order."""
    if fmt not in DATASETS:
        raise ValueError(f"unknown dataset format {fmt!r}; expected one of {DATASETS}")
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    labels = _LABEL_MAPS[fmt]
    delimiter = "\t" if path.suffix in (".tsv", ".tab") else ","
    out: list[Review] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        if fmt == "imdb":
            header = next(reader, None)
            if header != ["text", "label", "source"]:
                raise MalformedRow(1, f"unexpected IMDB header {header}")
            k = 0
            for n, row in enumerate(reader, start=2):
                if len(row) != 3:
                    raise MalformedRow(n, f"expected 3 fields, got {len(row)}")
                if row[2] != "imdb":
                    continue
                out.append(Review(f"imdb-{k:05d}", _label(row[1], labels), row[0]))
                k += 1
            return out
        for n, row in enumerate(reader, start=1):
            if n == 1 and row and row[0].strip().lower() == "label":
                continue
            if fmt == "amazon" and len(row) == 3:
                label, text = row[0], (row[1] + " " + row[2]).strip()
            elif len(row) == 2:
                label, text = row
            else:
                raise MalformedRow(n, f"expected label and text, got {len(row)} fields")
            out.append(Review(f"{fmt}-{path.stem}-{n:07d}", _label(label, labels), text))
    return out


def _label(value: str, mapping: dict[str, int]) -> int:
    try:
        return mapping[value.strip()]
    except KeyError:
        raise UnknownLabel(value) from None


def dedupe(reviews: list[Review]) -> list[Review]:
    seen: set[str] = set()
    out = []
    for r in reviews:
        if r.text not in seen:
            seen.add(r.text)
            out.append(r)
    return out


def stratified_sample(reviews: list[Review], n: int, rng: np.random.Generator) -> list[Review]:
    """``n`` reviews, half per class, in a seeded order."""
    if n % 2:
        raise ValueError("stratified sample size must be even")
    picked = []
    for label in (0, 1):
        pool = [r for r in reviews if r.label == label]
        if len(pool) < n // 2:
            raise InsufficientData(f"only {len(pool)} reviews with label {label}, need {n // 2}")
        idx = rng.choice(len(pool), size=n // 2, replace=False)
        picked.extend(pool[i] for i in sorted(idx))
    order = rng.permutation(len(picked))
    return [picked[i] for i in order]


def ingest_dataset(
    path=None,
    fmt: str = "imdb",
    n_train: int = 2500,
    n_test: int = 1000,
    seed: int = 0,
) -> SplitDataset:
    """Load a corpus and draw balanced, disjoint train and test subsamples.

    ``path`` is a single labeled file (split here) or a directory holding
    ``train.csv`` and ``test.csv``. For IMDB it defaults to the bundled corpus,
    minus the auxiliary partition.
    """
    rng = np.random.default_rng(seed)
    if fmt == "imdb" and path is None:
        path = imdb_source_path()
    if path is None:
        raise MissingFile(f"no path given for dataset {fmt!r}")
    path = Path(path)
    if path.is_dir():
        train_pool = dedupe(read_reviews(path / "train.csv", fmt))
        test_texts = {r.text for r in train_pool}
        test_pool = [r for r in dedupe(read_reviews(path / "test.csv", fmt)) if r.text not in test_texts]
        train = stratified_sample(train_pool, n_train, rng)
        test = stratified_sample(test_pool, n_test, rng)
    else:
        pool = dedupe(read_reviews(path, fmt))
        if fmt == "imdb":
            pool = [r for r in pool if not is_auxiliary(r.id)]
        both = stratified_sample(pool, n_train + n_test, rng)
        test_ids = {r.id for r in stratified_sample(both, n_test, rng)}
        train = [r for r in both if r.id not in test_ids]
        test = [r for r in both if r.id in test_ids]
    provenance = {"source": str(path), "format": fmt, "n_train": n_train, "n_test": n_test, "seed": seed}
    return SplitDataset(fmt, train, test, provenance)


def auxiliary_texts(path=None) -> list[str]:
    """IMDB texts from the reserved partition, never used for train or test."""
    path = path or imdb_source_path()
    return [r.text for r in dedupe(read_reviews(path, "imdb")) if is_auxiliary(r.id)]


def unlabeled_texts(exclude_ids=(), path=None) -> list[str]:
    """Every IMDB text except ``exclude_ids``, for unsupervised use (embedding training)."""
    path = path or imdb_source_path()
    skip = set(exclude_ids)
    return [r.text for r in dedupe(read_reviews(path, "imdb")) if r.id not in skip]
