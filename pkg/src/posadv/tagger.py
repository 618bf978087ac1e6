"""Averaged-perceptron part-of-speech tagger over normalized review tokens.

The model is a greedy left-to-right averaged perceptron with a tag dictionary
for frequent unambiguous words. It is trained on lowercased, punctuation-free
token streams, i.e. exactly what :func:`posadv.text.normalize_and_tokenize`
produces, so whole reviews are tagged as one sequence.

Data file format (UTF-8 text, optionally gzip-compressed)::

    #posadv-upos-perceptron 1
    C<TAB>NOUN VERB ADJ ...          # class list, one line
    T<TAB>word<TAB>TAG               # tag-dictionary entry
    F<TAB>feature<TAB>TAG=w TAG=w    # feature -> per-class weights

Blank lines and lines starting with ``#`` after the header are ignored.
"""

from __future__ import annotations

import functools
import gzip
import random
from collections import Counter, defaultdict
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import TaggerModelMissing
from .text import UPOS_TAGS, TaggedReview, normalize_and_tokenize

HEADER = "#posadv-upos-perceptron 1"
DEFAULT_MODEL = "upos_tagger.txt.gz"

_START = ("-START-", "-START2-")
_END = ("-END-", "-END2-")


def _normalize(word: str) -> str:
    if word.isdigit():
        return "!YEAR" if len(word) == 4 else "!DIGITS"
    if any(ch.isdigit() for ch in word):
        return "!HASDIGIT"
    return word


def _features(i: int, word: str, context: Sequence[str], prev: str, prev2: str) -> list[str]:
    # context is padded by two on each side, so the current token sits at i + 2
    i += 2
    return [
        "bias",
        "i suffix " + word[-3:],
        "i suffix2 " + word[-2:],
        "i pref1 " + word[:1],
        "i-1 tag " + prev,
        "i-2 tag " + prev2,
        "i tag+i-2 tag " + prev + " " + prev2,
        "i word " + context[i],
        "i-1 tag+i word " + prev + " " + context[i],
        "i-1 word " + context[i - 1],
        "i-1 suffix " + context[i - 1][-3:],
        "i-2 word " + context[i - 2],
        "i+1 word " + context[i + 1],
        "i+1 suffix " + context[i + 1][-3:],
        "i+2 word " + context[i + 2],
    ]


class PerceptronTagger:
    def __init__(self, weights=None, tagdict=None, classes: Sequence[str] = UPOS_TAGS):
        self.weights: dict[str, dict[str, float]] = weights or {}
        self.tagdict: dict[str, str] = tagdict or {}
        self.classes = tuple(classes)
        # unknown words lean NOUN when scores tie
        self._rank = {c: (c == "NOUN", -k) for k, c in enumerate(self.classes)}

    def predict(self, features: Iterable[str]) -> str:
        scores: dict[str, float] = defaultdict(float)
        for feat in features:
            w = self.weights.get(feat)
            if not w:
                continue
            for cls, weight in w.items():
                scores[cls] += weight
        return max(self.classes, key=lambda c: (scores[c], self._rank[c]))

    def tag(self, tokens: Sequence[str]) -> list[str]:
        context = _START + tuple(_normalize(w) for w in tokens) + _END
        prev, prev2 = _START
        out = []
        for i, word in enumerate(tokens):
            tag = self.tagdict.get(word)
            if tag is None:
                tag = self.predict(_features(i, word, context, prev, prev2))
            out.append(tag)
            prev2, prev = prev, tag
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        lines = [HEADER, "C\t" + " ".join(self.classes)]
        lines += [f"T\t{w}\t{t}" for w, t in sorted(self.tagdict.items())]
        for feat in sorted(self.weights):
            ws = self.weights[feat]
            cells = " ".join(f"{c}={ws[c]:.6g}" for c in self.classes if ws.get(c))
            if cells:
                lines.append(f"F\t{feat}\t{cells}")
        # mtime pinned so the gzip bytes are reproducible
        if opener is gzip.open:
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
                fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        else:
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PerceptronTagger":
        path = Path(path)
        if not path.is_file():
            raise TaggerModelMissing(f"tagger data file not found: {path}")
        opener = gzip.open if path.suffix == ".gz" else open
        weights: dict[str, dict[str, float]] = {}
        tagdict: dict[str, str] = {}
        classes: tuple[str, ...] = UPOS_TAGS
        with opener(path, "rt", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != HEADER:
                raise TaggerModelMissing(f"{path}: unsupported tagger format header {header!r}")
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                kind, _, rest = line.partition("\t")
                if kind == "C":
                    classes = tuple(rest.split())
                elif kind == "T":
                    word, tag = rest.split("\t")
                    tagdict[word] = tag
                elif kind == "F":
                    feat, cells = rest.rsplit("\t", 1)
                    weights[feat] = {c: float(v) for c, v in (cell.split("=") for cell in cells.split())}
        return cls(weights, tagdict, classes)

    # -- training ----------------------------------------------------------

    @classmethod
    def train(
        cls,
        sequences: Sequence[tuple[Sequence[str], Sequence[str]]],
        n_iter: int = 5,
        seed: int = 0,
        dict_min_freq: int = 20,
        dict_ambiguity: float = 0.97,
    ) -> "PerceptronTagger":
        """Fit on (tokens, tags) sequences with weight averaging."""
        tagger = cls()
        tagger.tagdict = _make_tagdict(sequences, dict_min_freq, dict_ambiguity)
        totals: dict[tuple[str, str], float] = defaultdict(float)
        stamps: dict[tuple[str, str], int] = defaultdict(int)
        step = 0
        weights = tagger.weights
        order = list(range(len(sequences)))
        rng = random.Random(seed)

        def update(truth: str, guess: str, feats: list[str]) -> None:
            for feat in feats:
                w = weights.setdefault(feat, {})
                for cls_, delta in ((truth, 1.0), (guess, -1.0)):
                    key = (feat, cls_)
                    cur = w.get(cls_, 0.0)
                    totals[key] += (step - stamps[key]) * cur
                    stamps[key] = step
                    w[cls_] = cur + delta

        for _ in range(n_iter):
            for k in order:
                words, tags = sequences[k]
                context = _START + tuple(_normalize(w) for w in words) + _END
                prev, prev2 = _START
                for i, word in enumerate(words):
                    guess = tagger.tagdict.get(word)
                    if guess is None:
                        feats = _features(i, word, context, prev, prev2)
                        guess = tagger.predict(feats)
                        if guess != tags[i]:
                            update(tags[i], guess, feats)
                    prev2, prev = prev, guess
                    step += 1
            rng.shuffle(order)

        for feat, w in weights.items():
            avg = {}
            for cls_, cur in w.items():
                key = (feat, cls_)
                total = totals[key] + (step - stamps[key]) * cur
                value = round(total / step, 3)
                if value:
                    avg[cls_] = value
            weights[feat] = avg
        tagger.weights = {f: w for f, w in weights.items() if w}
        return tagger


def _make_tagdict(sequences, min_freq: int, ambiguity: float) -> dict[str, str]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for words, tags in sequences:
        for w, t in zip(words, tags):
            counts[w][t] += 1
    out = {}
    for word, c in counts.items():
        tag, mode = c.most_common(1)[0]
        n = sum(c.values())
        if n >= min_freq and mode / n >= ambiguity:
            out[word] = tag
    return out


@functools.lru_cache(maxsize=None)
def default_tagger() -> PerceptronTagger:
    with resources.as_file(resources.files("posadv") / "data" / DEFAULT_MODEL) as path:
        return PerceptronTagger.load(path)


def default_tagger_path() -> Path:
    return Path(str(resources.files("posadv") / "data" / DEFAULT_MODEL))


def tag_pos(tokens: Sequence[str], tagger: PerceptronTagger | None = None) -> list[str]:
    """One UPOS tag per token, from the bundled model unless ``tagger`` is given."""
    if not tokens:
        return []
    tagger = tagger or default_tagger()
    return tagger.tag(list(tokens))


def tag_review(review_id: str, raw_text: str, label: int, tagger: PerceptronTagger | None = None) -> TaggedReview:
    tokens = normalize_and_tokenize(raw_text)
    return TaggedReview(review_id, tuple(tokens), tuple(tag_pos(tokens, tagger)), label)
