"""Rebuild the bundled UPOS tagger model (src/posadv/data/upos_tagger.txt.gz).

Silver tags come from a Brill-style rule tagger (lexicon + morphology +
context rules, via textblob's port of pattern) run on the original-cased,
punctuated text of the auxiliary IMDB partition. Penn tags are mapped to the
UPOS subset, projected onto the normalized token stream by character offsets,
and an averaged perceptron is trained on the projected sequences.

Build-time requirements: textblob, movie-reviews.

    python scripts/build_tagger.py [--reviews 5000] [--iters 5]
"""

from __future__ import annotations

import argparse
import re
import time
from pathlib import Path

from posadv.datasets import auxiliary_texts
from posadv.tagger import PerceptronTagger, default_tagger_path
from posadv.text import token_spans

HERE = Path(__file__).resolve().parent / "brill"

_SILVER_TOKEN = re.compile(r"[^\W_]+(?=n't\b)|n't\b|'(?:s|re|ve|ll|d|m)\b|[^\W_]+|[^\w\s]", re.IGNORECASE)
_MARKUP = re.compile(r"<\s*/?\s*[a-zA-Z][^<>]*>")
_SENT_END = {".", "!", "?"}

BE = {"be", "am", "is", "are", "was", "were", "been", "being", "'m", "'re", "'s", "ai"}
HAVE = {"have", "has", "had", "having", "'ve", "'d"}
DO = {"do", "does", "did"}
SUBORDINATORS = {"that", "if", "because", "although", "though", "whether", "unless", "whereas", "while"}

PENN_TO_UPOS = {
    "CC": "CCONJ", "DT": "DET", "PDT": "DET", "EX": "PRON", "PRP": "PRON", "PRP$": "PRON",
    "WP": "PRON", "WP$": "PRON", "WDT": "PRON", "IN": "ADP", "RP": "ADP",
    "JJ": "ADJ", "JJR": "ADJ", "JJS": "ADJ", "RB": "ADV", "RBR": "ADV", "RBS": "ADV", "WRB": "ADV",
    "NN": "NOUN", "NNS": "NOUN", "NNP": "PROPN", "NNPS": "PROPN", "MD": "AUX",
    "VB": "VERB", "VBD": "VERB", "VBG": "VERB", "VBN": "VERB", "VBP": "VERB", "VBZ": "VERB",
}


def load_third_person_verbs() -> set[str]:
    out = set()
    for line in (HERE / "en-verbs.txt").read_text(encoding="latin-1").splitlines():
        if line.startswith(";;;"):
            continue
        cells = line.split(",")
        if len(cells) > 3 and cells[3]:
            out.add(cells[3].lower())
    return out


def make_brill():
    from textblob import en
    from textblob._text import Lexicon, find_tags

    lexicon = Lexicon(
        path=str(Path(en.__file__).parent / "en-lexicon.txt"),
        morphology=str(HERE / "en-morphology.txt"),
        context=str(HERE / "en-context.txt"),
        entities=str(HERE / "en-entities.txt"),
        language="en",
    )

    def tag(tokens):
        return [t for _, t in find_tags(
            tokens, lexicon=lexicon, morphology=lexicon.morphology, context=lexicon.context,
            entities=lexicon.entities, language="en")]

    return tag


def to_upos(words: list[str], penn: list[str], verbs3: set[str]) -> list[str]:
    out = []
    n = len(words)
    for i, (w, t) in enumerate(zip(words, penn)):
        lw = w.lower()
        t = t.split("-")[0]  # entity suffixes such as NNP-PERS
        prev = penn[i - 1] if i else ""
        if t == "NNS" and lw in verbs3 and prev in ("NN", "NNP", "PRP") and (i + 1 == n or penn[i + 1] in ("DT", "IN", "RB", "TO", "PRP", "PRP$", ".", ",", "RP")):
            t = "VBZ"
        nxt = [penn[j] for j in range(i + 1, min(n, i + 4)) if penn[j] not in ("RB", "PRP")]
        nxt1 = nxt[0] if nxt else ""
        if t.startswith("VB") or t == "MD":
            if t == "MD" or lw in BE:
                out.append("AUX")
            elif lw in HAVE and nxt1 in ("VBN", "VBD"):
                out.append("AUX")
            elif lw in DO and nxt1 in ("VB", "VBP"):
                out.append("AUX")
            else:
                out.append("VERB")
        elif t == "TO":
            out.append("OTHER" if penn[i + 1:i + 2] == ["VB"] else "ADP")
        elif t == "IN" and lw in SUBORDINATORS:
            out.append("OTHER")
        elif t.startswith("RB") and lw in ("not", "n't"):
            out.append("OTHER")
        else:
            out.append(PENN_TO_UPOS.get(t, "OTHER"))
    return out


def silver_sequence(text: str, brill, verbs3) -> tuple[list[str], list[str], list[int]]:
    """Normalized tokens of ``text`` with projected silver tags and sentence ids."""
    clean = _MARKUP.sub(lambda m: " " * len(m.group()), text)
    spans = [(m.group(), m.start(), m.end()) for m in _SILVER_TOKEN.finditer(clean)]
    owner = [-1] * len(text)
    tags: list[str] = []
    sent_of: list[int] = []
    sent: list[tuple[str, int, int]] = []
    n_sent = [0]

    def flush():
        if not sent:
            return
        words = [s[0] for s in sent]
        upos = to_upos(words, brill(words), verbs3)
        for (_, a, b), tag in zip(sent, upos):
            for c in range(a, b):
                owner[c] = len(tags)
            tags.append(tag)
            sent_of.append(n_sent[0])
        n_sent[0] += 1
        sent.clear()

    for span in spans:
        sent.append(span)
        if span[0] in _SENT_END:
            flush()
    flush()

    tokens, projected, sentence = [], [], []
    for tok, a, _ in token_spans(text):
        if a < 0:
            return [], [], []
        tokens.append(tok)
        k = owner[a]
        projected.append(tags[k] if k >= 0 else "OTHER")
        sentence.append(sent_of[k] if k >= 0 else (sentence[-1] if sentence else 0))
    return tokens, projected, sentence


def with_sentences(reviews):
    """Whole-review sequences followed by every sentence as its own sequence.

    Runtime input is an unsegmented review, but short phrases must also tag
    sensibly, so both boundary regimes are represented.
    """
    out = [(w, t) for w, t, _ in reviews]
    for words, tags, sent in reviews:
        start = 0
        for i in range(1, len(words) + 1):
            if i == len(words) or sent[i] != sent[start]:
                out.append((words[start:i], tags[start:i]))
                start = i
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reviews", type=int, default=5000)
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=default_tagger_path())
    args = ap.parse_args()

    brill = make_brill()
    verbs3 = load_third_person_verbs()
    texts = auxiliary_texts()[: args.reviews]
    t0 = time.time()
    reviews = [s for s in (silver_sequence(t, brill, verbs3) for t in texts) if s[0]]
    n_tok = sum(len(s[0]) for s in reviews)
    print(f"silver: {len(reviews)} reviews, {n_tok} tokens in {time.time() - t0:.0f}s")

    cut = len(reviews) // 10
    held = [(w, t) for w, t, _ in reviews[:cut]]
    train = with_sentences(reviews[cut:])
    sequences = with_sentences(reviews)
    t0 = time.time()
    tagger = PerceptronTagger.train(train, n_iter=args.iters, seed=args.seed)
    print(f"trained in {time.time() - t0:.0f}s; {len(tagger.weights)} features, {len(tagger.tagdict)} dict words")
    correct = total = 0
    for words, tags in held:
        pred = tagger.tag(words)
        correct += sum(p == t for p, t in zip(pred, tags))
        total += len(tags)
    print(f"held-out agreement with silver tags: {correct / total:.4f} over {total} tokens")

    final = PerceptronTagger.train(sequences, n_iter=args.iters, seed=args.seed)
    final.save(args.out)
    print(f"wrote {args.out} ({args.out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
