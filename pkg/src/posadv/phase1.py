"""POS-targeted deletions, the random-deletion study and the labeled adversarial dataset.

Deleted tokens are replaced by the placeholder symbol, so a manipulated review
always has the length of its source. The victim is reached only through a
query interface exposing ``predict(list_of_token_lists) -> 0/1 array``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .errors import DuplicatePosition, PositionOutOfRange
from .seeds import stream
from .text import PLACEHOLDER, STUDY_TAGS, UPOS_TAGS, TaggedReview

TARGET_TAGS = ("VERB", "ADJ", "NOUN")
RATIOS = (1, 5, 10, 15)


class Victim(Protocol):
    def predict(self, docs: Sequence[Sequence[str]]) -> np.ndarray: ...


def pos_set_name(pos_set: Iterable[str]) -> str:
    """Canonical name such as ``VERB_ADJ_NOUN`` (VERB, ADJ, NOUN first, then tag order)."""
    order = TARGET_TAGS + tuple(t for t in UPOS_TAGS if t not in TARGET_TAGS)
    tags = set(pos_set)
    return "_".join(t for t in order if t in tags)


def parse_pos_set(name: str) -> frozenset[str]:
    tags = frozenset(t for t in name.upper().replace(",", "_").split("_") if t)
    unknown = tags - set(UPOS_TAGS)
    if unknown or not tags:
        raise ValueError(f"unknown POS set {name!r}")
    return tags


@dataclass(frozen=True)
class PerturbationSpec:
    pos_set: frozenset = frozenset(TARGET_TAGS)
    ratio_percent: float = 10
    replications: int = 100
    seed: int = 0
    base: str = "candidates"  # or "length": ratio of the whole review, capped at the candidate count

    def __post_init__(self):
        object.__setattr__(self, "pos_set", frozenset(self.pos_set))
        if not self.pos_set or not self.pos_set <= set(UPOS_TAGS):
            raise ValueError(f"pos_set must be a nonempty subset of {UPOS_TAGS}")
        if not 0 < self.ratio_percent <= 100:
            raise ValueError("ratio_percent must lie in (0, 100]")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.base not in ("candidates", "length"):
            raise ValueError("base must be 'candidates' or 'length'")

    @property
    def name(self) -> str:
        return pos_set_name(self.pos_set)


@dataclass(frozen=True)
class DeletedToken:
    pos: int
    word: str
    tag: str


@dataclass(frozen=True)
class AdvDatasetRecord:
    original: TaggedReview
    replication: int
    manipulated: tuple
    deleted: tuple
    orig_label: int
    pred_label: int
    adv_pred: int
    adv_label: int

    def to_json(self) -> dict:
        return {
            "id": self.original.id,
            "replication": self.replication,
            "tokens": list(self.original.tokens),
            "tags": list(self.original.tags),
            "manipulated": list(self.manipulated),
            "deleted": [{"pos": d.pos, "word": d.word, "tag": d.tag} for d in self.deleted],
            "orig_label": self.orig_label,
            "pred_label": self.pred_label,
            "adv_pred": self.adv_pred,
            "adv_label": self.adv_label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AdvDatasetRecord":
        review = TaggedReview(obj["id"], tuple(obj["tokens"]), tuple(obj["tags"]), obj["orig_label"])
        return cls(
            review, obj["replication"], tuple(obj["manipulated"]),
            tuple(DeletedToken(d["pos"], d["word"], d["tag"]) for d in obj["deleted"]),
            obj["orig_label"], obj["pred_label"], obj["adv_pred"], obj["adv_label"],
        )


def candidate_positions(review: TaggedReview, pos_set: Iterable[str]) -> list[int]:
    tags = set(pos_set)
    return [i for i, (tok, tag) in enumerate(zip(review.tokens, review.tags)) if tag in tags and tok != PLACEHOLDER]


def deletion_count(ratio_percent: float, candidate_count: int, review_length: int | None = None) -> int:
    """``ceil(ratio/100 * base)`` capped at the number of candidates.

    The base is the candidate count, or ``review_length`` when given.
    """
    if candidate_count <= 0:
        return 0
    base = candidate_count if review_length is None else review_length
    # round away float noise such as 15/100*20 = 3.0000000000000004 before the ceiling
    n = math.ceil(round(ratio_percent * base / 100, 9))
    return min(n, candidate_count)


def perturb(review: TaggedReview, positions: Iterable[int], placeholder: str = PLACEHOLDER):
    """Replace ``positions`` by ``placeholder``; returns ``(manipulated, deleted)``."""
    positions = list(positions)
    if len(set(positions)) != len(positions):
        raise DuplicatePosition(f"repeated positions in {positions}")
    n = len(review.tokens)
    for p in positions:
        if not 0 <= p < n:
            raise PositionOutOfRange(f"position {p} outside a review of {n} tokens")
    out = list(review.tokens)
    deleted = []
    for p in sorted(positions):
        deleted.append(DeletedToken(p, out[p], review.tags[p]))
        out[p] = placeholder
    return out, deleted


def adv_label(orig_label: int, pred_label: int, adv_pred: int) -> int:
    """1 when the baseline prediction was correct and the deletion changed it."""
    return int(pred_label == orig_label and adv_pred != pred_label)


def sample_positions(review: TaggedReview, spec: PerturbationSpec, rng: np.random.Generator) -> list[int]:
    cands = candidate_positions(review, spec.pos_set)
    length = len(review.tokens) if spec.base == "length" else None
    n = deletion_count(spec.ratio_percent, len(cands), length)
    if n == 0:
        return []
    return sorted(int(i) for i in rng.choice(cands, size=n, replace=False))


def perturbations(reviews: Sequence[TaggedReview], spec: PerturbationSpec, stage: str = "phase1") -> Iterator[tuple]:
    """``(review, replication, manipulated, deleted)`` for every review and replication.

    Each pair draws from its own stream keyed by ``(seed, stage, review id, replication)``.
    """
    for review in reviews:
        for rep in range(spec.replications):
            rng = stream(spec.seed, stage, spec.name, spec.ratio_percent, review.id, rep)
            manipulated, deleted = perturb(review, sample_positions(review, spec, rng))
            yield review, rep, manipulated, deleted


def build_adversarial_dataset(victim: Victim, reviews: Sequence[TaggedReview], spec: PerturbationSpec) -> list[AdvDatasetRecord]:
    if not reviews:
        return []
    base = victim.predict([r.tokens for r in reviews])
    pred_of = {r.id: int(p) for r, p in zip(reviews, base)}
    pending = list(perturbations(reviews, spec))
    adv = victim.predict([m for _, _, m, _ in pending])
    records = [
        AdvDatasetRecord(
            r, rep, tuple(m), tuple(d), r.label, pred_of[r.id], int(a), adv_label(r.label, pred_of[r.id], int(a))
        )
        for (r, rep, m, d), a in zip(pending, adv)
    ]
    records.sort(key=lambda rec: (rec.original.id, rec.replication))
    return records


def write_jsonl(path, records: Iterable[AdvDatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[AdvDatasetRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AdvDatasetRecord.from_json(json.loads(line)) for line in fh if line.strip()]


# -- random-deletion study ---------------------------------------------------

@dataclass
class PosHistogram:
    max_count: int = 10
    counts: dict = field(default_factory=dict)
    attempts: int = 0
    eligible_attempts: int = 0
    successes: int = 0
    skipped_short: int = 0
    excluded_incorrect: int = 0

    def __post_init__(self):
        for tag in STUDY_TAGS:
            self.counts.setdefault(tag, np.zeros(self.max_count + 1, dtype=np.int64))

    def add_success(self, tags: Sequence[str]) -> None:
        self.successes += 1
        for tag in STUDY_TAGS:
            self.counts[tag][min(sum(t == tag for t in tags), self.max_count)] += 1

    def at_least_one_share(self, tag: str) -> float:
        """Fraction of successes whose deletions included at least one ``tag`` token."""
        if self.successes == 0:
            return 0.0
        return float(1 - self.counts[tag][0] / self.successes)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tag"] + [str(c) for c in range(self.max_count + 1)])
            for tag in STUDY_TAGS:
                w.writerow([tag] + [int(x) for x in self.counts[tag]])

    def summary(self) -> dict:
        return {
            "attempts": self.attempts,
            "eligible_attempts": self.eligible_attempts,
            "successes": self.successes,
            "skipped_short": self.skipped_short,
            "excluded_incorrect": self.excluded_incorrect,
            "at_least_one": {t: round(self.at_least_one_share(t), 6) for t in STUDY_TAGS},
        }


def random_attack_study(
    victim: Victim,
    reviews: Sequence[TaggedReview],
    k_words: int = 10,
    replications: int = 100,
    seed: int = 0,
) -> PosHistogram:
    """Delete ``k_words`` uniformly chosen tokens per replication and tally POS among flips.

    Reviews shorter than ``k_words`` are skipped. Replications of reviews the
    victim already misclassifies count as attempts but never as successes.
    """
    hist = PosHistogram(max_count=k_words)
    usable = [r for r in reviews if len(r.tokens) >= k_words]
    hist.skipped_short = len(reviews) - len(usable)
    if not usable:
        return hist
    base = victim.predict([r.tokens for r in usable])
    pending = []
    for r, p in zip(usable, base):
        hist.attempts += replications
        if int(p) != r.label:
            hist.excluded_incorrect += 1
            continue
        hist.eligible_attempts += replications
        for rep in range(replications):
            rng = stream(seed, "random-study", r.id, rep)
            positions = sorted(int(i) for i in rng.choice(len(r.tokens), size=k_words, replace=False))
            manipulated, deleted = perturb(r, positions)
            pending.append((r, manipulated, deleted))
    if pending:
        adv = victim.predict([m for _, m, _ in pending])
        for (r, _, deleted), a in zip(pending, adv):
            if int(a) != r.label:
                hist.add_success([d.tag for d in deleted])
    return hist
