"""Candidate generation, ranking with the adversarial network, and attack evaluation."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientCandidates
from .phase1 import RATIOS, PerturbationSpec, Victim, perturbations, pos_set_name
from .seeds import stream
from .text import TaggedReview

SWEEP_POS_SETS = (
    ("VERB",), ("ADJ",), ("NOUN",),
    ("VERB", "ADJ"), ("VERB", "NOUN"), ("ADJ", "NOUN"),
    ("VERB", "ADJ", "NOUN"),
)


@dataclass(frozen=True)
class AttackConfig:
    spec: PerturbationSpec = field(default_factory=PerturbationSpec)
    n_source_reviews: int = 100
    top_k: int = 100
    best_per_source: bool = False

    def __post_init__(self):
        if self.top_k > self.n_source_reviews * self.spec.replications:
            raise ValueError("top_k exceeds the number of candidates the config can produce")

    @property
    def replications(self) -> int:
        return self.spec.replications


@dataclass(frozen=True)
class Candidate:
    original: TaggedReview
    replication: int
    manipulated: tuple
    deleted: tuple


@dataclass(frozen=True)
class Selected:
    candidate: Candidate
    score: float


@dataclass(frozen=True)
class AttackRow:
    id: str
    replication: int
    score: float
    label: int
    orig_pred: int
    adv_pred: int
    flipped: bool
    n_deleted: int


@dataclass
class AttackReport:
    dataset: str
    pos_set: str
    ratio: float
    baseline_acc: float
    attack_acc: float
    rows: list[AttackRow]
    selection: str = "top-k"
    ranker: str = "adv-net"

    @property
    def n(self) -> int:
        return len(self.rows)

    def recomputed(self) -> tuple[float, float]:
        """Accuracies recomputed from the per-example rows."""
        if not self.rows:
            return 0.0, 0.0
        base = sum(r.orig_pred == r.label for r in self.rows) / len(self.rows)
        after = sum(r.adv_pred == r.label for r in self.rows) / len(self.rows)
        return base, after

    def to_json(self) -> dict:
        out = asdict(self)
        out["n"] = self.n
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AttackReport":
        obj = dict(obj)
        obj.pop("n", None)
        obj["rows"] = [AttackRow(**r) for r in obj["rows"]]
        return cls(**obj)


def generate_candidates(reviews: Sequence[TaggedReview], spec: PerturbationSpec) -> list[Candidate]:
    """``len(reviews) * spec.replications`` manipulated copies, via the Phase 1 deletion code."""
    return [Candidate(r, rep, tuple(m), tuple(d)) for r, rep, m, d in perturbations(reviews, spec, stage="phase3")]


def rank_and_select(candidates: Sequence[Candidate], scores: Sequence[float], top_k: int, best_per_source: bool = False) -> list[Selected]:
    """Top ``top_k`` by score, ties broken by (review id, replication).

    With ``best_per_source`` only the best-scoring variant of each source review is eligible.
    """
    if len(scores) != len(candidates):
        raise ValueError(f"{len(candidates)} candidates but {len(scores)} scores")
    order = sorted(range(len(candidates)), key=lambda i: (-float(scores[i]), candidates[i].original.id, candidates[i].replication))
    if best_per_source:
        seen = set()
        order = [i for i in order if not (candidates[i].original.id in seen or seen.add(candidates[i].original.id))]
    if len(order) < top_k:
        raise InsufficientCandidates(f"{len(order)} eligible candidates for top_k={top_k}")
    return [Selected(candidates[i], float(scores[i])) for i in order[:top_k]]


def random_select(candidates: Sequence[Candidate], top_k: int, rng: np.random.Generator) -> list[Selected]:
    if len(candidates) < top_k:
        raise InsufficientCandidates(f"{len(candidates)} candidates for top_k={top_k}")
    idx = sorted(rng.choice(len(candidates), size=top_k, replace=False))
    return [Selected(candidates[i], float("nan")) for i in idx]


def attack_evaluate(victim: Victim, selected: Sequence[Selected], dataset: str = "", spec: PerturbationSpec | None = None, selection: str = "top-k") -> AttackReport:
    """Victim accuracy on the selected originals and on their manipulated versions."""
    rows = []
    if selected:
        orig = victim.predict([s.candidate.original.tokens for s in selected])
        adv = victim.predict([s.candidate.manipulated for s in selected])
        for s, o, a in zip(selected, orig, adv):
            c = s.candidate
            rows.append(AttackRow(c.original.id, c.replication, s.score, c.original.label, int(o), int(a), bool(o != a), len(c.deleted)))
    report = AttackReport(
        dataset, pos_set_name(spec.pos_set) if spec else "", spec.ratio_percent if spec else 0.0, 0.0, 0.0, rows, selection
    )
    report.baseline_acc, report.attack_acc = report.recomputed()
    return report


Scorer = Callable[[Sequence[Candidate]], np.ndarray]


def run_attack(victim: Victim, scorer: Scorer, reviews: Sequence[TaggedReview], config: AttackConfig, dataset: str = "") -> AttackReport:
    """Generate candidates for the first ``n_source_reviews`` reviews, rank and attack."""
    candidates = generate_candidates(list(reviews)[: config.n_source_reviews], config.spec)
    selected = rank_and_select(candidates, scorer(candidates), config.top_k, config.best_per_source)
    return attack_evaluate(victim, selected, dataset, config.spec)


def sample_sources(pool: Sequence[TaggedReview], n: int, seed: int, tag: str = "") -> list[TaggedReview]:
    rng = stream(seed, "phase3-sources", tag)
    idx = sorted(rng.choice(len(pool), size=min(n, len(pool)), replace=False))
    return [pool[i] for i in idx]


@dataclass
class RankerComparison:
    seeds: list[int]
    top_k_acc: list[float]
    random_k_acc: list[float]
    baseline_acc: list[float]

    @property
    def wins(self) -> int:
        """Seeds where the ranked selection leaves the victim no more accurate than random selection."""
        return sum(t <= r for t, r in zip(self.top_k_acc, self.random_k_acc))


def compare_with_random(
    victim: Victim, scorer: Scorer, pool: Sequence[TaggedReview], config: AttackConfig, seeds: Sequence[int]
) -> RankerComparison:
    """For each seed: resample sources and deletions, then attack with top-k and with random-k."""
    out = RankerComparison(list(seeds), [], [], [])
    for s in seeds:
        spec = PerturbationSpec(config.spec.pos_set, config.spec.ratio_percent, config.spec.replications, s, config.spec.base)
        sources = sample_sources(pool, config.n_source_reviews, s)
        candidates = generate_candidates(sources, spec)
        top = attack_evaluate(victim, rank_and_select(candidates, scorer(candidates), config.top_k, config.best_per_source), spec=spec)
        rnd = attack_evaluate(victim, random_select(candidates, config.top_k, stream(s, "random-k")), spec=spec, selection="random-k")
        out.top_k_acc.append(top.attack_acc)
        out.random_k_acc.append(rnd.attack_acc)
        out.baseline_acc.append(top.baseline_acc)
    return out


@dataclass
class SweepReport:
    dataset: str
    cells: list[AttackReport]

    def grid(self) -> dict[tuple[str, float], float]:
        return {(c.pos_set, c.ratio): c.attack_acc for c in self.cells}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "pos_set", "ratio", "baseline_acc", "attack_acc", "n"])
            for c in self.cells:
                w.writerow([self.dataset, c.pos_set, _ratio(c.ratio), f"{c.baseline_acc:.4f}", f"{c.attack_acc:.4f}", c.n])

    def write_plot_csv(self, path) -> None:
        """Long format: configuration, perturbation, accuracy (one line per cell)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["configuration", "perturbation", "accuracy"])
            for c in self.cells:
                w.writerow([c.pos_set, f"{_ratio(c.ratio)}%", f"{c.attack_acc:.4f}"])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"dataset": self.dataset, "cells": [c.to_json() for c in self.cells]}, fh, sort_keys=True, indent=1)

    @classmethod
    def read_json(cls, path) -> "SweepReport":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(obj["dataset"], [AttackReport.from_json(c) for c in obj["cells"]])


def _ratio(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else str(r)


def sweep_configs(base: AttackConfig, pos_sets=SWEEP_POS_SETS, ratios=RATIOS) -> list[AttackConfig]:
    return [
        AttackConfig(
            PerturbationSpec(frozenset(ps), r, base.spec.replications, base.spec.seed, base.spec.base),
            base.n_source_reviews, base.top_k, base.best_per_source,
        )
        for ps in pos_sets
        for r in ratios
    ]


def pos_sweep(
    victim: Victim,
    net_builder: Callable[[PerturbationSpec], Scorer],
    sources: Sequence[TaggedReview],
    configs: Sequence[AttackConfig],
    dataset: str = "",
) -> SweepReport:
    """One attack per config; ``net_builder`` trains a fresh ranker for each cell's spec."""
    cells = []
    for cfg in configs:
        scorer = net_builder(cfg.spec)
        report = run_attack(victim, scorer, sources, cfg, dataset)
        report.ranker = getattr(scorer, "name", report.ranker)
        cells.append(report)
    return SweepReport(dataset, cells)
