"""Seeded end-to-end runs: data, victim, random study, the three attack phases, sweep and report.

Every stage reads its inputs from the run directory (or from declared input
files) and writes its outputs there, so stages can also be run one at a time.
After each stage ``manifest.json`` is rewritten with the SHA-256 of every
artifact and declared input. The manifest holds no paths under the run
directory and no timestamps, so identical configs give identical manifests.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, fields
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import cnn, phase1, phase2, phase3
from .datasets import DATASETS, imdb_source_path, ingest_dataset, unlabeled_texts
from .embeddings import train_vectors, write_glove
from .errors import InsufficientData, MissingArtifact, MissingFile, PosAdvError, SingleClassDataset, StageFailed
from .report import emit_report
from .seeds import derive_seed, stream
from .tagger import PerceptronTagger, default_tagger_path
from .text import TaggedReview, Vocabulary, build_vocab, load_embeddings, normalize_and_tokenize
from .training import write_history_csv

log = logging.getLogger(__name__)

STAGES = ("prepare", "train", "random-study", "phase1", "phase2", "phase3", "sweep", "report")
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class RunConfig:
    # data
    dataset: str = "imdb"
    data_path: str = ""
    embeddings: str = ""
    seed: int = 0
    n_train: int = 2500
    n_test: int = 1000
    val_split: float = 0.2
    min_count: int = 2
    embedding_min_count: int = 5
    # victim
    max_len: int = 400
    embedding_dim: int = 100
    filters: int = 100
    kernel_size: int = 5
    dropout_rate: float = 0.5
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    threshold: float = 0.5
    trainable_embeddings: bool = True
    # random study
    study_reviews: int = 100
    study_replications: int = 100
    k_words: int = 10
    # phase 1
    pos: str = "VERB_ADJ_NOUN"
    ratio: float = 10.0
    base: str = "candidates"
    phase1_reviews: int = 100
    phase1_replications: int = 50
    # phase 2
    adv_filters: int = 32
    adv_kernel_size: int = 3
    adv_fusion_width: int = 64
    adv_dropout_rate: float = 0.5
    adv_lr: float = 1e-3
    adv_batch_size: int = 32
    adv_max_epochs: int = 10
    adv_patience: int = 3
    adv_val_split: float = 0.2
    # phase 3
    n_source_reviews: int = 100
    phase3_replications: int = 100
    top_k: int = 100
    best_per_source: bool = False
    compare_seeds: str = "1,2,3,4,5"
    # sweep
    sweep_phase1_reviews: int = 40
    sweep_phase1_replications: int = 25
    sweep_source_reviews: int = 20
    sweep_replications: int = 20
    sweep_top_k: int = 20
    stages: str = ",".join(STAGES)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        phase1.PerturbationSpec(phase1.parse_pos_set(self.pos), self.ratio, base=self.base)

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})

    def stage_list(self) -> list[str]:
        out = [s.strip() for s in self.stages.split(",") if s.strip()]
        bad = [s for s in out if s not in STAGES]
        if bad:
            raise ValueError(f"unknown stages {bad}; expected a subset of {STAGES}")
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(kind: str, raw: str):
    if kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def load_config(path) -> RunConfig:
    """Flat ``key = value`` file, ``#`` comments; keys are the RunConfig field names."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[run]\n" + path.read_text(encoding="utf-8"), source=str(path))
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for key, raw in parser["run"].items():
        if key not in known:
            raise ValueError(f"{path}: unknown config key {key!r}")
        values[key] = _coerce(known[key], raw)
    return RunConfig(**values)


# -- helpers -----------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _load(path: Path):
    if not path.is_file():
        raise MissingArtifact(str(path))
    return json.loads(path.read_text(encoding="utf-8"))


def _write_reviews(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")


def _read_reviews(path: Path) -> list[dict]:
    if not path.is_file():
        raise MissingArtifact(str(path))
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def stage_seeds(cfg: RunConfig) -> dict[str, int]:
    """Per-stream seeds (32-bit) derived from the master seed."""
    names = ("split", "pools", "embeddings", "victim", "random-study", "phase1", "phase2", "phase3", "sweep")
    return {n: derive_seed(cfg.seed, n) % 2**32 for n in names}


def declared_inputs(cfg: RunConfig) -> dict[str, Path]:
    """External files a run reads, keyed by role."""
    inputs = {"tagger": default_tagger_path()}
    if cfg.data_path:
        p = Path(cfg.data_path)
        if p.is_dir():
            inputs["data_train"], inputs["data_test"] = p / "train.csv", p / "test.csv"
        else:
            inputs["data"] = p
    elif cfg.dataset == "imdb":
        inputs["data"] = imdb_source_path()
    if cfg.embeddings:
        inputs["embeddings"] = Path(cfg.embeddings)
    else:
        inputs["embedding_corpus"] = imdb_source_path()
    return inputs


def preflight(cfg: RunConfig) -> dict[str, Path]:
    if not cfg.data_path and cfg.dataset != "imdb":
        raise MissingFile(f"dataset {cfg.dataset!r} needs data_path")
    inputs = declared_inputs(cfg)
    for role, p in inputs.items():
        if not p.is_file():
            raise MissingFile(f"{role}: {p}")
    cfg.stage_list()
    return inputs


def write_manifest(cfg: RunConfig, out: Path, inputs: dict[str, Path], done: list[str]) -> dict:
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            artifacts[p.relative_to(out).as_posix()] = sha256_file(p)
    config = cfg.to_dict()
    manifest = {
        "format": "posadv-manifest",
        "version": 1,
        "config": config,
        "seeds": stage_seeds(cfg),
        "stages": done,
        "versions": {"posadv": _pkg_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "inputs": {role: {"path": str(p), "sha256": sha256_file(p)} for role, p in sorted(inputs.items())},
        "artifacts": artifacts,
    }
    _dump(out / MANIFEST, manifest)
    return manifest


def _pkg_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


# -- loaders shared by stages ------------------------------------------------

def model_config(cfg: RunConfig) -> cnn.ModelConfig:
    return cnn.ModelConfig(
        cfg.max_len, cfg.embedding_dim, cfg.filters, cfg.kernel_size, cfg.dropout_rate, cfg.lr, cfg.batch_size,
        cfg.max_epochs, cfg.patience, cfg.threshold, stage_seeds(cfg)["victim"], cfg.trainable_embeddings,
    )


def adv_config(cfg: RunConfig, seed: int) -> phase2.AdvNetConfig:
    return phase2.AdvNetConfig(
        cfg.max_len, cfg.embedding_dim, cfg.adv_filters, cfg.adv_kernel_size, cfg.adv_fusion_width, cfg.adv_dropout_rate,
        cfg.adv_lr, cfg.adv_batch_size, cfg.adv_max_epochs, cfg.adv_patience, cfg.threshold, seed,
    )


def embeddings_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.embeddings) if cfg.embeddings else out / "data" / "embeddings.txt.gz"


def load_tagged(out: Path, split: str) -> list[TaggedReview]:
    return [TaggedReview(r["id"], tuple(r["tokens"]), tuple(r["tags"]), r["label"]) for r in _read_reviews(out / "data" / f"{split}.jsonl")]


def load_pools(out: Path) -> tuple[list[TaggedReview], list[TaggedReview]]:
    test = {r.id: r for r in load_tagged(out, "test")}
    pools = _load(out / "data" / "pools.json")
    return [test[i] for i in pools["phase1"]], [test[i] for i in pools["phase3"]]


def load_victim(out: Path) -> cnn.SentimentModel:
    if not (out / "victim" / "model.ckpt").is_file():
        raise MissingArtifact(str(out / "victim" / "model.ckpt"))
    return cnn.load_model(out / "victim")


def pretrained_table(cfg: RunConfig, out: Path, vocab: Vocabulary):
    """The embedding file the victim started from, never the victim's tuned weights."""
    path = embeddings_path(cfg, out)
    if not path.is_file():
        raise MissingArtifact(str(path))
    return load_embeddings(path, cfg.embedding_dim, vocab, seed=stage_seeds(cfg)["embeddings"])


class NetScorer:
    name = "adv-net"

    def __init__(self, net: phase2.AdvNet):
        self.net = net

    def __call__(self, candidates) -> np.ndarray:
        return phase2.score(self.net, [c.original.tokens for c in candidates], [c.manipulated for c in candidates])


class ConstantScorer:
    """Stand-in ranker when no adversarial network could be trained; selection falls back to tie-break order."""

    def __init__(self, reason: str):
        self.name = f"none ({reason})"

    def __call__(self, candidates) -> np.ndarray:
        return np.zeros(len(candidates))


def identity_scores(net: phase2.AdvNet, reviews: list[TaggedReview]) -> list[float]:
    if not reviews:
        return []
    return [float(x) for x in phase2.score(net, [r.tokens for r in reviews], [r.tokens for r in reviews])]


# -- stages ------------------------------------------------------------------

def stage_prepare(cfg: RunConfig, out: Path) -> None:
    seeds = stage_seeds(cfg)
    ds = ingest_dataset(cfg.data_path or None, cfg.dataset, cfg.n_train, cfg.n_test, seed=seeds["split"])
    tagger = PerceptronTagger.load(default_tagger_path())
    _write_reviews(out / "data" / "train.jsonl", (
        {"id": r.id, "label": r.label, "tokens": normalize_and_tokenize(r.text)} for r in ds.train))
    test_rows = []
    for r in ds.test:
        tokens = normalize_and_tokenize(r.text)
        test_rows.append({"id": r.id, "label": r.label, "tokens": tokens, "tags": tagger.tag(tokens)})
    _write_reviews(out / "data" / "test.jsonl", test_rows)
    order = stream(cfg.seed, "pools").permutation(len(test_rows))
    half = len(order) // 2
    _dump(out / "data" / "pools.json", {
        "phase1": [test_rows[i]["id"] for i in order[:half]],
        "phase3": [test_rows[i]["id"] for i in order[half:]],
    })
    _dump(out / "data" / "provenance.json", ds.provenance | {"source": Path(ds.provenance["source"]).name})
    if not cfg.embeddings:
        # Held-out test reviews never reach the embedding corpus.
        held_out = {r.id for r in ds.test} if cfg.dataset == "imdb" else set()
        docs = [normalize_and_tokenize(t) for t in unlabeled_texts(held_out)]
        words, vecs = train_vectors(docs, cfg.embedding_dim, cfg.embedding_min_count, seed=seeds["embeddings"])
        write_glove(out / "data" / "embeddings.txt.gz", words, vecs)


def stage_train(cfg: RunConfig, out: Path) -> None:
    rows = _read_reviews(out / "data" / "train.jsonl")
    docs, labels = [r["tokens"] for r in rows], [r["label"] for r in rows]
    vocab = build_vocab(docs, cfg.min_count)
    model = cnn.build_model(model_config(cfg), vocab, pretrained_table(cfg, out, vocab))
    cnn.train(model, docs, labels, val_split=cfg.val_split)
    cnn.save_model(model, out / "victim")
    test = load_tagged(out, "test")
    ev = cnn.evaluate(model, [r.tokens for r in test], [r.label for r in test])
    _dump(out / "victim" / "eval.json", {
        "accuracy": ev.accuracy, "tp": ev.tp, "tn": ev.tn, "fp": ev.fp, "fn": ev.fn, "n": len(test),
        "best_epoch": model.best_epoch, "epochs_run": len(model.history),
        "predictions": {r.id: int(p) for r, p in zip(test, ev.predictions)},
    })
    log.info("victim test accuracy %.4f (best epoch %d)", ev.accuracy, model.best_epoch)


def stage_random_study(cfg: RunConfig, out: Path) -> None:
    victim = cnn.BlackBoxVictim(load_victim(out))
    test = load_tagged(out, "test")
    rng = stream(cfg.seed, "random-study", "sample")
    reviews = [test[i] for i in sorted(rng.choice(len(test), size=min(cfg.study_reviews, len(test)), replace=False))]
    hist = phase1.random_attack_study(victim, reviews, cfg.k_words, cfg.study_replications, stage_seeds(cfg)["random-study"])
    hist.write_csv(out / "random_study" / "histogram.csv")
    _dump(out / "random_study" / "summary.json", hist.summary() | {"reviews": len(reviews), "queries": victim.queries})


def _spec(cfg: RunConfig, pos: str, ratio: float, replications: int, seed: int) -> phase1.PerturbationSpec:
    return phase1.PerturbationSpec(phase1.parse_pos_set(pos), ratio, replications, seed, cfg.base)


def stage_phase1(cfg: RunConfig, out: Path) -> None:
    victim = cnn.BlackBoxVictim(load_victim(out))
    pool, _ = load_pools(out)
    spec = _spec(cfg, cfg.pos, cfg.ratio, cfg.phase1_replications, stage_seeds(cfg)["phase1"])
    records = phase1.build_adversarial_dataset(victim, pool[: cfg.phase1_reviews], spec)
    phase1.write_jsonl(out / "phase1" / "records.jsonl", records)
    positives = sum(r.adv_label for r in records)
    _dump(out / "phase1" / "summary.json", {
        "pos_set": spec.name, "ratio": spec.ratio_percent, "records": len(records), "positives": positives,
        "positive_fraction": positives / len(records) if records else 0.0, "queries": victim.queries,
    })


def stage_phase2(cfg: RunConfig, out: Path) -> None:
    path = out / "phase1" / "records.jsonl"
    if not path.is_file():
        raise MissingArtifact(str(path))
    records = phase1.read_jsonl(path)
    vocab = Vocabulary.load(out / "victim" / "vocab.txt")
    net = phase2.build_adv_net(adv_config(cfg, stage_seeds(cfg)["phase2"]), vocab, pretrained_table(cfg, out, vocab))
    phase2.train_adv_net(net, records, cfg.adv_val_split)
    phase2.save_adv_net(net, out / "phase2")
    write_history_csv(out / "phase2" / "history.csv", net.history)
    _, pool3 = load_pools(out)
    ident = identity_scores(net, pool3[:50])
    _dump(out / "phase2" / "summary.json", {
        "best_epoch": net.best_epoch, "epochs_run": len(net.history),
        "val_acc": net.history[net.best_epoch - 1].val_acc,
        "identity_pair_score_mean": float(np.mean(ident)) if ident else None,
    })


def stage_phase3(cfg: RunConfig, out: Path) -> None:
    victim = cnn.BlackBoxVictim(load_victim(out))
    vocab = Vocabulary.load(out / "victim" / "vocab.txt")
    if not (out / "phase2" / "adv_net.ckpt").is_file():
        raise MissingArtifact(str(out / "phase2" / "adv_net.ckpt"))
    scorer = NetScorer(phase2.load_adv_net(out / "phase2", vocab))
    _, pool3 = load_pools(out)
    seed = stage_seeds(cfg)["phase3"]
    spec = _spec(cfg, cfg.pos, cfg.ratio, cfg.phase3_replications, seed)
    config = phase3.AttackConfig(spec, cfg.n_source_reviews, cfg.top_k, cfg.best_per_source)
    sources = phase3.sample_sources(pool3, cfg.n_source_reviews, seed)
    report = phase3.run_attack(victim, scorer, sources, config, cfg.dataset)
    _dump(out / "phase3" / "report.json", report.to_json())
    seeds = [int(s) for s in cfg.compare_seeds.split(",") if s.strip()]
    if seeds:
        cmp = phase3.compare_with_random(victim, scorer, pool3, config, [derive_seed(cfg.seed, "compare", s) % 2**32 for s in seeds])
        _dump(out / "phase3" / "comparison.json", dataclasses.asdict(cmp) | {"wins": cmp.wins})
    log.info("attack: %.3f -> %.3f on %d selected", report.baseline_acc, report.attack_acc, report.n)


def stage_sweep(cfg: RunConfig, out: Path) -> None:
    victim = cnn.BlackBoxVictim(load_victim(out))
    vocab = Vocabulary.load(out / "victim" / "vocab.txt")
    table = pretrained_table(cfg, out, vocab)
    pool1, pool3 = load_pools(out)
    seed = stage_seeds(cfg)["sweep"]
    train_pool = pool1[: cfg.sweep_phase1_reviews]
    sources = phase3.sample_sources(pool3, cfg.sweep_source_reviews, seed)

    def net_builder(spec: phase1.PerturbationSpec):
        p1 = phase1.PerturbationSpec(spec.pos_set, spec.ratio_percent, cfg.sweep_phase1_replications, spec.seed, spec.base)
        records = phase1.build_adversarial_dataset(victim, train_pool, p1)
        net = phase2.build_adv_net(adv_config(cfg, derive_seed(seed, "net", spec.name, spec.ratio_percent) % 2**32), vocab, table)
        try:
            phase2.train_adv_net(net, records, cfg.adv_val_split)
        except SingleClassDataset:
            return ConstantScorer("single-class phase-1 data")
        except InsufficientData:
            return ConstantScorer("too few phase-1 records")
        return NetScorer(net)

    base = phase3.AttackConfig(
        phase1.PerturbationSpec(phase1.parse_pos_set(cfg.pos), cfg.ratio, cfg.sweep_replications, seed, cfg.base),
        cfg.sweep_source_reviews, cfg.sweep_top_k, cfg.best_per_source,
    )
    sweep = phase3.pos_sweep(victim, net_builder, sources, phase3.sweep_configs(base), cfg.dataset)
    d = out / "sweep"
    sweep.write_json(d / "sweep.json")
    sweep.write_csv(d / "sweep.csv")
    sweep.write_plot_csv(d / "plot.csv")


def stage_report(cfg: RunConfig, out: Path) -> None:
    emit_report(out)


STAGE_FUNCS: dict[str, Callable[[RunConfig, Path], None]] = {
    "prepare": stage_prepare,
    "train": stage_train,
    "random-study": stage_random_study,
    "phase1": stage_phase1,
    "phase2": stage_phase2,
    "phase3": stage_phase3,
    "sweep": stage_sweep,
    "report": stage_report,
}
STAGE_DIRS = {"prepare": "data", "train": "victim", "random-study": "random_study", "phase1": "phase1",
              "phase2": "phase2", "phase3": "phase3", "sweep": "sweep", "report": "report"}


def run_stages(cfg: RunConfig, out, stages) -> dict:
    """Run ``stages`` in order, rewriting the manifest after each; failures name the stage."""
    out = Path(out)
    try:
        inputs = preflight(cfg)
    except PosAdvError as exc:
        raise StageFailed("preflight", exc) from exc
    out.mkdir(parents=True, exist_ok=True)
    previous = out / MANIFEST
    done = json.loads(previous.read_text())["stages"] if previous.is_file() else []
    manifest = {}
    for name in stages:
        log.info("stage %s", name)
        try:
            (out / STAGE_DIRS[name]).mkdir(exist_ok=True)
            STAGE_FUNCS[name](cfg, out)
        except Exception as exc:
            write_manifest(cfg, out, inputs, done)
            raise StageFailed(name, exc) from exc
        done = [s for s in done if s != name] + [name]
        manifest = write_manifest(cfg, out, inputs, done)
    return manifest


def run_pipeline(cfg: RunConfig, out) -> Path:
    run_stages(cfg, out, cfg.stage_list())
    return Path(out)
