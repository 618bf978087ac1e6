"""Acceptance criteria 1-9.

Each test records a verdict that the conftest prints as one
``criterion N: PASS|FAIL`` line in the terminal summary. Criteria 2, 6, 7 and 9
share one desk-scale IMDB run with the default ``RunConfig``; on a single CPU
core it takes about 15 minutes. Set ``POSADV_ACCEPTANCE_DIR`` to keep its
artifacts somewhere other than pytest's temporary directory.
"""

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE, KeywordVictim, random_review
from test_cnn import composed_grad_check
from test_nn import check_layer
from test_phase2 import held_out_accuracy
from test_pipeline import TINY, write_corpus, write_vectors

from posadv import fullscale, nn
from posadv.errors import PosAdvError
from posadv.phase1 import PerturbationSpec, adv_label, build_adversarial_dataset, pos_set_name
from posadv.phase3 import SWEEP_POS_SETS, SweepReport
from posadv.pipeline import MANIFEST, RunConfig, run_pipeline, run_stages
from posadv.text import PLACEHOLDER, STUDY_TAGS

RATIOS = (1, 5, 10, 15)


def verdict(n, ok, detail):
    ACCEPTANCE[n] = ("PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {n}: {detail}"


# -- desk-scale run ----------------------------------------------------------

@dataclass
class DeskRun:
    cfg: RunConfig
    out: Path
    seconds: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def need(self, *stages):
        failed = {s: self.errors[s] for s in stages if s in self.errors}
        if failed:
            detail = "; ".join(f"{s}: {e}" for s, e in failed.items())
            pytest.fail(f"upstream stage failed ({detail})")

    def json(self, rel):
        return json.loads((self.out / rel).read_text())


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    out = Path(os.environ.get("POSADV_ACCEPTANCE_DIR") or tmp_path_factory.mktemp("desk"))
    run = DeskRun(RunConfig(), out)
    for stage in run.cfg.stage_list():
        if run.errors:
            run.errors[stage] = "skipped after an earlier failure"
            continue
        t0 = time.perf_counter()
        try:
            run_stages(run.cfg, out, [stage])
        except PosAdvError as exc:
            run.errors[stage] = f"{type(exc).__name__}: {exc}"
        run.seconds[stage] = time.perf_counter() - t0
    return run


# -- criterion 1 -------------------------------------------------------------

def _layer_checks(rng):
    """Yield (layer, result) for one random shape of every layer."""
    b, length, din, f = (int(v) for v in rng.integers(1, 5, size=4))
    k = int(rng.choice([1, 3, 5]))
    cache = {}

    p = {"x": rng.normal(size=(b, length, din)), "w": rng.normal(size=(k, din, f)), "b": rng.normal(size=f)}

    def conv():
        out, cache["conv"] = nn.conv1d_forward(p["x"], p["w"], p["b"], relu=False)
        return out

    def conv_back(r):
        dx, g = nn.conv1d_backward(r, cache["conv"])
        return {"x": dx, "w": g["weight"], "b": g["bias"]}

    yield "conv1d", check_layer(conv, conv_back, p, rng)

    q = {"x": rng.normal(size=(b, length + 1, f))}

    def pool():
        out, cache["pool"] = nn.global_max_pool(q["x"])
        return out

    yield "max_pool", check_layer(pool, lambda r: {"x": nn.global_max_pool_backward(r, cache["pool"], length + 1)}, q, rng)

    mode = str(rng.choice(["train", "eval"]))
    bn = {"x": rng.normal(size=(b + 1, f)), "g": rng.normal(size=f), "b": rng.normal(size=f)}
    running = (rng.normal(size=f), rng.uniform(0.5, 2.0, size=f))

    def norm():
        state = nn.BatchNormState(running[0].copy(), running[1].copy())
        out, cache["bn"] = nn.batch_norm(bn["x"], bn["g"], bn["b"], state, mode)
        return out

    def norm_back(r):
        dx, g = nn.batch_norm_backward(r, cache["bn"])
        return {"x": dx, "g": g["gamma"], "b": g["beta"]}

    yield f"batch_norm[{mode}]", check_layer(norm, norm_back, bn, rng)

    d = {"x": rng.normal(size=(b, f))}
    seed = int(rng.integers(2**31))

    def drop():
        out, cache["drop"] = nn.dropout(d["x"], 0.5, "train", np.random.default_rng(seed))
        return out

    yield "dropout", check_layer(drop, lambda r: {"x": nn.dropout_backward(r, cache["drop"])}, d, rng)

    relu = bool(rng.integers(2))
    dp = {"x": rng.normal(size=(b, din)), "w": rng.normal(size=(din, f)), "b": rng.normal(size=f)}

    def dense():
        out, cache["dense"] = nn.dense_forward(dp["x"], dp["w"], dp["b"], relu=relu)
        return out

    def dense_back(r):
        dx, g = nn.dense_backward(r, cache["dense"])
        return {"x": dx, "w": g["weight"], "b": g["bias"]}

    yield "dense", check_layer(dense, dense_back, dp, rng)

    y = rng.integers(0, 2, size=b + 1).astype(float)
    lp = {"yhat": rng.uniform(0.05, 0.95, size=b + 1)}
    yield "bce", nn.grad_check(lambda: nn.bce_loss(y, lp["yhat"])[0], lp, {"yhat": nn.bce_loss(y, lp["yhat"])[1]})

    yield "classifier", composed_grad_check(
        int(rng.integers(2, 5)), int(rng.integers(3, 8)), int(rng.integers(2, 5)), int(rng.integers(1, 5)),
        int(rng.choice([1, 3, 5])), float(rng.choice([0.0, 0.5])), int(rng.integers(2**31)),
    )


def test_criterion_1_gradients():
    rng = np.random.default_rng(20240601)
    worst, failures, count = {}, [], 0
    t0 = time.perf_counter()
    for _ in range(20):
        for layer, res in _layer_checks(rng):
            count += 1
            name = layer.split("[")[0]
            worst[name] = max(worst.get(name, 0.0), res.max_rel_error)
            if res.skipped or not res.max_rel_error < 1e-4:
                failures.append((layer, res))
    seconds = time.perf_counter() - t0
    detail = (f"{count} checks over 20 shapes per layer, worst rel err {max(worst.values()):.1e}, {seconds:.1f}s"
              + (f", failures {failures[:3]}" if failures else ""))
    verdict(1, not failures and seconds < 60 and set(worst) >= {"conv1d", "max_pool", "batch_norm", "dropout",
                                                                "dense", "bce", "classifier"}, detail)


# -- criterion 2 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_2_classifier(desk):
    desk.need("prepare", "train")
    n_train = sum(1 for _ in open(desk.out / "data" / "train.jsonl"))
    n_val = round(n_train * desk.cfg.val_split)
    ev = desk.json("victim/eval.json")
    seconds = desk.seconds["train"]
    detail = (f"test acc {ev['accuracy']:.3f} on {ev['n']} (train {n_train - n_val} / val {n_val}), "
              f"{ev['epochs_run']} epochs, train stage {seconds:.0f}s")
    ok = (n_train - n_val, n_val, ev["n"]) == (2000, 500, 1000) and ev["accuracy"] >= 0.80
    verdict(2, ok and ev["epochs_run"] <= 20 and seconds < 600, detail)


# -- criterion 3 -------------------------------------------------------------

# (orig, pred, adv_pred) -> label: a flip counts only when the victim was right to begin with
TRUTH_TABLE = {
    (0, 0, 0): 0, (0, 0, 1): 1, (0, 1, 0): 0, (0, 1, 1): 0,
    (1, 0, 0): 0, (1, 0, 1): 0, (1, 1, 0): 1, (1, 1, 1): 0,
}


def test_criterion_3_truth_table():
    wrong = [k for k, v in TRUTH_TABLE.items() if adv_label(*k) != v]
    verdict(3, len(TRUTH_TABLE) == 8 and not wrong, f"{8 - len(wrong)}/8 combinations match" + (f", wrong {wrong}" if wrong else ""))


# -- criterion 4 -------------------------------------------------------------

def _expected_count(ratio, candidates):
    """Exact rational ceiling, independent of the float rounding in the implementation."""
    return min(math.ceil(Fraction(str(ratio)) * candidates / 100), candidates)


def _violations(record, spec):
    orig, man = record.original, record.manipulated
    out = []
    if len(man) != len(orig.tokens):
        out.append("length")
    changed = {i for i, (a, b) in enumerate(zip(orig.tokens, man)) if a != b}
    positions = {d.pos for d in record.deleted}
    if changed != positions or any(man[i] != PLACEHOLDER for i in changed):
        out.append("placeholder-only")
    if any(d.tag not in spec.pos_set or d.tag != orig.tags[d.pos] or d.word != orig.tokens[d.pos] or d.word == PLACEHOLDER
           for d in record.deleted):
        out.append("tag-set")
    candidates = sum(1 for tok, tag in zip(orig.tokens, orig.tags) if tag in spec.pos_set and tok != PLACEHOLDER)
    if len(record.deleted) != _expected_count(spec.ratio_percent, candidates) or len(positions) != len(record.deleted):
        out.append("count")
    return out


def test_criterion_4_perturbation_laws():
    rng = np.random.default_rng(4)
    reviews = [random_review(rng, i, min_len=1, max_len=60, placeholder_rate=0.05) for i in range(40)]
    victim = KeywordVictim()
    total, bad = 0, {}
    for pos_set in SWEEP_POS_SETS:
        for ratio in RATIOS:
            spec = PerturbationSpec(frozenset(pos_set), ratio, replications=10, seed=int(rng.integers(2**31)))
            for rec in build_adversarial_dataset(victim, reviews, spec):
                total += 1
                for law in _violations(rec, spec):
                    bad[law] = bad.get(law, 0) + 1
    verdict(4, total >= 10_000 and not bad, f"{total} records, violations {bad or 0}")


# -- criterion 5 -------------------------------------------------------------

def test_criterion_5_pivot_oracle():
    t0 = time.perf_counter()
    acc, _ = held_out_accuracy()
    seconds = time.perf_counter() - t0
    verdict(5, acc >= 0.95 and seconds < 300, f"held-out accuracy {acc:.3f}, {seconds:.0f}s")


# -- criterion 6 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_attack_efficacy(desk):
    desk.need("phase1", "phase2", "phase3")
    report, cmp = desk.json("phase3/report.json"), desk.json("phase3/comparison.json")
    drop = report["baseline_acc"] - report["attack_acc"]
    setting = (report["pos_set"], report["ratio"], report["n"]) == ("VERB_ADJ_NOUN", 10.0, 100)
    detail = (f"attacked-set accuracy {report['baseline_acc']:.2f} -> {report['attack_acc']:.2f} "
              f"(drop {100 * drop:.0f} pp); top-k <= random-k in {cmp['wins']}/{len(cmp['seeds'])} seeds "
              f"(top-k {cmp['top_k_acc']}, random-k {cmp['random_k_acc']})")
    verdict(6, setting and drop >= 0.15 - 1e-12 and len(cmp["seeds"]) == 5 and cmp["wins"] >= 4, detail)


# -- criterion 7 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_random_study(desk):
    desk.need("random-study", "report")
    summary = desk.json("random_study/summary.json")
    with open(desk.out / "random_study" / "histogram.csv", newline="") as fh:
        rows = {r[0]: [int(x) for x in r[1:]] for r in csv.reader(fh) if r[0] != "tag"}
    sums_ok = set(rows) == set(STUDY_TAGS) and all(sum(v) == summary["successes"] for v in rows.values())
    full = desk.json("report/report.json")["full_scale"]
    reported = (full["study_attempts"], full["study_successes"], full["study_at_least_one"]["NOUN"]) == (99_000, 12_873, 0.817)
    with open(desk.out / "report" / "figure2_histogram.csv", newline="") as fh:
        sources = {r["source"] for r in csv.DictReader(fh)}
    seconds = desk.seconds["random-study"]
    detail = (f"{summary['attempts']} replications, {summary['successes']} successes, row sums "
              f"{'equal' if sums_ok else 'differ'} for {len(rows)} tags, {seconds:.0f}s; "
              f"full scale {fullscale.STUDY_ATTEMPTS} / {fullscale.STUDY_SUCCESSES} reported alongside")
    ok = sums_ok and reported and sources == {"desk", fullscale.COLUMN}
    verdict(7, ok and summary["attempts"] >= 1000 and seconds < 300, detail)


# -- criterion 8 -------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    data, vectors = write_corpus(tmp_path / "yelp.csv"), write_vectors(tmp_path / "vectors.txt")
    cfg = RunConfig(**{**TINY, "data_path": str(data), "embeddings": str(vectors)})
    a, b = run_pipeline(cfg, tmp_path / "a"), run_pipeline(cfg, tmp_path / "b")
    ma, mb = (tmp_path / "a" / MANIFEST).read_bytes(), (tmp_path / "b" / MANIFEST).read_bytes()
    n = len(json.loads(ma)["artifacts"])
    verdict(8, ma == mb and n > 0, f"manifests {'byte-identical' if ma == mb else 'differ'} ({n} artifacts hashed)")


# -- criterion 9 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_9_sweep_shape(desk):
    desk.need("sweep", "report")
    sweep = SweepReport.read_json(desk.out / "sweep" / "sweep.json")
    grid = {(c.pos_set, float(c.ratio)) for c in sweep.cells}
    expected = {(pos_set_name(p), float(r)) for p in SWEEP_POS_SETS for r in RATIOS}
    in_range = all(0 <= c.attack_acc <= 1 and 0 <= c.baseline_acc <= 1 for c in sweep.cells)
    consistent = all(
        c.recomputed() == (c.baseline_acc, c.attack_acc) and len(c.rows) == c.n
        and all(r.flipped == (r.orig_pred != r.adv_pred) for r in c.rows)
        for c in sweep.cells
    )
    with open(desk.out / "report" / "figure4_sweep.csv", newline="") as fh:
        plotted = sum(1 for _ in csv.DictReader(fh))
    detail = (f"{len(sweep.cells)} cells, grid {'complete' if grid == expected else 'incomplete'}, accuracies "
              f"{'in' if in_range else 'outside'} [0,1], rows {'consistent' if consistent else 'inconsistent'}, "
              f"sweep stage {desk.seconds['sweep']:.0f}s")
    verdict(9, len(sweep.cells) == 28 and grid == expected and in_range and consistent and plotted == 28, detail)
