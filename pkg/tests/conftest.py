import numpy as np
import pytest

from posadv.phase1 import AdvDatasetRecord, perturb
from posadv.text import PLACEHOLDER, STUDY_TAGS, TaggedReview

WORDS = ["good", "bad", "film", "plot", "run", "see", "great", "dull", "it", "on", "very", "the", "is", "and", "paris"]
TAG_POOL = list(STUDY_TAGS) + ["OTHER"]

# criterion number -> (status, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}
ACCEPTANCE_CRITERIA = range(1, 10)


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for reports in terminalreporter.stats.values()
              for r in reports if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        status, detail = ACCEPTANCE.get(n, ("FAIL", "did not complete"))
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")


class ConstantVictim:
    def __init__(self, label=1):
        self.label = label

    def predict(self, docs):
        return np.full(len(docs), self.label, dtype=np.int64)


class KeywordVictim:
    """Positive iff ``good`` survives in the review; mimics a sentiment cue that deletion can remove."""

    def __init__(self, cue="good"):
        self.cue = cue

    def predict(self, docs):
        return np.array([int(self.cue in d) for d in docs], dtype=np.int64)


def random_review(rng, idx, min_len=1, max_len=40, placeholder_rate=0.0):
    n = int(rng.integers(min_len, max_len + 1))
    tokens = [str(rng.choice(WORDS)) for _ in range(n)]
    tags = [str(rng.choice(TAG_POOL)) for _ in range(n)]
    for i in range(n):
        if rng.random() < placeholder_rate:
            tokens[i] = PLACEHOLDER
    return TaggedReview(f"r{idx:05d}", tuple(tokens), tuple(tags), int(rng.integers(0, 2)))


@pytest.fixture
def reviews():
    rng = np.random.default_rng(0)
    return [random_review(rng, i, min_len=12) for i in range(30)]


def pivot_records(n, seed=0, pivot="pivot", length=20):
    """Phase-1-shaped records whose label is 1 exactly when the deletion removed ``pivot``."""
    rng = np.random.default_rng(seed)
    filler = [w for w in WORDS if w != pivot] + [f"w{i}" for i in range(40)]
    out = []
    for i in range(n):
        tokens = [str(rng.choice(filler)) for _ in range(length)]
        if rng.random() < 0.7:
            tokens[int(rng.integers(length))] = pivot
        r = TaggedReview(f"p{seed}-{i:05d}", tuple(tokens), ("NOUN",) * length, int(rng.integers(0, 2)))
        positions = sorted(int(p) for p in rng.choice(length, size=3, replace=False))
        if pivot in tokens and rng.random() < 0.5:
            at = tokens.index(pivot)
            if at not in positions:
                positions[0] = at
                positions = sorted(set(positions))
        manipulated, deleted = perturb(r, positions)
        label = int(any(d.word == pivot for d in deleted))
        out.append(AdvDatasetRecord(r, 0, tuple(manipulated), tuple(deleted), r.label, r.label, 1 - r.label if label else r.label, label))
    return out
