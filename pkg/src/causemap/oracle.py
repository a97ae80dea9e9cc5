"""Classifier access: synthetic models, call accounting, and result caching.

Every classification the engine makes flows through an OracleSession.  The
session enforces the call budget, deduplicates structurally identical mutant
queries through a cache keyed by (masked regions, mask color) rather than raw
pixels, and keeps the counters that the call-budget bound is checked against.

Budget exhaustion is an early-termination signal, not a failure: refinement
catches it and returns the best map accumulated so far.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from causemap.core import Config, Image, MutantSpec, Region
from causemap.mutagen import materialize

__all__ = [
    "BudgetExhaustedError",
    "CallLedger",
    "Classification",
    "ConstantClassifier",
    "FixtureLinearClassifier",
    "LinearClassifier",
    "OracleError",
    "OracleInterrupted",
    "OracleSession",
    "PixelThresholdClassifier",
    "ledger_check",
    "parse_builtin",
]


class OracleError(RuntimeError):
    pass


class OracleInterrupted(OracleError):
    """Base for conditions that end a run early but still yield partial output."""


class BudgetExhaustedError(OracleInterrupted):
    pass


@dataclass(frozen=True)
class Classification:
    """One model answer.

    ``confidence`` is the score of the returned label.  When the model
    exposes per-class scores, the label must be the argmax with ties broken
    toward the lowest index.
    """

    label: int
    confidence: float
    full_scores: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0) or not math.isfinite(self.confidence):
            raise OracleError(f"confidence {self.confidence} outside [0, 1]")
        if self.full_scores is not None:
            winner = int(np.argmax(self.full_scores))
            if winner != self.label:
                raise OracleError(
                    f"label {self.label} is not the argmax of scores {self.full_scores}"
                )

    def score_for(self, label: int) -> float | None:
        """Score of an arbitrary label, if the model exposes one."""
        if self.full_scores is not None:
            return float(self.full_scores[label])
        if label == self.label:
            return float(self.confidence)
        return None


@dataclass
class CallLedger:
    """Counts model invocations against a hard budget.

    ``calls_made`` is raw model calls; ``cache_hits`` counts queries served
    without touching the model.  The budget bounds calls_made only.
    """

    budget: int
    calls_made: int = 0
    cache_hits: int = 0

    @property
    def requests(self) -> int:
        return self.calls_made + self.cache_hits

    def reserve(self, n: int) -> None:
        if self.calls_made + n > self.budget:
            raise BudgetExhaustedError(
                f"budget {self.budget} cannot cover {n} more calls "
                f"({self.calls_made} made)"
            )
        self.calls_made += n


def ledger_check(ledger: CallLedger, n_pixels: int, cfg: Config) -> bool:
    """True iff the recorded calls respect the 2^s * n * N bound."""
    return ledger.calls_made <= (2**cfg.superpixels) * n_pixels * cfg.iterations


# ---------------------------------------------------------------------------
# Synthetic classifiers.  All are deterministic and operate on batches shaped
# (B, height, width, channels); labels() is the cheap path used by the exact
# brute-force oracle, classify() the rich path used by the engine.
# ---------------------------------------------------------------------------


class ConstantClassifier:
    """Always answers the same label with full confidence."""

    def __init__(self, label: int, n_classes: int | None = None):
        self.label = int(label)
        self.n_classes = n_classes if n_classes is not None else self.label + 1

    def labels(self, batch: np.ndarray) -> np.ndarray:
        return np.full(batch.shape[0], self.label, dtype=np.int64)

    def classify(self, batch: np.ndarray) -> list[Classification]:
        return [Classification(self.label, 1.0) for _ in range(batch.shape[0])]


class PixelThresholdClassifier:
    """Fires iff every conjunct pixel's mean intensity exceeds its threshold.

    ``conjuncts`` is a sequence of (row, col, threshold).  Answers are hard:
    confidence is always 1.0 for whichever label wins.
    """

    def __init__(
        self,
        conjuncts: tuple[tuple[int, int, float], ...],
        label_true: int = 1,
        label_false: int = 0,
    ):
        if not conjuncts:
            raise OracleError("need at least one conjunct")
        if label_true == label_false:
            raise OracleError("labels must differ")
        self.conjuncts = tuple((int(r), int(c), float(t)) for r, c, t in conjuncts)
        self.label_true = int(label_true)
        self.label_false = int(label_false)
        self.n_classes = max(self.label_true, self.label_false) + 1

    def _fires(self, batch: np.ndarray) -> np.ndarray:
        fires = np.ones(batch.shape[0], dtype=bool)
        for r, c, t in self.conjuncts:
            fires &= batch[:, r, c, :].mean(axis=-1) > t
        return fires

    def labels(self, batch: np.ndarray) -> np.ndarray:
        return np.where(self._fires(batch), self.label_true, self.label_false)

    def classify(self, batch: np.ndarray) -> list[Classification]:
        return [Classification(int(lbl), 1.0) for lbl in self.labels(batch)]


class CountThresholdClassifier:
    """Fires iff at least ``need`` of the test pixels clear their thresholds.

    Monotone relaxation of the conjunctive rule: with non-negative thresholds
    a black mask can only lower the count, so every subset of a label-keeping
    mask set keeps the label too, while witnesses can still be nonempty
    (fractional responsibilities).  Answers are hard.
    """

    def __init__(
        self,
        tests: tuple[tuple[int, int, float], ...],
        need: int,
        label_true: int = 1,
        label_false: int = 0,
    ):
        if not tests:
            raise OracleError("need at least one test pixel")
        if not 1 <= need <= len(tests):
            raise OracleError(f"need must be in 1..{len(tests)}, got {need}")
        if label_true == label_false:
            raise OracleError("labels must differ")
        self.tests = tuple((int(r), int(c), float(t)) for r, c, t in tests)
        self.need = int(need)
        self.label_true = int(label_true)
        self.label_false = int(label_false)
        self.n_classes = max(self.label_true, self.label_false) + 1

    def _fires(self, batch: np.ndarray) -> np.ndarray:
        count = np.zeros(batch.shape[0], dtype=np.int64)
        for r, c, t in self.tests:
            count += batch[:, r, c, :].mean(axis=-1) > t
        return count >= self.need

    def labels(self, batch: np.ndarray) -> np.ndarray:
        return np.where(self._fires(batch), self.label_true, self.label_false)

    def classify(self, batch: np.ndarray) -> list[Classification]:
        return [Classification(int(lbl), 1.0) for lbl in self.labels(batch)]


class LinearClassifier:
    """Two-class logistic model over the flat pixel vector."""

    def __init__(self, weights: np.ndarray, bias: float = 0.0):
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        self.bias = float(bias)
        self.n_classes = 2

    def _scores(self, batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1)
        if flat.shape[1] != self.weights.size:
            raise OracleError(
                f"image has {flat.shape[1]} values, weights expect {self.weights.size}"
            )
        z = flat @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))

    def labels(self, batch: np.ndarray) -> np.ndarray:
        return (self._scores(batch) > 0.5).astype(np.int64)

    def classify(self, batch: np.ndarray) -> list[Classification]:
        out = []
        for p in self._scores(batch):
            p = float(p)
            label = int(p > 0.5)
            out.append(
                Classification(label, p if label == 1 else 1.0 - p, full_scores=(1.0 - p, p))
            )
        return out


def fixture_weight(i: int) -> float:
    """Deterministic weight for flat index i, shared verbatim with the adapter."""
    return ((i + 1) * 2654435761 % 2**32) / 2**32 - 0.5


FIXTURE_BIAS = -0.125


class FixtureLinearClassifier:
    """The protocol-conformance linear model.

    Matches the out-of-process adapter fixture bit for bit: pixels are cast
    to 32-bit floats (wire precision), the dot product accumulates left to
    right in float64, and the confidence is the float64 logistic of the
    score.  Weights come from ``fixture_weight`` over the flat index.
    """

    n_classes = 2

    def __init__(self) -> None:
        self._weights_cache: dict[int, list[float]] = {}

    def _weights(self, n: int) -> list[float]:
        if n not in self._weights_cache:
            self._weights_cache[n] = [fixture_weight(i) for i in range(n)]
        return self._weights_cache[n]

    def _score_one(self, flat32: np.ndarray) -> float:
        w = self._weights(flat32.size)
        s = FIXTURE_BIAS
        for i in range(flat32.size):
            s += w[i] * float(flat32[i])
        return 1.0 / (1.0 + math.exp(-s))

    def labels(self, batch: np.ndarray) -> np.ndarray:
        return np.array([c.label for c in self.classify(batch)], dtype=np.int64)

    def classify(self, batch: np.ndarray) -> list[Classification]:
        out = []
        flat32 = np.asarray(batch, dtype=np.float32).reshape(batch.shape[0], -1)
        for row in flat32:
            p = self._score_one(row)
            label = int(p > 0.5)
            out.append(
                Classification(label, p if label == 1 else 1.0 - p, full_scores=(1.0 - p, p))
            )
        return out


def parse_builtin(spec: str):
    """Instantiate a built-in classifier from its CLI spec.

    Accepted forms: ``constant@<label>``, ``threshold@r,c,t[;r,c,t...]``,
    ``linear`` (the conformance fixture).
    """
    name, _, args = spec.partition("@")
    if name == "constant":
        if not args:
            raise OracleError("constant needs a label, e.g. constant@7")
        return ConstantClassifier(int(args))
    if name == "threshold":
        if not args:
            raise OracleError("threshold needs conjuncts, e.g. threshold@1,1,0.5")
        conjuncts = []
        for part in args.split(";"):
            r, c, t = part.split(",")
            conjuncts.append((int(r), int(c), float(t)))
        return PixelThresholdClassifier(tuple(conjuncts))
    if name == "linear":
        if args:
            raise OracleError("the linear fixture takes no arguments")
        return FixtureLinearClassifier()
    raise OracleError(f"unknown builtin classifier {spec!r}")


# ---------------------------------------------------------------------------
# Session: budget enforcement plus the mutant-key cache.
# ---------------------------------------------------------------------------


def _mutant_key(
    regions: tuple[Region, ...], color: tuple[float, ...]
) -> tuple[tuple[float, ...], tuple[Region, ...]]:
    return (tuple(float(v) for v in color), regions)


class OracleSession:
    """One engine run's view of a classifier.

    Mutant queries are keyed by their occlusion structure, never raw pixels,
    so identical mask configurations reached along different refinement
    branches cost one model call total.  Cache hits are value-identical to
    misses and do not advance the ledger.
    """

    def __init__(self, classifier, budget: int = 100_000):
        self.classifier = classifier
        self.ledger = CallLedger(budget=budget)
        self._cache: dict[object, Classification] = {}
        self._lock = threading.Lock()

    # -- raw path (no cache): arbitrary images, e.g. extraction prefixes ---

    def classify_arrays(self, arrays: list[np.ndarray]) -> list[Classification]:
        if not arrays:
            return []
        with self._lock:
            self.ledger.reserve(len(arrays))
        return self.classifier.classify(np.stack(arrays))

    def classify_image(self, x: Image) -> Classification:
        return self.classify_arrays([x.data])[0]

    # -- cached path: structurally keyed mutants ----------------------------

    def classify_mutants(
        self, x: Image, specs: list[MutantSpec], color: tuple[float, ...]
    ) -> list[Classification]:
        keys = [_mutant_key(spec.mask_regions(), color) for spec in specs]
        with self._lock:
            missing = [i for i, k in enumerate(keys) if k not in self._cache]
            self.ledger.cache_hits += len(keys) - len(missing)
            self.ledger.reserve(len(missing))
        if missing:
            batch = np.stack([materialize(x, specs[i], color).data for i in missing])
            answers = self.classifier.classify(batch)
            with self._lock:
                for i, ans in zip(missing, answers):
                    self._cache[keys[i]] = ans
        with self._lock:
            return [self._cache[k] for k in keys]

    def classify_masked_regions(
        self, x: Image, regions: frozenset[Region], color: tuple[float, ...]
    ) -> Classification:
        """Cached classification of x with exactly ``regions`` occluded."""
        ordered = tuple(sorted(regions))
        key = _mutant_key(ordered, color)
        with self._lock:
            if key in self._cache:
                self.ledger.cache_hits += 1
                return self._cache[key]
            self.ledger.reserve(1)
        data = x.data.copy()
        col = np.asarray(color, dtype=np.float64).reshape(1, 1, x.channels)
        for region in ordered:
            rs, cs = region.slices
            data[rs, cs, :] = col
        ans = self.classifier.classify(data[None, ...])[0]
        with self._lock:
            self._cache[key] = ans
        return ans

    def seed_cache(
        self, regions: frozenset[Region], color: tuple[float, ...], answer: Classification
    ) -> None:
        """Record an externally known classification (e.g. the unmasked image)."""
        key = _mutant_key(tuple(sorted(regions)), color)
        with self._lock:
            self._cache.setdefault(key, answer)
