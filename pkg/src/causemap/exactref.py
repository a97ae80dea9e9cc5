"""Exact brute-force causality oracle for desk-scale verification.

Works over a small universe of maskable units (pixels or regions).  A subset
W of the universe "passes" when occluding exactly the units in W leaves the
classifier's label unchanged.  From the full truth table over subsets we
read off, per unit u:

* cause(u): some witness W excluding u has every subset of W passing and
  W plus u flipping the label;
* responsibility(u): 1 / (k + 1) for the smallest such witness size k,
  0.0 when u is not a cause;

and, independently, every minimum-cardinality subset S whose complement can
be masked without changing the label (the exact minimal explanations).

Everything here is deliberately independent of the engine's partition-based
algorithms; it exists so they can be checked against it.
"""

from __future__ import annotations

from itertools import combinations
from typing import Sequence

import numpy as np

from causemap.core import Image, Region

__all__ = [
    "TruthTable",
    "UniverseError",
    "exact_cause",
    "exact_min_explanation",
    "exact_responsibility",
    "truth_table",
]

MAX_FULL_UNIVERSE = 20
_CHUNK = 4096


class UniverseError(ValueError):
    pass


def _footprints(x: Image, universe: Sequence) -> np.ndarray:
    """Boolean (m, h*w) matrix: which pixels each unit occludes."""
    if len(set(universe)) != len(universe):
        raise UniverseError("universe contains duplicate units")
    feet = np.zeros((len(universe), x.height * x.width), dtype=bool)
    for i, unit in enumerate(universe):
        grid = np.zeros((x.height, x.width), dtype=bool)
        if isinstance(unit, Region):
            if not unit.within(x.height, x.width):
                raise UniverseError(f"unit {unit!r} outside image")
            rs, cs = unit.slices
            grid[rs, cs] = True
        else:
            r, c = unit
            if not (0 <= r < x.height and 0 <= c < x.width):
                raise UniverseError(f"unit pixel {unit!r} outside image")
            grid[r, c] = True
        feet[i] = grid.reshape(-1)
    return feet


def _labels_for_masksets(
    x: Image,
    classifier,
    color: tuple[float, ...],
    feet: np.ndarray,
    masked_rows: np.ndarray,
) -> np.ndarray:
    """Label of x with each row's units occluded; rows are (B, m) booleans."""
    col = np.asarray(color, dtype=np.float64).reshape(1, 1, 1, x.channels)
    out = np.empty(masked_rows.shape[0], dtype=np.int64)
    for start in range(0, masked_rows.shape[0], _CHUNK):
        rows = masked_rows[start : start + _CHUNK]
        footprint = (rows.astype(np.uint8) @ feet.astype(np.uint8)) > 0
        footprint = footprint.reshape(-1, x.height, x.width)
        batch = np.where(footprint[:, :, :, None], col, x.data[None])
        out[start : start + _CHUNK] = classifier.labels(batch)
    return out


class TruthTable:
    """Full pass/fail table over all 2^m maskings of the universe."""

    def __init__(self, x: Image, classifier, color: tuple[float, ...], universe: Sequence):
        m = len(universe)
        if m > MAX_FULL_UNIVERSE:
            raise UniverseError(f"universe of {m} units exceeds {MAX_FULL_UNIVERSE}")
        if m == 0:
            raise UniverseError("empty universe")
        self.universe = tuple(universe)
        self.m = m
        feet = _footprints(x, self.universe)
        self.original_label = int(classifier.labels(x.data[None])[0])
        bitmasks = np.arange(2**m, dtype=np.uint32)
        masked_rows = (bitmasks[:, None] >> np.arange(m)[None, :]) & 1
        labels = _labels_for_masksets(x, classifier, color, feet, masked_rows.astype(bool))
        self.passes = labels == self.original_label
        # all_subsets_pass[W]: every subset of W (including W) passes.
        good = self.passes.copy()
        idx = np.arange(2**m)
        for i in range(m):
            with_i = (idx >> i) & 1 == 1
            good[with_i] &= good[idx[with_i] ^ (1 << i)]
        self.all_subsets_pass = good

    def _unit_bit(self, unit) -> int:
        try:
            return self.universe.index(unit)
        except ValueError:
            raise UniverseError(f"unit {unit!r} not in universe") from None

    def witness_sizes(self, unit) -> np.ndarray:
        """Sizes |W| of every valid witness set for ``unit``."""
        bit = 1 << self._unit_bit(unit)
        idx = np.arange(2**self.m)
        without = (idx & bit) == 0
        candidates = idx[without & self.all_subsets_pass & ~self.passes[idx | bit]]
        return np.array([int(w).bit_count() for w in candidates], dtype=np.int64)

    def cause(self, unit) -> bool:
        return self.witness_sizes(unit).size > 0

    def responsibility(self, unit) -> float:
        sizes = self.witness_sizes(unit)
        if sizes.size == 0:
            return 0.0
        return 1.0 / (int(sizes.min()) + 1)

    def min_explanations(self) -> list[frozenset]:
        full = 2**self.m - 1
        idx = np.arange(2**self.m)
        sizes = np.array([int(v).bit_count() for v in idx])
        sufficient = self.passes[full ^ idx]  # mask everything outside S
        best = None
        out: list[frozenset] = []
        for k in range(self.m + 1):
            hits = idx[(sizes == k) & sufficient]
            if hits.size:
                best = k
                for s in hits:
                    out.append(
                        frozenset(self.universe[i] for i in range(self.m) if s >> i & 1)
                    )
                break
        if best is None:
            return []
        return out


def truth_table(x: Image, classifier, color: tuple[float, ...], universe: Sequence) -> TruthTable:
    return TruthTable(x, classifier, color, universe)


def exact_cause(
    x: Image, unit, classifier, color: tuple[float, ...], universe: Sequence, table: TruthTable | None = None
) -> bool:
    table = table or truth_table(x, classifier, color, universe)
    return table.cause(unit)


def exact_responsibility(
    x: Image, unit, classifier, color: tuple[float, ...], universe: Sequence, table: TruthTable | None = None
) -> float:
    table = table or truth_table(x, classifier, color, universe)
    return table.responsibility(unit)


def exact_min_explanation(
    x: Image,
    classifier,
    color: tuple[float, ...],
    universe: Sequence,
    max_size: int | None = None,
    table: TruthTable | None = None,
) -> list[frozenset]:
    """All minimum-cardinality sufficient subsets of the universe.

    With ``max_size`` set, subsets are enumerated in ascending size up to the
    cap without building the full table, which keeps large universes (e.g.
    all pixels of an image) tractable when the minimum is known to be small.
    Returns [] if nothing within reach is sufficient.
    """
    if table is not None or max_size is None:
        table = table or truth_table(x, classifier, color, universe)
        return table.min_explanations()

    universe = tuple(universe)
    m = len(universe)
    feet = _footprints(x, universe)
    original = int(classifier.labels(x.data[None])[0])
    for k in range(0, min(max_size, m) + 1):
        combos = list(combinations(range(m), k))
        keep = np.zeros((len(combos), m), dtype=bool)
        for row, combo in enumerate(combos):
            keep[row, list(combo)] = True
        labels = _labels_for_masksets(x, classifier, color, feet, ~keep)
        hits = np.nonzero(labels == original)[0]
        if hits.size:
            return [frozenset(universe[i] for i in combos[h]) for h in hits]
    return []
