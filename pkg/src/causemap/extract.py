"""Pixel ranking and greedy sufficient-explanation extraction.

This module owns the back half of the pipeline: folding per-run region
tables into one pixel map, ranking pixels, growing the shortest ranked
prefix whose complement-masked image keeps the original label, and the
``explain`` driver that schedules the N refinement runs in front of it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from causemap.core import (
    Config,
    Explanation,
    Image,
    ResponsibilityMap,
    resolve_mask_color,
)
from causemap.mutagen import apply_pixel_mask
from causemap.oracle import (
    BudgetExhaustedError,
    Classification,
    OracleInterrupted,
    OracleSession,
)
from causemap.refine import RunTable, refine_run

__all__ = [
    "ExplainResult",
    "RankingExhaustedError",
    "accumulate",
    "explain",
    "extract_disjoint",
    "extract_explanation",
    "rank_pixels",
]


class RankingExhaustedError(RuntimeError):
    """Every ranked prefix failed, including the full image.

    With a deterministic classifier the full-image prefix reproduces the
    original classification by definition, so hitting this means the oracle
    answered inconsistently between calls.
    """


def accumulate(tables: Sequence[RunTable], height: int, width: int) -> ResponsibilityMap:
    """Fold run tables into a pixel map, spreading each region evenly.

    Tables are added in run order; every entry contributes value/area to
    each of its pixels, so the result is the raw sum over runs.
    """
    rmap = ResponsibilityMap.zeros(height, width)
    for table in tables:
        for region, value in table.entries.items():
            rs, cs = region.slices
            rmap.values[rs, cs] += value / region.area
    rmap.iterations_done = len(tables)
    rmap.validate()
    return rmap


def rank_pixels(rmap: ResponsibilityMap) -> list[tuple[int, int]]:
    """Pixels from high responsibility to low, ties in row-major order."""
    rmap.validate()
    flat = rmap.values.reshape(-1)
    order = np.argsort(-flat, kind="stable")
    width = rmap.width
    return [(int(i) // width, int(i) % width) for i in order]


def _prefix_passes(
    x: Image,
    ranking: Sequence[tuple[int, int]],
    count: int,
    oracle: OracleSession,
    color: tuple[float, ...],
    original: int,
) -> bool:
    keep = np.zeros((x.height, x.width), dtype=bool)
    for r, c in ranking[:count]:
        keep[r, c] = True
    masked = apply_pixel_mask(x, keep, color)
    return oracle.classify_arrays([masked])[0].label == original


def extract_explanation(
    x: Image,
    ranking: Sequence[tuple[int, int]],
    oracle: OracleSession,
    cfg: Config,
) -> Explanation:
    """Shortest passing prefix of the ranking, grown cfg.extraction_chunk
    pixels at a time.

    The fully masked image is probed first: if it already keeps the label
    the explanation is degenerate and empty.  With chunk > 1 the final
    block is narrowed by binary probing, re-testing sufficiency at every
    candidate cut, so the returned prefix always passes.
    """
    color = resolve_mask_color(cfg.mask_color, x.channels)
    original = oracle.classify_masked_regions(x, frozenset(), color).label
    if _prefix_passes(x, ranking, 0, oracle, color, original):
        return Explanation(frozenset(), original, sufficient=True, degenerate_empty=True)

    chunk = cfg.extraction_chunk
    total = len(ranking)
    passing = None
    count = 0
    while count < total:
        count = min(count + chunk, total)
        if _prefix_passes(x, ranking, count, oracle, color, original):
            passing = count
            break
    if passing is None:
        raise RankingExhaustedError(
            "no ranked prefix reproduces the original label; "
            "the oracle is answering non-deterministically"
        )

    lo = passing - min(chunk, passing)  # largest known-failing prefix
    hi = passing
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _prefix_passes(x, ranking, mid, oracle, color, original):
            hi = mid
        else:
            lo = mid
    pixels = frozenset(ranking[:hi])
    return Explanation(pixels, original, sufficient=True)


def extract_disjoint(
    x: Image,
    rmap: ResponsibilityMap,
    oracle: OracleSession,
    cfg: Config,
    max_k: int,
) -> list[Explanation]:
    """Repeatedly extract explanations over disjoint pixel sets.

    After each extraction its pixels leave the ranking, which masks them in
    every later probe.  Stops at max_k, at the first failed extraction, or
    when the budget runs out; whatever was found so far is returned.
    """
    ranking = rank_pixels(rmap)
    found: list[Explanation] = []
    while len(found) < max_k:
        try:
            expl = extract_explanation(x, ranking, oracle, cfg)
        except (RankingExhaustedError, BudgetExhaustedError):
            break
        found.append(expl)
        if expl.degenerate_empty:
            break
        ranking = [p for p in ranking if p not in expl.pixels]
        if not ranking:
            break
    return found


@dataclass
class ExplainResult:
    """Everything one engine invocation produced."""

    map: ResponsibilityMap
    explanation: Explanation | None
    original: Classification
    status: str  # "ok", "budget_exhausted", or "oracle_failed"
    run_tables: list[RunTable]
    session: OracleSession


def explain(
    x: Image,
    classifier,
    cfg: Config,
    jobs: int = 1,
    trace=None,
) -> ExplainResult:
    """Run the full pipeline: N seeded refinement runs, fold, extract.

    Each run draws from its own spawned child of the master seed, so the
    map is byte-identical for any ``jobs`` setting.  Budget exhaustion and
    oracle transport failures degrade to a partial result with ``status``
    set accordingly instead of raising.
    """
    session = classifier if isinstance(classifier, OracleSession) else OracleSession(
        classifier, budget=cfg.call_budget
    )
    color = resolve_mask_color(cfg.mask_color, x.channels)
    rmap = ResponsibilityMap.zeros(x.height, x.width)
    try:
        original = session.classify_image(x)
    except OracleInterrupted as stop:
        status = "budget_exhausted" if isinstance(stop, BudgetExhaustedError) else "oracle_failed"
        return ExplainResult(rmap, None, Classification(0, 0.0), status, [], session)
    session.seed_cache(frozenset(), color, original)

    rngs = [
        np.random.Generator(np.random.Philox(child))
        for child in np.random.SeedSequence(cfg.seed).spawn(cfg.iterations)
    ]

    def one_run(rng: np.random.Generator) -> RunTable:
        return refine_run(x, session, cfg, rng, trace=trace)

    if jobs <= 1:
        tables = [one_run(rng) for rng in rngs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            tables = list(pool.map(one_run, rngs))

    rmap = accumulate(tables, x.height, x.width)
    status = "ok"
    for table in tables:
        if table.interrupted is not None:
            status = (
                "budget_exhausted"
                if isinstance(table.interrupted, BudgetExhaustedError)
                else "oracle_failed"
            )
            break

    explanation = None
    if status == "ok":
        try:
            explanation = extract_explanation(x, rank_pixels(rmap), session, cfg)
        except BudgetExhaustedError:
            status = "budget_exhausted"
        except OracleInterrupted:
            status = "oracle_failed"
    return ExplainResult(rmap, explanation, original, status, tables, session)
