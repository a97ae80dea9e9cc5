"""Evaluation measures for rankings and explanations.

Insertion starts from a fully occluded image and reveals ranked pixels in
equal batches; deletion starts from the intact image and occludes them.
Both record the classifier's confidence in the original label along the
way and summarize the curve with a trapezoid AUC, optionally normalized by
the confidence on the untouched image.  Batch boundaries are mirrored
around the halfway step so that inserting a ranking and deleting its
reversal probe exactly the same keep-sets.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from causemap.core import Config, Explanation, FormatError, Image, resolve_mask_color
from causemap.mutagen import apply_pixel_mask
from causemap.oracle import OracleSession

__all__ = [
    "CSV_FIELDS",
    "CurveResult",
    "GroundTruthMask",
    "csv_header",
    "csv_row",
    "deletion_curve",
    "explanation_area",
    "insertion_curve",
    "overlap",
]


@dataclass(frozen=True)
class GroundTruthMask:
    """Reference pixel set: a segmentation or a planted occlusion."""

    kind: str
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in ("segmentation", "occlusion"):
            raise FormatError(f"unknown ground-truth kind {self.kind!r}")
        if self.pixels.dtype != np.bool_ or self.pixels.ndim != 2:
            raise FormatError("ground-truth pixels must be a 2d boolean grid")


@dataclass
class CurveResult:
    """One confidence curve and its areas.

    ``graded`` is False when the oracle returned hard labels only, making
    the curve a step function.  ``normalized_auc`` is None when the model
    had zero confidence in the original label on the intact image, in which
    case normalization is skipped rather than divided by zero.
    """

    points: list[tuple[float, float]]
    auc: float
    normalized_auc: float | None
    graded: bool

    @property
    def normalized(self) -> bool:
        return self.normalized_auc is not None


def explanation_area(e: Explanation, height: int, width: int) -> float:
    """Explanation size as a fraction of the image."""
    return e.size / float(height * width)


def _batch_counts(n: int, steps: int) -> list[int]:
    # cumulative pixel counts per step, mirrored around the midpoint so
    # count[i] + count[steps - i] == n exactly despite rounding
    counts = []
    for i in range(steps + 1):
        if 2 * i <= steps:
            counts.append(round(i * n / steps))
        else:
            counts.append(n - round((steps - i) * n / steps))
    return counts


def _check_ranking(ranking: Sequence[tuple[int, int]], height: int, width: int) -> None:
    if len(ranking) != height * width or len(set(ranking)) != len(ranking):
        raise FormatError("ranking must cover every pixel exactly once")


def _curve(
    x: Image,
    keep_sets: list[Sequence[tuple[int, int]]],
    oracle: OracleSession,
    color: tuple[float, ...],
    steps: int,
) -> tuple[list[tuple[float, float]], float, bool, float]:
    base = oracle.classify_masked_regions(x, frozenset(), color)
    original = base.label
    arrays = []
    for kept in keep_sets:
        keep = np.zeros((x.height, x.width), dtype=bool)
        for r, c in kept:
            keep[r, c] = True
        arrays.append(apply_pixel_mask(x, keep, color))
    answers = oracle.classify_arrays(arrays)
    # hard-label answers carry no mass for a losing label: score 0
    scores = [ans.score_for(original) or 0.0 for ans in answers]
    graded = any(ans.full_scores is not None for ans in answers)
    points = [(i / steps, scores[i]) for i in range(steps + 1)]
    auc = float(np.trapezoid(scores, dx=1.0 / steps))
    return points, auc, graded, base.score_for(original) or 0.0


def insertion_curve(
    x: Image,
    ranking: Sequence[tuple[int, int]],
    oracle: OracleSession,
    cfg: Config,
) -> CurveResult:
    """Reveal ranked pixels over an occluded image, best-ranked first."""
    _check_ranking(ranking, x.height, x.width)
    color = resolve_mask_color(cfg.mask_color, x.channels)
    steps = cfg.insertion_steps
    counts = _batch_counts(len(ranking), steps)
    keep_sets = [ranking[:k] for k in counts]
    points, auc, graded, initial = _curve(x, keep_sets, oracle, color, steps)
    normalized = auc / initial if initial > 0 else None
    return CurveResult(points, auc, normalized, graded)


def deletion_curve(
    x: Image,
    ranking: Sequence[tuple[int, int]],
    oracle: OracleSession,
    cfg: Config,
) -> CurveResult:
    """Occlude ranked pixels over the intact image, best-ranked first."""
    _check_ranking(ranking, x.height, x.width)
    color = resolve_mask_color(cfg.mask_color, x.channels)
    steps = cfg.insertion_steps
    counts = _batch_counts(len(ranking), steps)
    keep_sets = [ranking[k:] for k in counts]
    points, auc, graded, initial = _curve(x, keep_sets, oracle, color, steps)
    normalized = auc / initial if initial > 0 else None
    return CurveResult(points, auc, normalized, graded)


def overlap(e: Explanation, g: GroundTruthMask) -> tuple[float | None, float | None]:
    """(inside, outside) fractions of the explanation against the mask.

    An empty explanation has no defined ratio; both values come back None.
    """
    if e.size == 0:
        return (None, None)
    mask = e.to_mask(*g.pixels.shape)
    inside = float(np.sum(mask & g.pixels)) / e.size
    return (inside, 1.0 - inside)


CSV_FIELDS = ("image_id", "area", "ins_auc", "del_auc", "in", "out", "calls", "seconds")


def csv_header() -> str:
    return ",".join(CSV_FIELDS)


def csv_row(
    image_id: str,
    area: float,
    ins_auc: float | None,
    del_auc: float | None,
    inside: float | None,
    outside: float | None,
    calls: int,
    seconds: float,
) -> str:
    """One metrics line; floats keep full precision, absent values are empty."""

    def fmt(v) -> str:
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="")
    writer.writerow([fmt(v) for v in (image_id, area, ins_auc, del_auc, inside, outside, calls, seconds)])
    return buf.getvalue()
