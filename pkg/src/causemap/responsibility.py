"""Per-child responsibility of one partition step.

Given a passing scope (the image with the current background occluded still
classifies as the original label), each quadrant j of the partition is scored
against the occlusion mutants:

    k_j = min |masked(x_m)| over mutants x_m such that
          (a) j is not masked in x_m,
          (b) x_m classifies as the original label, and
          (c) x_m with j masked on top does not,

    r_j = 1 / (k_j + 1), or 0.0 when no such mutant exists.

The scope's own configuration (empty mask) counts as a candidate with
diff 0, which is how r = 1 arises when masking j alone flips the label.
Condition (c) for a mutant that already masks the other three children needs
the fully-masked scope; that classification is resolved through the session
cache, where the surrounding refinement context has usually already paid for
it, so a partition evaluation costs at most 15 model calls.
"""

from __future__ import annotations

from dataclasses import dataclass

from causemap.core import Image, Partition, Region
from causemap.mutagen import enumerate_mutants
from causemap.oracle import OracleSession

__all__ = [
    "PartitionResponsibility",
    "ScopeNotPassingError",
    "superpixel_responsibility",
]

# candidate mask subsets per child, ordered by size then bit pattern
_CANDIDATES: dict[int, tuple[int, ...]] = {
    j: tuple(
        sorted(
            (m for m in range(15) if not m >> j & 1),
            key=lambda m: (m.bit_count(), m),
        )
    )
    for j in range(4)
}


class ScopeNotPassingError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionResponsibility:
    """Scores for the four children plus which maskings kept the label."""

    values: tuple[float, float, float, float]
    passing_sets: tuple[frozenset[int], ...]

    def equal_everywhere(self) -> bool:
        return len(set(self.values)) == 1


def superpixel_responsibility(
    x: Image,
    p: Partition,
    background: frozenset[Region],
    oracle: OracleSession,
    color: tuple[float, ...],
) -> PartitionResponsibility:
    """Score every child of ``p`` inside the given occlusion context."""
    original = oracle.classify_masked_regions(x, frozenset(), color).label
    scope_cls = oracle.classify_masked_regions(x, background, color)
    if scope_cls.label != original:
        raise ScopeNotPassingError(
            f"scope with background masked classifies {scope_cls.label}, "
            f"expected {original}"
        )

    specs = enumerate_mutants(p, background)
    answers = oracle.classify_mutants(x, list(specs), color)
    labels: dict[int, int] = {0: original}
    for spec, ans in zip(specs, answers):
        labels[sum(1 << i for i in spec.masked)] = ans.label

    def label_of(bits: int) -> int:
        if bits not in labels:
            # the all-masked scope: background plus every child occluded
            regions = background | frozenset(p.children)
            labels[bits] = oracle.classify_masked_regions(x, regions, color).label
        return labels[bits]

    values = []
    for j in range(4):
        r = 0.0
        for m in _CANDIDATES[j]:
            if labels[m] == original and label_of(m | 1 << j) != original:
                r = 1.0 / (m.bit_count() + 1)
                break
        values.append(r)

    passing = tuple(
        frozenset(i for i in range(4) if m >> i & 1)
        for m in range(1, 15)
        if labels[m] == original
    )
    return PartitionResponsibility(tuple(values), passing)
