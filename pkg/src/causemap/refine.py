"""Recursive refinement of superpixel responsibility.

One run starts from a random partition of the whole image and walks a work
queue of passing scopes: region sets whose surrounding occlusion keeps the
classifier's label.  Each step splits one scope member into four children,
scores them, and either records the member as terminal or defers passing
child combinations for further splitting.  The queue is pruned to
``cfg.queue_len`` entries ordered by scope area, so the default setting
chases the smallest passing combination all the way down; everything pruned
away still lands in the table with its last known responsibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from causemap.core import Config, Image, Region, resolve_mask_color
from causemap.mutagen import sample_partition
from causemap.oracle import OracleInterrupted, OracleSession
from causemap.responsibility import PartitionResponsibility, superpixel_responsibility

__all__ = ["RunTable", "WorkItem", "refinable", "refine_run", "refine_split_scope"]


@dataclass(frozen=True)
class WorkItem:
    """A passing combination deferred for further refinement.

    ``member_resp`` carries the responsibility each scope member earned at
    the evaluation that produced it; that value is what gets recorded if the
    member turns out to be terminal or the item is pruned.  ``seq`` is the
    global discovery index, used to break area ties deterministically.
    """

    scope: tuple[Region, ...]
    member_resp: tuple[float, ...]
    background: frozenset[Region]
    depth: int
    seq: int

    def __post_init__(self) -> None:
        if not self.scope or len(self.scope) != len(self.member_resp):
            raise ValueError("scope and member_resp must be non-empty and aligned")

    @property
    def scope_area(self) -> int:
        return sum(r.area for r in self.scope)

    def sort_key(self) -> tuple[int, int]:
        return (self.scope_area, self.seq)


@dataclass
class RunTable:
    """Terminal region scores from one initial-partition run.

    Entries are the leaves of the refinement forest (including pruned and
    interrupted branches); they are pairwise disjoint and never include the
    full image rectangle, so a run that terminates at the root contributes
    nothing to the averaged map.
    """

    entries: dict[Region, float] = field(default_factory=dict)
    partitions_evaluated: int = 0
    interrupted: OracleInterrupted | None = None


def refinable(region: Region, cfg: Config) -> bool:
    """True when a 4-way split of ``region`` can respect the size floor.

    Any split of a region with fewer than 4 * min_superpixel_px pixels must
    produce an undersized child, so such regions are terminal outright.
    """
    if region.height < 2 or region.width < 2:
        return False
    return region.area >= 4 * cfg.min_superpixel_px


def refine_split_scope(
    scope: tuple[Region, ...],
) -> list[tuple[Region, tuple[Region, ...]]]:
    """Rotation plan for a scope: (member to refine, members held intact).

    Held members are never masked and never rescored while their sibling is
    being refined; with four superpixels a subcall holds at most three.
    """
    return [
        (member, tuple(other for other in scope if other != member))
        for member in scope
    ]


def _select_combos(
    scores: PartitionResponsibility, children: tuple[Region, ...]
) -> list[tuple[int, ...]]:
    # candidates are the intact complements of passing masked subsets that
    # still contain a responsible child; "area" strategy prefers the
    # smallest, ties break by discovery (ascending mask bit-pattern), and a
    # greedy non-overlap pass keeps each child in at most one deferral
    candidates = []
    for disc, masked in enumerate(scores.passing_sets):
        combo = tuple(i for i in range(4) if i not in masked)
        if not any(scores.values[i] > 0 for i in combo):
            continue
        area = sum(children[i].area for i in combo)
        candidates.append((area, disc, combo))
    candidates.sort(key=lambda t: (t[0], t[1]))
    chosen: list[tuple[int, ...]] = []
    used: set[int] = set()
    for _, _, combo in candidates:
        if used.isdisjoint(combo):
            chosen.append(combo)
            used.update(combo)
    return chosen


def refine_run(
    x: Image,
    oracle: OracleSession,
    cfg: Config,
    rng: np.random.Generator,
    trace: Callable[[str], None] | None = None,
) -> RunTable:
    """Run one full refinement from a fresh root partition.

    Budget exhaustion and transport failures do not raise: pending work is
    flushed at its last known responsibility and the partial table comes
    back with ``interrupted`` set.
    """
    color = resolve_mask_color(cfg.mask_color, x.channels)
    root = x.rect
    table = RunTable()

    def record(region: Region, value: float) -> None:
        if region != root:
            table.entries[region] = value

    def flush(items: list[WorkItem]) -> None:
        for item in items:
            for member, value in zip(item.scope, item.member_resp):
                record(member, value)

    seq = 0
    queue: list[WorkItem] = [WorkItem((root,), (0.0,), frozenset(), 0, seq)]
    while queue:
        item = queue.pop(0)
        spawned: list[WorkItem] = []
        plan = refine_split_scope(item.scope)
        for pos, (member, _held) in enumerate(plan):
            if not refinable(member, cfg):
                record(member, item.member_resp[pos])
                continue
            partition = sample_partition(member, rng)
            try:
                scores = superpixel_responsibility(
                    x, partition, item.background, oracle, color
                )
            except OracleInterrupted as stop:
                record(member, item.member_resp[pos])
                for later, value in zip(
                    item.scope[pos + 1 :], item.member_resp[pos + 1 :]
                ):
                    record(later, value)
                flush(spawned)
                flush(queue)
                table.interrupted = stop
                return table
            table.partitions_evaluated += 1
            children = partition.children
            if scores.equal_everywhere() or not scores.passing_sets:
                record(member, item.member_resp[pos])
                if trace is not None:
                    trace(
                        f"depth={item.depth} scope_area={item.scope_area} "
                        f"passing_subsets={len(scores.passing_sets)} chosen=-"
                    )
                continue
            chosen = _select_combos(scores, children)
            deferred = {i for combo in chosen for i in combo}
            for i in range(4):
                if i not in deferred:
                    record(children[i], scores.values[i])
            for combo in chosen:
                masked = frozenset(children[i] for i in range(4) if i not in combo)
                seq += 1
                spawned.append(
                    WorkItem(
                        scope=tuple(children[i] for i in combo),
                        member_resp=tuple(scores.values[i] for i in combo),
                        background=item.background | masked,
                        depth=item.depth + 1,
                        seq=seq,
                    )
                )
            if trace is not None:
                shown = ";".join("".join(map(str, c)) for c in chosen) or "-"
                trace(
                    f"depth={item.depth} scope_area={item.scope_area} "
                    f"passing_subsets={len(scores.passing_sets)} chosen={shown}"
                )
        queue = sorted(queue + spawned, key=WorkItem.sort_key)
        flush(queue[cfg.queue_len :])
        queue = queue[: cfg.queue_len]
    return table
