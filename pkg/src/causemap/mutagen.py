"""Partition sampling and occlusion-mutant construction.

A refinement step splits the current region into four quadrants at a
uniformly random interior point and builds the 14 occlusion variants that
mask every proper non-empty subset of the quadrants.  The empty subset is
the configuration whose classification the caller already knows from the
parent step, and the all-masked subset is not enumerated (it is consulted
lazily through the oracle cache when a witness check needs it).
"""

from __future__ import annotations

import numpy as np

from causemap.core import Image, MutantSpec, Partition, Region, RegionError

__all__ = [
    "RegionTooSmallError",
    "apply_pixel_mask",
    "enumerate_mutants",
    "materialize",
    "sample_partition",
]


class RegionTooSmallError(RegionError):
    """The region has no interior split point; it cannot be partitioned."""


def sample_partition(region: Region, rng: np.random.Generator) -> Partition:
    """Draw a uniform interior split of ``region``.

    Consumes exactly two generator values (one per axis) so that run
    reproducibility survives any reordering of unrelated draws.  Degenerate
    quadrants are impossible by construction: both offsets are interior.
    """
    if region.height < 2 or region.width < 2:
        raise RegionTooSmallError(f"cannot split {region!r}")
    split_row = int(rng.integers(1, region.height))
    split_col = int(rng.integers(1, region.width))
    return Partition(region, split_row, split_col)


def enumerate_mutants(
    p: Partition,
    background: frozenset[Region] = frozenset(),
) -> tuple[MutantSpec, ...]:
    """The 14 occlusion variants of ``p`` in ascending bit-pattern order.

    Bit i of the pattern masks child i (TL=0, TR=1, BL=2, BR=3), so the
    first spec masks exactly {0} and the last masks {1, 2, 3}.
    """
    specs = []
    for bits in range(1, 15):  # proper non-empty subsets of the 4 children
        masked = frozenset(i for i in range(4) if bits >> i & 1)
        specs.append(MutantSpec(p, masked, background=background))
    return tuple(specs)


def _color_array(color: tuple[float, ...], channels: int) -> np.ndarray:
    arr = np.asarray(color, dtype=np.float64)
    if arr.size != channels:
        raise RegionError(f"mask color has {arr.size} components for {channels} channels")
    return arr.reshape(1, 1, channels)


def materialize(x: Image, m: MutantSpec, color: tuple[float, ...]) -> Image:
    """Apply a mutant spec to an image.

    Pixels of masked children and of every background region are set to
    ``color``; held children and everything else keep their original values.
    Masking is idempotent, so re-materializing changes nothing.
    """
    data = x.data.copy()
    col = _color_array(color, x.channels)
    for region in m.mask_regions():
        if not region.within(x.height, x.width):
            raise RegionError(f"mask region {region!r} outside image {x.height}x{x.width}")
        rs, cs = region.slices
        data[rs, cs, :] = col
    data.flags.writeable = False
    return Image(x.height, x.width, x.channels, data)


def apply_pixel_mask(x: Image, keep: np.ndarray, color: tuple[float, ...]) -> np.ndarray:
    """Image array with every pixel outside the boolean ``keep`` mask occluded."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (x.height, x.width):
        raise RegionError(f"keep mask shape {keep.shape} does not match image")
    col = _color_array(color, x.channels)
    return np.where(keep[:, :, None], x.data, col)
