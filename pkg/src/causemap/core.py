"""Core value types shared by the whole engine.

Images are dense float arrays in [0, 1], row-major, channel-interleaved.
Regions are axis-aligned rectangles in pixel coordinates; a partition splits
a region into four quadrants at an interior point.  A mutant spec names which
quadrants of the current partition are occluded, which are deliberately held
at their original values, and which outer regions are already occluded by the
surrounding refinement context.

Responsibility maps and explanations have small on-disk formats:

* REXMAP: text header ``REXMAP v1 <height> <width>`` followed by ``height``
  lines of ``width`` space-separated decimal values.
* RXM1: magic ``RXM1``, two 32-bit little-endian dims, 64-bit little-endian
  floats row-major.
* RXE1: magic ``RXE1``, two 32-bit little-endian dims, then a run-length
  encoding of the explanation mask (32-bit little-endian run count, then that
  many run lengths, alternating zero-run / one-run starting with zeros).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "CHILD_ORDER",
    "Config",
    "ConfigError",
    "Explanation",
    "FormatError",
    "Image",
    "ImageValidationError",
    "MutantSpec",
    "Partition",
    "Region",
    "RegionError",
    "ResponsibilityMap",
    "diff",
    "explanation_from_mask",
    "mask_to_rxe1",
    "resolve_mask_color",
    "rxe1_to_mask",
    "validate_image",
]

# Fixed child order for every partition: top-left, top-right, bottom-left,
# bottom-right.  Everything downstream (mutant bit patterns, responsibility
# vectors, rng reproducibility) relies on this order never changing.
CHILD_ORDER = ("TL", "TR", "BL", "BR")


class ImageValidationError(ValueError):
    pass


class RegionError(ValueError):
    pass


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(eq=False)
class Image:
    """A dense image: ``data`` has shape (height, width, channels), float64."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ImageValidationError(f"expected 2-d or 3-d array, got shape {a.shape}")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        img = cls(a.shape[0], a.shape[1], a.shape[2], a)
        validate_image(img)
        return img

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, flat: Sequence[float]) -> "Image":
        a = np.asarray(flat, dtype=np.float64)
        if a.size != height * width * channels:
            raise ImageValidationError(
                f"flat data has {a.size} values, expected {height * width * channels}"
            )
        return cls.from_array(a.reshape(height, width, channels))

    @property
    def flat(self) -> np.ndarray:
        """Row-major channel-interleaved view of the pixel data."""
        return self.data.reshape(-1)

    @property
    def rect(self) -> "Region":
        return Region(0, 0, self.height, self.width)


def validate_image(img: Image) -> None:
    """Raise ImageValidationError unless img is well formed.

    Checks the declared dims against the data, the channel count (1 or 3),
    and that every intensity is finite and inside [0, 1].
    """
    if img.channels not in (1, 3):
        raise ImageValidationError(f"channels must be 1 or 3, got {img.channels}")
    if img.data.shape != (img.height, img.width, img.channels):
        raise ImageValidationError(
            f"data shape {img.data.shape} does not match dims "
            f"({img.height}, {img.width}, {img.channels})"
        )
    if img.height < 1 or img.width < 1:
        raise ImageValidationError("image must have at least one pixel")
    if not np.all(np.isfinite(img.data)):
        raise ImageValidationError("image contains non-finite intensities")
    lo = float(img.data.min())
    hi = float(img.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ImageValidationError(f"intensities outside [0, 1]: min={lo}, max={hi}")


@dataclass(frozen=True, order=True)
class Region:
    """Axis-aligned rectangle: rows [top, top+height), cols [left, left+width)."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise RegionError(f"degenerate region {self!r}")
        if self.top < 0 or self.left < 0:
            raise RegionError(f"negative origin {self!r}")

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.top, self.top + self.height),
            slice(self.left, self.left + self.width),
        )

    def contains_pixel(self, row: int, col: int) -> bool:
        return (
            self.top <= row < self.top + self.height
            and self.left <= col < self.left + self.width
        )

    def contains_region(self, other: "Region") -> bool:
        return (
            self.top <= other.top
            and self.left <= other.left
            and other.top + other.height <= self.top + self.height
            and other.left + other.width <= self.left + self.width
        )

    def within(self, height: int, width: int) -> bool:
        return self.top + self.height <= height and self.left + self.width <= width

    def pixels(self) -> Iterator[tuple[int, int]]:
        for r in range(self.top, self.top + self.height):
            for c in range(self.left, self.left + self.width):
                yield (r, c)


@dataclass(frozen=True)
class Partition:
    """A 4-way split of ``parent`` at an interior point.

    ``split_row``/``split_col`` are offsets relative to the parent origin and
    must be interior (1 .. height-1 / width-1), so no quadrant is empty.
    """

    parent: Region
    split_row: int
    split_col: int

    def __post_init__(self) -> None:
        if not (1 <= self.split_row <= self.parent.height - 1):
            raise RegionError(
                f"split_row {self.split_row} not interior to height {self.parent.height}"
            )
        if not (1 <= self.split_col <= self.parent.width - 1):
            raise RegionError(
                f"split_col {self.split_col} not interior to width {self.parent.width}"
            )

    @property
    def children(self) -> tuple[Region, Region, Region, Region]:
        """Quadrants in fixed TL, TR, BL, BR order; they tile the parent."""
        p = self.parent
        sr, sc = self.split_row, self.split_col
        return (
            Region(p.top, p.left, sr, sc),
            Region(p.top, p.left + sc, sr, p.width - sc),
            Region(p.top + sr, p.left, p.height - sr, sc),
            Region(p.top + sr, p.left + sc, p.height - sr, p.width - sc),
        )


@dataclass(frozen=True)
class MutantSpec:
    """One occlusion variant of the current partition.

    ``masked`` holds child indices (0..3) occluded in this mutant, ``held``
    child indices pinned to their original values (never masked, never
    scored), and ``background`` outer regions that the surrounding context
    already occludes in every mutant of this partition.
    """

    partition: Partition
    masked: frozenset[int]
    held: frozenset[int] = frozenset()
    background: frozenset[Region] = frozenset()

    def __post_init__(self) -> None:
        if not self.masked <= {0, 1, 2, 3} or not self.held <= {0, 1, 2, 3}:
            raise RegionError("child indices must be in 0..3")
        if self.masked & self.held:
            raise RegionError(f"masked and held overlap: {sorted(self.masked & self.held)}")

    @property
    def diff(self) -> int:
        """Number of partition children this mutant occludes."""
        return len(self.masked)

    def mask_regions(self) -> tuple[Region, ...]:
        """Every region occluded in this mutant, canonically ordered."""
        children = self.partition.children
        own = [children[i] for i in sorted(self.masked)]
        return tuple(sorted(own + list(self.background)))


def diff(spec: MutantSpec) -> int:
    return spec.diff


def resolve_mask_color(color: tuple[float, ...] | None, channels: int) -> tuple[float, ...]:
    """Normalize a configured masking color against an image's channel count.

    None means all-zero.  A single component broadcasts to every channel.
    """
    if color is None:
        return (0.0,) * channels
    color = tuple(float(v) for v in color)
    if len(color) == 1 and channels != 1:
        color = color * channels
    if len(color) != channels:
        raise ConfigError(f"mask color has {len(color)} components for {channels} channels")
    for v in color:
        if not np.isfinite(v) or v < 0.0 or v > 1.0:
            raise ConfigError(f"mask color component {v} outside [0, 1]")
    return color


@dataclass
class Config:
    """Engine configuration.  Defaults follow the shipped tool's settings."""

    iterations: int = 20
    superpixels: int = 4  # children per partition; fixed in this version
    min_superpixel_px: int = 10
    mask_color: tuple[float, ...] | None = None
    seed: int = 0
    queue_strategy: str = "area"
    queue_len: int = 1
    call_budget: int = 100_000
    extraction_chunk: int = 1
    insertion_steps: int = 100
    distribution: str = "uniform"

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.superpixels != 4:
            raise ConfigError("only 4 superpixels per partition are supported")
        if self.min_superpixel_px < 1:
            raise ConfigError("min_superpixel_px must be >= 1")
        if self.queue_strategy != "area":
            raise ConfigError(f"unknown queue strategy {self.queue_strategy!r}")
        if self.queue_len < 1:
            raise ConfigError("queue_len must be >= 1")
        if self.call_budget < 1:
            raise ConfigError("call_budget must be >= 1")
        if self.extraction_chunk < 1:
            raise ConfigError("extraction_chunk must be >= 1")
        if self.insertion_steps < 1:
            raise ConfigError("insertion_steps must be >= 1")
        if self.distribution != "uniform":
            raise ConfigError(f"unknown partition distribution {self.distribution!r}")
        if self.mask_color is not None:
            self.mask_color = tuple(float(v) for v in self.mask_color)

    def to_json(self) -> str:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if out["mask_color"] is not None:
            out["mask_color"] = list(out["mask_color"])
        return json.dumps(out, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if raw.get("mask_color") is not None:
            raw["mask_color"] = tuple(raw["mask_color"])
        return cls(**raw)


@dataclass
class ResponsibilityMap:
    """Per-pixel accumulated responsibility.

    ``values`` holds the raw sum over completed runs; ``averaged()`` divides
    by ``iterations_done``.  Rankings are identical under either scaling.
    """

    height: int
    width: int
    values: np.ndarray
    iterations_done: int = 0

    @classmethod
    def zeros(cls, height: int, width: int) -> "ResponsibilityMap":
        return cls(height, width, np.zeros((height, width), dtype=np.float64), 0)

    def averaged(self) -> np.ndarray:
        if self.iterations_done <= 0:
            return self.values.copy()
        return self.values / float(self.iterations_done)

    def validate(self) -> None:
        if self.values.shape != (self.height, self.width):
            raise FormatError(
                f"map shape {self.values.shape} does not match dims "
                f"({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(self.values)):
            raise FormatError("map contains non-finite values")

    # -- text format ------------------------------------------------------

    def to_text(self) -> str:
        self.validate()
        lines = [f"REXMAP v1 {self.height} {self.width}"]
        for row in self.values:
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ResponsibilityMap":
        lines = text.splitlines()
        if not lines:
            raise FormatError("empty REXMAP file")
        head = lines[0].split()
        if len(head) != 4 or head[0] != "REXMAP" or head[1] != "v1":
            raise FormatError(f"bad REXMAP header: {lines[0]!r}")
        try:
            height, width = int(head[2]), int(head[3])
        except ValueError as exc:
            raise FormatError(f"bad REXMAP dims: {lines[0]!r}") from exc
        body = lines[1:]
        if len(body) != height:
            raise FormatError(f"expected {height} rows, found {len(body)}")
        values = np.empty((height, width), dtype=np.float64)
        for i, line in enumerate(body):
            parts = line.split()
            if len(parts) != width:
                raise FormatError(f"row {i} has {len(parts)} values, expected {width}")
            values[i] = [float(p) for p in parts]
        m = cls(height, width, values)
        m.validate()
        return m

    # -- binary format ----------------------------------------------------

    def to_binary(self) -> bytes:
        self.validate()
        head = b"RXM1" + struct.pack("<II", self.height, self.width)
        return head + self.values.astype("<f8").tobytes(order="C")

    @classmethod
    def from_binary(cls, blob: bytes) -> "ResponsibilityMap":
        if len(blob) < 12 or blob[:4] != b"RXM1":
            raise FormatError("bad RXM1 magic")
        height, width = struct.unpack("<II", blob[4:12])
        expected = 12 + height * width * 8
        if len(blob) != expected:
            raise FormatError(f"RXM1 payload is {len(blob)} bytes, expected {expected}")
        values = np.frombuffer(blob[12:], dtype="<f8").reshape(height, width).copy()
        m = cls(height, width, values)
        m.validate()
        return m


@dataclass(frozen=True)
class Explanation:
    """A set of pixels sufficient for the original classification.

    ``sufficient`` certifies that masking everything outside ``pixels``
    preserved the label when last queried.  ``degenerate_empty`` marks the
    case where even the fully masked image already classifies the same, so
    the empty set is returned.
    """

    pixels: frozenset[tuple[int, int]]
    label: int
    sufficient: bool
    degenerate_empty: bool = False

    @property
    def size(self) -> int:
        return len(self.pixels)

    def to_mask(self, height: int, width: int) -> np.ndarray:
        mask = np.zeros((height, width), dtype=bool)
        for r, c in self.pixels:
            if not (0 <= r < height and 0 <= c < width):
                raise FormatError(f"explanation pixel {(r, c)} outside {height}x{width}")
            mask[r, c] = True
        return mask


def mask_to_rxe1(mask: np.ndarray) -> bytes:
    """Run-length encode a boolean mask (see module docstring for layout)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise FormatError(f"mask must be 2-d, got shape {mask.shape}")
    height, width = mask.shape
    flat = mask.reshape(-1)
    runs: list[int] = []
    current = False  # runs alternate starting with zeros
    count = 0
    for v in flat:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current = not current
            count = 1
    runs.append(count)
    head = b"RXE1" + struct.pack("<II", height, width)
    return head + struct.pack("<I", len(runs)) + struct.pack(f"<{len(runs)}I", *runs)


def rxe1_to_mask(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != b"RXE1":
        raise FormatError("bad RXE1 magic")
    height, width = struct.unpack("<II", blob[4:12])
    (n_runs,) = struct.unpack("<I", blob[12:16])
    expected = 16 + 4 * n_runs
    if len(blob) != expected:
        raise FormatError(f"RXE1 payload is {len(blob)} bytes, expected {expected}")
    runs = struct.unpack(f"<{n_runs}I", blob[16:])
    if sum(runs) != height * width:
        raise FormatError("RXE1 run lengths do not cover the image")
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


def explanation_from_mask(mask: np.ndarray, label: int, sufficient: bool) -> Explanation:
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    pixels = frozenset((int(r), int(c)) for r, c in zip(rows, cols))
    return Explanation(pixels, label, sufficient, degenerate_empty=not pixels and sufficient)
