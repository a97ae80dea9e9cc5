"""Black-box causal responsibility maps for image classifiers."""

from causemap.bridge import connect
from causemap.core import (
    Config,
    Explanation,
    Image,
    MutantSpec,
    Partition,
    Region,
    ResponsibilityMap,
)
from causemap.extract import explain, rank_pixels
from causemap.metrics import deletion_curve, insertion_curve, overlap
from causemap.oracle import OracleSession, parse_builtin

__all__ = [
    "Config",
    "Explanation",
    "Image",
    "MutantSpec",
    "OracleSession",
    "Partition",
    "Region",
    "ResponsibilityMap",
    "connect",
    "deletion_curve",
    "explain",
    "insertion_curve",
    "overlap",
    "parse_builtin",
    "rank_pixels",
]

__version__ = "0.1.0"
